from intweave import cps
from intweave import source as src
from intweave.source import Arrow, NAT_T, UNIT_T

from conftest import derive


def show(x):
    return src.show_cps_type(x)


def test_cps_type_examples():
    assert show(cps.cps_type(Arrow(NAT_T, NAT_T)).lifted) == "¬(¬¬ℕ × ¬ℕ)"
    assert show(cps.cps_type(UNIT_T).lifted) == "¬¬1"
    assert show(cps.cps_type(Arrow(Arrow(NAT_T, NAT_T), NAT_T)).lifted) == "¬(¬(¬¬ℕ × ¬ℕ) × ¬ℕ)"
    assert show(cps.cps_type(NAT_T).continuation) == "¬ℕ"


def test_eta_of_double_negation():
    t = cps.eta_expand(src.Var("x"), cps.lifted_type(NAT_T), cps.NameSupply({"x"}))
    assert src.show_cps(t) == "λx1. x (λx2. x1 x2)"


def test_eta_at_base_type_is_identity():
    assert cps.eta_expand(src.Var("t"), NAT_T) == src.Var("t")
    assert cps.eta_expand(src.Var("t"), src.BOT) == src.Var("t")


def test_eta_of_product_continuation():
    t = cps.eta_expand(src.Var("x"), src.neg(src.ProdT(NAT_T, NAT_T)), cps.NameSupply({"x"}))
    assert src.show_cps(t) == "λx1. x (let x1 be <a1, b1> in <a1, b1>)"


def test_numeral_and_unit():
    assert src.show_cps(cps.cps_translate(derive("3")).term) == "λk1. k1 3"
    assert src.show_cps(cps.cps_translate(derive("()")).term) == "λk1. k1 *"


def test_increment_image_shape():
    c = cps.cps_translate(derive("fn x: Nat => 1 + x"))
    assert src.show_cps(c.term) == (
        "λp1. let p1 be <x, k3> in (λk2. (λk1. k1 1) (λm1. (λx1. x (λx2. x1 x2)) (λn1. k2 (m1 + n1)))) k3")
    assert show(c.type) == "¬(¬¬ℕ × ¬ℕ)"


def test_contraction_substitutes_two_eta_copies():
    c = cps.cps_translate(derive("fn x: Nat => x + x"))
    text = src.show_cps(c.term)
    assert text.count("x (λ") == 2


def test_cps_images_revalidate(stl_corpus, named):
    for t in [i.term for i in stl_corpus] + list(named.values()):
        d = src.typecheck_stl(t)
        c = cps.cps_translate(d)
        cps.validate_cps(c)
        assert c.type == cps.lifted_type(d.type)
        assert [x.type for x in c.ctx] == [cps.lifted_type(x.type) for x in d.ctx]


def test_translation_is_deterministic(named):
    d = src.typecheck_stl(named["kierstead"])
    assert src.show_cps(cps.cps_translate(d).term) == src.show_cps(cps.cps_translate(d).term)


def test_open_terms_translate_with_lifted_context():
    d = derive("f 1", [("f", Arrow(NAT_T, NAT_T))])
    c = cps.cps_translate(d)
    assert show(c.ctx[0].type) == "¬(¬¬ℕ × ¬ℕ)"
