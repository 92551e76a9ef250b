import re
from dataclasses import replace

from hypothesis import given, settings, strategies as st

from intweave import compare as cmp
from intweave import cps
from intweave import labelling as lb
from intweave import source as src
from intweave.labelling import Leaf, LNat, LNeg, Plus
from intweave.source import Arrow, NAT_T, UNIT_T

from conftest import derive


def canon(text: str) -> str:
    """Rename labels by order of first appearance."""
    names: dict[str, str] = {}

    def sub(m):
        return names.setdefault(m.group(0), f"L{len(names)}")
    return re.sub(r"(?<![A-Za-z])[a-z][\w']*?\d+'*(?![\w])", sub, text)


def labelled(text: str):
    d = derive(text)
    return lb.annotate_cps_full(cps.cps_translate(d), lb.LabelPlan(d))


def test_interface_labelling_of_function_type():
    il = lb.make_interface_labelling(Arrow(NAT_T, NAT_T), lb.LabelSupply())
    assert len(il.neg) == 2 and len(il.pos) == 2
    assert canon(lb.show_ltype(il.ltype)) == canon("¬_{l1}(¬_{l5}¬_{l4}ℕ × ¬_{l6}ℕ)")


def test_interface_labelling_with_given_ports():
    ty = lb.labelled_type(Arrow(NAT_T, NAT_T), [Leaf("l1"), Leaf("l4")], [Leaf("l6"), Leaf("l5")])
    assert lb.show_ltype(ty) == "¬_{l1}(¬_{l5}¬_{l4}ℕ × ¬_{l6}ℕ)"


def test_interface_labelling_of_unit():
    ty = lb.labelled_type(UNIT_T, [Leaf("q")], [Leaf("a")])
    assert lb.show_ltype(ty) == "¬_{q}¬_{a}1"


def test_interface_labelling_of_higher_order_type():
    x = Arrow(Arrow(UNIT_T, UNIT_T), UNIT_T)
    il = lb.make_interface_labelling(x, lb.LabelSupply())
    assert len(il.neg) + len(il.pos) == 6
    assert lb.erase_ltype(il.ltype) == cps.lifted_type(x)


def test_increment_labelling():
    seq = labelled("fn x: Nat => 1 + x")
    assert canon(lb.show_ltype(seq.type)) == canon("¬_{l1}(¬_{l5}¬_{l4}ℕ × ¬_{l6}ℕ)")
    assert lb.check_well_labelled(seq)
    assert [lb.show_label(l) for l in seq.entries] == [lb.show_label(seq.type.label), lb.show_label(
        seq.type.dom.left.dom.label)]


def test_increment_interface_exits_are_return_and_argument_query():
    seq = labelled("fn x: Nat => 1 + x")
    ty = seq.type
    # exits: the answer label of the result continuation, then the query label of x
    assert [lb.show_label(l) for l in seq.exits] == [lb.show_label(ty.dom.right.label),
                                                   lb.show_label(ty.dom.left.label)]


def test_constant_labelling():
    seq = labelled("7")
    assert re.fullmatch(r"λ\^\{(\w+)\}(\w+)\. \2 @\^\{(\w+)\} 7", lb.show_labelled(seq.term))


def test_double_labelling_has_plus_at_shared_argument():
    seq = labelled("fn x: Nat => x + x")
    assert canon(lb.show_ltype(seq.type, "arrow")) == canon(
        "((ℕ →^{l2+l3} ⊥) →^{l4} ⊥) × (ℕ →^{l5} ⊥) →^{l1} ⊥")
    text = lb.show_labelled(seq.term)
    assert "coercl_" in text and "coercr_" in text
    assert lb.check_well_labelled(seq)


def test_duplicate_abstraction_label_is_rejected():
    seq = labelled("fn x: Nat => 1 + x")
    lam = seq.term
    inner = lam.body.body.fun  # the abstraction applied to the continuation

    def relabel(t):
        if t == inner:
            return replace(t, label=lam.label)
        if isinstance(t, lb.LLetPair):
            return replace(t, body=relabel(t.body))
        if isinstance(t, lb.LApp):
            return replace(t, fun=relabel(t.fun))
        return t
    bad = replace(seq, term=replace(lam, body=relabel(lam.body)))
    assert not lb.check_well_labelled(bad)


def test_eta_label_at_nat():
    sup = lb.LabelSupply(prefix="m")
    t1, t2, a1p, a2p, q1, q2 = lb.eta_label(NAT_T, [Leaf("q")], [Leaf("a1")], [Leaf("a2")], sup)
    assert re.fullmatch(r"λ\^\{m\d+\}(\w+)\. x @\^\{q\} coercl_\{m\d+\+m\d+\}\(λ\^\{m\d+\}(\w+)\. \1 @\^\{a1\} \2\)",
                        lb.show_labelled(t1))
    assert "coercr_" in lb.show_labelled(t2)
    shared = lb.labelled_type(NAT_T, [Leaf("q")], [Plus(a1p[0], a2p[0])])
    assert lb.ltype_of({"x": shared}, t1) == lb.labelled_type(NAT_T, q1, [Leaf("a1")])
    assert lb.ltype_of({"x": shared}, t2) == lb.labelled_type(NAT_T, q2, [Leaf("a2")])


def test_eta_label_at_function_type_typechecks():
    x = Arrow(NAT_T, NAT_T)
    sup = lb.LabelSupply(prefix="m")
    q = sup.many(lb.neg_count(x))
    a1, a2 = [Plus(Leaf("b1"), Leaf("b2"))] + sup.many(lb.pos_count(x) - 1), sup.many(lb.pos_count(x))
    t1, t2, a1p, a2p, q1, q2 = lb.eta_label(x, q, a1, a2, sup)
    shared = lb.labelled_type(x, q, [Plus(u, v) for u, v in zip(a1p, a2p)])
    assert lb.ltype_of({"x": shared}, t1) == lb.labelled_type(x, q1, a1)
    assert lb.ltype_of({"x": shared}, t2) == lb.labelled_type(x, q2, a2)


def test_kierstead_labelling_uses_coercions():
    seq = labelled("(fn g: (Nat -> Nat) -> Nat => g (fn x: Nat => g (fn y: Nat => x)))"
                   " (fn f: Nat -> Nat => f (f 3))")
    assert lb.check_well_labelled(seq)
    text = lb.show_labelled(seq.term)
    assert "coercl_" in text and "coercr_" in text


def test_lin_terms_use_single_labels_only():
    for text in ["fn x: Nat => 1 + x", "(fn x: Nat => 1 + x) 42", "fn f: Nat -> Nat => f 2"]:
        seq = lb.annotate_cps_single(cps.cps_translate(derive(text)))
        assert all(isinstance(t.label, Leaf) for t in lb.walk_terms(seq.term) if isinstance(t, lb.LApp))
        assert not any(isinstance(t, (lb.Coercl, lb.Coercr)) for t in lb.walk_terms(seq.term))


def test_labelling_properties_over_corpus(stl_corpus, named):
    for t in [i.term for i in stl_corpus] + list(named.values()):
        d = src.typecheck_stl(t)
        c = cps.cps_translate(d)
        sup = lb.LabelSupply()
        seq = lb.annotate_cps_full(c, lb.LabelPlan(d, sup))
        assert lb.check_well_labelled(seq)
        # erasing labels and coercions gives back the CPS term
        assert src.alpha_equiv(lb.erase_labels(seq.term), c.term)
        # every abstraction label comes from the supply
        assert set(seq.abstraction_labels()) <= set(sup.drawn)
        assert len(sup.drawn) == len(set(sup.drawn))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_labelling_is_deterministic(seed):
    t = cmp.generate_corpus(seed, 1, 10)[0].term
    assert lb.show_labelled(labelled(src.pretty(t)).term) == lb.show_labelled(labelled(src.pretty(t)).term)
