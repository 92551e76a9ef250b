import pytest
from hypothesis import given, settings, strategies as st

from intweave import compare as cmp
from intweave import source as src
from intweave import target as tg
from intweave.source import Add, App, Arrow, Fix, Lam, NAT_T, Num, UNIT_T, Var

from conftest import derive


def test_parse_lambda():
    t = src.parse_source("fn x: Nat => 1 + x")
    assert t == Lam("x", NAT_T, Add(Num(1), Var("x")))


def test_parse_fix_needs_type_argument():
    t = src.parse_source("fix[Nat -> Nat] (fn f: Nat -> Nat => f)")
    assert t == App(Fix(Arrow(NAT_T, NAT_T)), Lam("f", Arrow(NAT_T, NAT_T), Var("f")))
    with pytest.raises(src.ParseError):
        src.parse_source("fix (fn f: Nat -> Nat => f)")


def test_parse_is_type_agnostic():
    t = src.parse_source("fn x: Nat => x x")
    assert isinstance(t.body, App)
    with pytest.raises(src.TypeCheckError):
        src.typecheck_stl(t)


def test_parse_errors_carry_position_and_reject_reserved_words():
    with pytest.raises(src.ParseError, match="1:16"):
        src.parse_source("fn x: Nat => (x")
    with pytest.raises(src.ParseError, match="reserved"):
        src.parse_source("fn fix: Nat => 1")


def test_application_binds_tighter_than_addition():
    t = src.parse_source("f 1 + g 2")
    assert isinstance(t, Add) and isinstance(t.left, App) and isinstance(t.right, App)


def test_binder_indices_follow_source_order():
    t = src.parse_source("fn x: Nat => fn y: Nat => x")
    assert t.index < t.body.index


def test_typecheck_increment_ends_in_abstraction_over_addition():
    d = derive("fn x: Nat => 1 + x")
    assert d.rule == "→i" and d.premises[0].rule == "add"
    assert d.type == Arrow(NAT_T, NAT_T)


def test_typecheck_variable_is_an_axiom():
    d = derive("x", [("x", NAT_T)])
    assert d.rule == "ax" and d.type == NAT_T


def test_typecheck_double_uses_one_contraction():
    d = derive("fn x: Nat => x + x")
    assert [n.rule for n in d.walk()].count("contr") == 1
    assert d.fragment == "stl"


def test_fragments_are_the_smallest_needed():
    assert derive("fn x: Unit => x").fragment == "core"
    assert derive("fn x: Nat => 1 + x").fragment == "lin"
    assert derive("fn x: Nat => x + x").fragment == "stl"
    assert derive("fix[Nat] (fn x: Nat => 1)").fragment == "source"


def test_fragment_restriction_is_enforced():
    with pytest.raises(src.TypeCheckError):
        src.typecheck_stl(src.parse_source("1"), fragment="core")


def test_typecheck_errors():
    with pytest.raises(src.TypeCheckError, match="unbound"):
        derive("y")
    with pytest.raises(src.TypeCheckError):
        derive("1 + (fn x: Nat => x)")
    with pytest.raises(src.TypeCheckError):
        src.typecheck_stl(src.parse_source("1"), expected=UNIT_T)


def test_derivations_revalidate(stl_corpus):
    for item in stl_corpus:
        src.validate_derivation(src.typecheck_stl(item.term))


def test_infer_addition_scales_second_summand_by_nat():
    e = src.infer_subexp(derive("fn x: Nat => fn y: Nat => x + y"))
    assert src.show_subexp(e.type, simplify=True) == "unit·N ⊸ nat·N ⊸ N"


def test_infer_closed_numeral_has_no_annotations():
    e = src.infer_subexp(derive("5"))
    assert e.type == src.EXP_NAT and src.subexp_annotations(e) == []


def test_infer_double_gets_a_sum_annotation():
    e = src.infer_subexp(derive("fn x: Nat => x + x"))
    assert src.show_subexp(e.type, simplify=True) == "(unit + nat)·N ⊸ N"


def test_infer_kierstead_term_alone():
    # the annotation of g's argument is left free and defaults to unit
    e = src.infer_subexp(derive("fn g: (Nat -> Nat) -> Nat => g (fn x: Nat => g (fn y: Nat => x))"))
    assert src.show_subexp(e.type, simplify=True) == "(unit + unit)·(unit·(unit·N ⊸ N) ⊸ N) ⊸ N"


def test_infer_erases_to_input_sequent(stl_corpus):
    for item in stl_corpus:
        d = src.typecheck_stl(item.term)
        e = src.infer_subexp(d)
        assert src.erase_type(e.type) == d.type
        assert [c.name for c in e.ctx] == [c.name for c in d.ctx]


def test_infer_struct_witnesses_are_retractions(stl_corpus):
    for item in stl_corpus[:80]:
        e = src.infer_subexp(src.typecheck_stl(item.term))
        for n in e.walk():
            if n.rule == "struct":
                w = n.side["witness"]
                values = tg.enumerate_values(w.source, max_nat=2, mu_depth=2, limit=30)
                assert tg.retraction_check(w, values)


def test_reference_eval_examples(named):
    assert src.reference_eval(src.parse_source("(fn x: Nat => 1 + x) 42")) == 43
    assert src.reference_eval(src.parse_source("(fn x: Nat => x + x) 42")) == 84
    assert src.reference_eval(named["factorial-5"]) == 120


def test_reference_eval_if_zero_takes_then_branch():
    assert src.reference_eval(src.parse_source("if 0 then 1 else 2")) == 1
    assert src.reference_eval(src.parse_source("if 3 then 1 else 2")) == 2


def test_reference_eval_is_call_by_name():
    # the diverging argument is never needed
    t = src.parse_source("(fn x: Nat => 7) (fix[Nat] (fn y: Nat => y))")
    assert src.reference_eval(t) == 7


def test_reference_eval_reports_divergence():
    with pytest.raises(src.Diverged):
        src.reference_eval(src.parse_source("fix[Nat] (fn y: Nat => y + 1)"), fuel=1000)


def test_pretty_examples():
    assert src.pretty(src.parse_source("(fn x: Nat => 1 + x) 42")) == "(fn x: Nat => 1 + x) 42"


@st.composite
def generated_terms(draw):
    seed = draw(st.integers(0, 10**6))
    return cmp.generate_corpus(seed, 1, 12)[0].term


@settings(max_examples=150, deadline=None)
@given(generated_terms())
def test_pretty_parse_round_trip(t):
    assert src.alpha_equiv(src.parse_source(src.pretty(t)), t)


@settings(max_examples=60, deadline=None)
@given(generated_terms())
def test_typecheck_agrees_with_synthesis(t):
    d = src.typecheck_stl(t)
    assert d.type == src.synth_type({}, t)
    src.validate_derivation(d)


def test_solve_recursive_system_closes_cycles():
    a, b = tg.TyVar("a"), tg.TyVar("b")
    sol = src.solve_recursive_system({"a": tg.Sum(tg.UNIT, b), "b": tg.Prod(tg.NAT, a)})
    assert isinstance(sol["a"], tg.Mu) or isinstance(sol["b"], tg.Mu)
    assert src.recursive_groups({"a": tg.Sum(tg.UNIT, b), "b": tg.Prod(tg.NAT, a)}) == [["a", "b"]]


def test_list_type_shape():
    assert tg.show_type(src.list_type(tg.NAT)) == "mu l. unit + nat * l"
