from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from intweave import compare as cmp
from intweave import target as tg
from intweave.target import NAT, UNIT, Mu, Prod, Sum, TyVar, VNum, VPair, VUnit

NAT_LIST = Mu("l", Sum(UNIT, Prod(NAT, TyVar("l"))))


def ev(text, **kw):
    return tg.eval_expr(tg.parse_expr(text), **kw)


def test_iszero_has_boolean_sum_type():
    e = tg.parse_expr("iszero 0")
    assert tg.typecheck_expr({}, e) == Sum(UNIT, UNIT)
    assert tg.eval_expr(e) == tg.VInl(VUnit())
    assert ev("iszero 4") == tg.VInr(VUnit())


def test_arithmetic_and_pair_elimination():
    assert ev("1 + 2") == VNum(3)
    assert ev("let <1, 2> be <a, b> in a + b") == VNum(3)


def test_case_and_fold():
    e = tg.parse_expr("fold[mu l. unit + nat * l] inl[nat * (mu l. unit + nat * l)] <>")
    assert tg.types_equal(tg.typecheck_expr({}, e), NAT_LIST)
    v = tg.eval_expr(e)
    assert tg.value_has_type(v, NAT_LIST)
    assert ev("case iszero 0 of inl u => 7 | inr u => 8") == VNum(7)


def test_type_errors():
    with pytest.raises(tg.TargetError):
        tg.typecheck_expr({}, tg.parse_expr("1 + <>"))
    with pytest.raises(tg.TargetError):
        tg.typecheck_expr({}, tg.parse_expr("x"))


def test_mu_equality_is_up_to_renaming():
    assert tg.types_equal(NAT_LIST, Mu("m", Sum(UNIT, Prod(NAT, TyVar("m")))))
    assert not tg.types_equal(NAT_LIST, Mu("m", Sum(UNIT, Prod(UNIT, TyVar("m")))))


def test_value_multiset_examples():
    assert tg.value_multiset(tg.parse_value("<2,<3,3>>")) == Counter({2: 1, 3: 2})
    assert tg.value_multiset(tg.parse_value("<1,<<2,<>>,<3,<2,3>>>>")) == Counter({1: 1, 2: 2, 3: 2})


def test_value_multiset_skips_tags_unless_deep():
    v = tg.VInl(VPair(VNum(4), VNum(5)))
    assert tg.value_multiset(v) == Counter()
    assert tg.value_multiset(v, deep=True) == Counter({4: 1, 5: 1})


def test_small_and_big_step_agree():
    for e, _ in cmp.closed_expressions(3, 300, 8):
        assert tg.eval_small_step(e) == tg.eval_expr(e)


def test_closed_expressions_have_their_type():
    for e, ty in cmp.closed_expressions(5, 300, 10):
        assert tg.types_equal(tg.typecheck_expr({}, e), ty)
        assert tg.value_has_type(tg.eval_expr(e), ty)


def countdown():
    # f0 counts its argument down to zero, then hands over to o0
    return tg.parse_program("""
entries: f0
exits: o0
type f0 : nat
type f1 : nat
type o0 : unit
f0(n) = case iszero n of inl u => o0(u) | inr u => f1(n)
f1(n) = f0(n)
""")


def test_step_call_and_halting():
    p = countdown()
    tg.typecheck_program(p)
    assert tg.step_call(p, ("f0", VNum(0))) == ("o0", VUnit())
    assert tg.step_call(p, ("f1", VNum(3))) == ("f0", VNum(3))
    assert tg.step_call(p, ("o0", VUnit())) == tg.Halted("o0", VUnit())


def test_traces_are_cut_after_the_bound():
    p = countdown()
    t = tg.run_trace(p, "f0", VNum(2), max_steps=50)
    assert t.truncated and len(t) == 50
    assert tg.run_to_exit(p, 0, VNum(0)) == (0, VUnit())
    assert tg.run_to_exit(p, 0, VNum(2), max_steps=50) is None


def test_run_rejects_ill_typed_input():
    with pytest.raises(tg.TargetError):
        tg.run_trace(countdown(), "f0", VUnit())


def test_program_invariants_are_checked():
    with pytest.raises(tg.TargetError):
        tg.TargetProgram(("a", "a"), {}, ("b",))
    d = tg.FunctionDef("b", "x", tg.Direct("b", tg.EVar("x")))
    with pytest.raises(tg.TargetError):
        tg.TargetProgram(("a",), {"b": d}, ("b",))


def inc_program(prefix="g"):
    return tg.parse_program(f"""
entries: {prefix}0
exits: {prefix}x
type {prefix}0 : nat
type {prefix}x : nat
{prefix}0(n) = {prefix}x(n + 1)
""")


def values(n=12):
    return [(0, VNum(i)) for i in range(n)]


def test_identity_is_neutral_for_composition():
    p = inc_program()
    i = tg.identity([NAT])
    assert tg.program_equal_bounded(tg.compose(i, p), p, values())
    assert tg.program_equal_bounded(tg.compose(p, i), p, values())


def test_composition_is_associative():
    p, q, r = inc_program("a"), inc_program("b"), inc_program("c")
    lhs = tg.compose(tg.compose(p, q), r)
    rhs = tg.compose(p, tg.compose(q, r))
    assert tg.program_equal_bounded(lhs, rhs, values())
    assert tg.run_to_exit(lhs, 0, VNum(1)) == (0, VNum(4))


def test_compose_avoids_label_capture():
    p = inc_program()
    pp = tg.compose(p, p)
    assert tg.run_to_exit(pp, 0, VNum(0)) == (0, VNum(2))


def test_tensor_carries_a_value_through():
    p = tg.tensor_exp(UNIT, inc_program())
    tg.typecheck_program(p)
    assert tg.run_to_exit(p, 0, VPair(VUnit(), VNum(5))) == (0, VPair(VUnit(), VNum(6)))
    q = tg.tensor_exp(NAT, countdown())
    assert tg.run_to_exit(q, 0, VPair(VNum(9), VNum(0))) == (0, VPair(VNum(9), VUnit()))
    assert tg.run_to_exit(q, 0, VPair(VNum(9), VNum(3)), max_steps=40) is None


def test_tensor_with_unit_is_equal_up_to_units():
    p = inc_program()
    q = tg.tensor_exp(UNIT, p)
    inputs = [(0, VNum(i), VPair(VUnit(), VNum(i))) for i in range(8)]
    assert tg.program_equal_bounded(p, q, inputs, equiv=tg.equal_up_to_units)


def test_format_parse_round_trip_on_compiled_programs(named):
    from intweave import source as src
    for name in ("increment-42", "double-42", "kierstead", "factorial-5"):
        d = src.typecheck_stl(named[name])
        for route in ("cps-defun", "int"):
            p = cmp.route_program(d, route, False)
            q = tg.parse_program(tg.format_program(p))
            assert tg.format_program(q) == tg.format_program(p)


@pytest.mark.parametrize("a,b", [
    (UNIT, Sum(UNIT, NAT)),
    (NAT, Prod(UNIT, NAT)),
    (Prod(NAT, NAT), Prod(Sum(NAT, UNIT), NAT)),
    (Sum(UNIT, UNIT), Mu("b", Sum(UNIT, TyVar("b")))),
    (Sum(UNIT, Prod(NAT, NAT_LIST)), NAT_LIST),
    (Prod(UNIT, NAT_LIST), NAT_LIST),
])
def test_retraction_examples(a, b):
    w = tg.retraction(a, b)
    assert w is not None
    assert tg.retraction_check(w, tg.enumerate_values(a, max_nat=3, mu_depth=3, limit=60))


def test_no_retraction_from_nat_into_unit():
    assert tg.retraction(NAT, UNIT) is None


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_retraction_decode_after_encode_is_identity(seed):
    gen = cmp.TargetGenerator(seed)
    a = gen.type()
    b = Sum(gen.type(), Prod(UNIT, a)) if seed % 2 else Prod(Sum(a, gen.type()), UNIT)
    w = tg.retraction(a, b)
    assert w is not None
    for v in tg.enumerate_values(a, max_nat=3, mu_depth=2, limit=40):
        assert w.decode_value(w.encode_value(v)) == v


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_generated_programs_are_deterministic_and_preserve_types(seed):
    gen = cmp.TargetGenerator(seed)
    p = gen.program()
    tg.typecheck_program(p)
    v = tg.eval_expr(tg.default_value_expr(p.arg_types[p.entries[0]]))
    assert tg.run_trace(p, p.entries[0], v, 200) == tg.run_trace(p, p.entries[0], v, 200)
    assert cmp.preserves_types(p, v)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_expression_evaluation_preserves_types(seed):
    for e, ty in cmp.closed_expressions(seed, 3, 8):
        assert tg.value_has_type(tg.eval_expr(e), ty)


def test_dot_output_lists_every_call_edge():
    out = tg.format_dot(countdown())
    assert out.startswith("digraph")
    assert '"f0" -> "o0"' in out and '"f1" -> "f0"' in out


def test_tensor_distributes_over_composition():
    p, q = inc_program("a"), countdown()
    lhs = tg.tensor_exp(NAT, tg.compose(p, q))
    rhs = tg.compose(tg.tensor_exp(NAT, p), tg.tensor_exp(NAT, q))
    inputs = [(0, VPair(VNum(7), VNum(i))) for i in range(5)]
    assert tg.program_equal_bounded(lhs, rhs, inputs, max_steps=200)
