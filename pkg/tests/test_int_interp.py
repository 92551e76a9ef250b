from hypothesis import given, settings, strategies as st

from intweave import compare as cmp
from intweave import int_interp as ii
from intweave import source as src
from intweave import target as tg
from intweave.source import EXP_NAT, EXP_UNIT, SubArrow
from intweave.target import NAT, UNIT, Branch, Prod, TyVar, VFold, VInl, VInr, VNum, VPair, VUnit

from conftest import derive

U = VUnit()
S = TyVar("S")


def test_interface_examples():
    assert ii.interface(EXP_NAT) == ii.Interface((UNIT,), (NAT,))
    assert ii.interface(EXP_UNIT) == ii.Interface((UNIT,), (UNIT,))
    assert ii.interface(SubArrow(S, EXP_NAT, EXP_NAT)) == ii.Interface((UNIT, Prod(S, NAT)), (NAT, Prod(S, UNIT)))


def test_interface_of_higher_order_type_pairs_pointwise():
    inner = SubArrow(UNIT, EXP_NAT, EXP_NAT)
    x = ii.interface(SubArrow(S, inner, EXP_NAT))
    assert x.neg == (UNIT, Prod(S, NAT), Prod(S, Prod(UNIT, UNIT)))
    assert x.pos == (NAT, Prod(S, UNIT), Prod(S, Prod(UNIT, NAT)))


def program(text):
    return ii.int_interpret(src.infer_subexp(derive(text)))


def test_numeral_is_one_equation():
    p = program("7")
    assert len(p.defs) == 1
    (q,), (a,) = p.entries, p.exits
    assert tg.step_call(p, (q, U)) == (a, VNum(7))


def test_ports_carry_interface_types(stl_corpus):
    for item in stl_corpus[:120]:
        e = src.infer_subexp(src.typecheck_stl(item.term))
        p = ii.int_interpret(e)
        x = ii.interface(e.type)
        assert [p.arg_types[l] for l in p.entries[:len(x.neg)]] == list(x.neg)
        assert [p.arg_types[l] for l in p.exits[:len(x.pos)]] == list(x.pos)
        tg.typecheck_program(p)


def test_increment_answers_through_the_argument():
    p = program("fn x: Nat => 1 + x")
    q, ans_x = p.entries
    out, ask_x = p.exits
    # a query first asks for the argument
    t = tg.run_trace(p, q, U)
    assert t.last == (ask_x, VPair(VPair(VNum(1), U), U))
    # the answer for the argument yields the sum
    t = tg.run_trace(p, ans_x, VPair(VPair(VNum(1), U), VNum(42)))
    assert t.last == (out, VNum(43))


def test_double_routes_answers_by_tag():
    p = program("fn x: Nat => x + x")
    branches = [d for d in p.defs.values() if isinstance(d.body, Branch)]
    assert len(branches) == 1 and branches[0].name == p.entries[1]
    q, ans_x = p.entries
    out, ask_x = p.exits
    first = tg.run_trace(p, q, U).last
    assert first[0] == ask_x and isinstance(first[1].left, VInl)
    second = tg.run_trace(p, ans_x, VPair(first[1].left, VNum(20))).last
    assert second[0] == ask_x and isinstance(second[1].left, VInr)
    assert tg.run_trace(p, ans_x, VPair(second[1].left, VNum(22))).last == (out, VNum(42))


def test_fix_of_identity_step_diverges():
    d = derive("fix[Nat] (fn y: Nat => y)")
    p = ii.int_interpret(src.infer_subexp(d))
    t = tg.run_trace(p, p.entries[0], U, max_steps=2000)
    assert t.truncated


def test_fix_box_stack_discipline():
    p = ii.int_fix(UNIT, EXP_NAT)
    tg.typecheck_program(p)
    lst = src.list_type(UNIT)
    nil = VFold(VInl(U))

    def cons(s):
        return VFold(VInr(VPair(U, s)))
    query, answer, arg_query = p.entries
    result, step_query, step_arg_answer = p.exits
    # an outside query starts the step function with the empty stack
    assert tg.run_trace(p, query, U).last == (step_query, VPair(nil, U))
    # the step function asking for its argument pushes a frame and restarts it
    assert tg.run_trace(p, arg_query, VPair(nil, VPair(U, U))).last == (step_query, VPair(cons(nil), U))
    # an answer on the empty stack leaves the box
    assert tg.run_trace(p, answer, VPair(nil, VNum(9))).last == (result, VNum(9))
    # an answer on a non-empty stack pops the frame and resumes the caller
    assert tg.run_trace(p, answer, VPair(cons(nil), VNum(9))).last == (step_arg_answer, VPair(nil, VPair(U, VNum(9))))
    assert all(tg.value_has_type(v, lst) for v in (nil, cons(nil), cons(cons(nil))))


def test_factorial_via_stack(named):
    d = src.typecheck_stl(named["factorial-5"])
    assert cmp.run_closed_nat(d, "int") == 120


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_int_results_match_reference(seed):
    for item in cmp.generate_corpus(seed, 2, 10, ty=src.NAT_T):
        d = src.typecheck_stl(item.term)
        assert cmp.run_closed_nat(d, "int") == src.reference_eval(item.term)
