import pytest

from intweave import compare as cmp
from intweave.cps import cps_translate
from intweave import defun as df
from intweave import labelling as lb
from intweave import source as src
from intweave import target as tg
from intweave.labelling import LAdd, LApp, LLam, LLetPair, LNat, LNeg, LNum, LProd, LVar, Leaf
from intweave.target import Branch, Direct, VNum, VPair, VUnit

from conftest import derive

U = VUnit()


def increment_term():
    """The labelled CPS image of the increment, labels as in the worked example."""
    n = LNat()
    x_ty = LNeg(LNeg(n, Leaf("l4")), Leaf("l5"))
    k_ty = LNeg(n, Leaf("l6"))
    inner = LLam("l3", "u", n, LApp(LVar("x"), Leaf("l5"),
                                    LLam("l4", "n", n, LApp(LVar("k"), Leaf("l6"), LAdd(LVar("u"), LVar("n"))))))
    const = LLam("l2", "k'", LNeg(n, Leaf("l3")), LApp(LVar("k'"), Leaf("l3"), LNum(1)))
    return LLam("l1", "z", LProd(x_ty, k_ty), LLetPair(LVar("z"), "x", "k", LApp(const, Leaf("l2"), inner)))


def test_increment_equations():
    out = df.defun(increment_term())
    assert out.residual == tg.E_UNIT and out.single_label
    assert sorted(out.defs) == ["l1", "l2", "l3", "l4"]
    p = tg.TargetProgram((), out.defs, (), out.arg_types)
    tg.typecheck_program(p)
    xk = VPair(U, U)
    # apply_l1(<>, <x,k>) = apply_l2(<>, <x,k>)
    assert tg.step_call(p, ("l1", VPair(U, xk))) == ("l2", VPair(U, xk))
    # apply_l2(<>, k') = apply_l3(k', 1)
    assert tg.step_call(p, ("l2", VPair(U, xk))) == ("l3", VPair(xk, VNum(1)))
    # apply_l3(<x,k>, u) = apply_l5(x, <k,u>)
    assert tg.step_call(p, ("l3", VPair(xk, VNum(1)))) == ("l5", VPair(U, VPair(U, VNum(1))))
    # apply_l4(<k,u>, n) = apply_l6(k, u+n)
    assert tg.step_call(p, ("l4", VPair(VPair(U, VNum(1)), VNum(42)))) == ("l6", VPair(U, VNum(43)))


def test_increment_closure_of_l3_holds_x_and_k():
    out = df.defun(increment_term())
    assert tg.show_type(out.tau.types["l3"]) == "unit * unit"
    assert tg.show_type(out.tau.types["l4"]) == "unit * nat"


def test_increment_program_interface():
    d = derive("fn x: Nat => 1 + x")
    p = df.cps_defun(d)
    seq = lb.annotate_cps_full(cps_translate(d))
    ty = seq.type
    assert p.entries == (lb.show_label(ty.label), lb.show_label(ty.dom.left.dom.label))
    assert p.exits == (lb.show_label(ty.dom.right.label), lb.show_label(ty.dom.left.label))
    assert len(p.defs) == 7


def test_constant_program():
    p = df.cps_defun(derive("7"))
    assert len(p.entries) == 1 and len(p.exits) == 1 and len(p.defs) == 1
    (q,), (a,) = p.entries, p.exits
    assert tg.step_call(p, (q, VPair(U, U))) == (a, VPair(U, VNum(7)))


def test_eta_of_unit_variable_gives_two_forwarders():
    p = df.cps_defun(derive("x", [("x", src.UNIT_T)]))
    assert len(p.defs) == 2
    for d in p.defs.values():
        assert isinstance(d.body, Direct) and d.body.callee in p.exits
        v = VPair(U, U)
        assert tg.step_call(p, (d.name, v)) == (d.body.callee, v)


def test_double_has_one_dispatcher_for_the_shared_argument():
    p = df.cps_defun(derive("fn x: Nat => x + x"))
    branches = [d for d in p.defs.values() if isinstance(d.body, Branch)]
    assert len(branches) == 1
    disp = branches[0]
    assert disp.name == f"{disp.body.left_callee}+{disp.body.right_callee}"
    assert disp.name in p.entries
    # the two eta copies call the shared query label, tagging inl and inr
    shared_query = p.exits[1]
    callers = [d for d in p.defs.values() if isinstance(d.body, Direct) and d.body.callee == shared_query]
    assert len(callers) == 2
    shown = sorted(tg.show_def(d) for d in callers)
    assert "inl[" in shown[0] + shown[1] and "inr[" in shown[0] + shown[1]


def test_double_dispatcher_routes_by_tag():
    p = df.cps_defun(derive("fn x: Nat => x + x"), flatten=True)
    disp = next(d for d in p.defs.values() if isinstance(d.body, Branch))
    left_ty = p.arg_types[disp.body.left_callee]
    closure = tg.eval_expr(tg.default_value_expr(left_ty.left))
    right_ty = p.arg_types[disp.body.right_callee]
    tag_l = tg.VInl(closure)
    assert tg.step_call(p, (disp.name, VPair(tag_l, VNum(5))))[0] == disp.body.left_callee
    closure_r = tg.eval_expr(tg.default_value_expr(right_ty.left))
    assert tg.step_call(p, (disp.name, VPair(tg.VInr(closure_r), VNum(5))))[0] == disp.body.right_callee


def test_erase_keeps_shape_and_drops_data():
    p = df.cps_defun(derive("(fn x: Nat => 1 + x) 42"))
    e = df.erase(p)
    assert e.entries == p.entries and e.exits == p.exits
    assert set(e.defs) == set(p.defs)
    assert all(t == tg.UNIT for t in e.arg_types.values())
    for name, d in e.defs.items():
        assert d.body.callee == p.defs[name].body.callee
    assert cmp.skeleton_equal(p, e)


def test_erase_of_constant_loses_the_number():
    e = df.erase(df.cps_defun(derive("7")))
    (q,), (a,) = e.entries, e.exits
    assert tg.step_call(e, (q, U)) == (a, U)


def test_erase_of_empty_program():
    p = tg.TargetProgram((), {}, ())
    assert df.erase(p) == p


def test_erase_rejects_case_distinctions():
    with pytest.raises(df.DefunError):
        df.erase(df.cps_defun(derive("fn x: Nat => x + x")))


def test_fix_program_contains_stack_and_loops_back():
    p = df.cps_defun(derive("fix[Nat -> Nat] (fn f: Nat -> Nat => f)"))
    tg.typecheck_program(p)
    assert any(isinstance(d.body, Branch) for d in p.defs.values())
    # some definition feeds a query back into the step function
    graph = {n: set(d.callees()) for n, d in p.defs.items()}
    seen, stack = set(), list(p.entries)
    while stack:
        n = stack.pop()
        for m in graph.get(n, ()):
            if m == p.entries[0]:
                break
            if m not in seen:
                seen.add(m)
                stack.append(m)
    assert any(n in seen for n in graph[p.entries[0]])


def test_compiled_programs_typecheck_and_cover_their_labels(stl_corpus, named):
    for t in [i.term for i in stl_corpus] + list(named.values()):
        d = src.typecheck_stl(t)
        for flatten in (False, True):
            plan = lb.LabelPlan(d)
            p = df.cps_defun(d, flatten, plan)
            tg.typecheck_program(p)
            called = {c for x in p.defs.values() for c in x.callees()}
            # only the answer ports of unused variables stay undefined
            unused = {lb.show_label(l) for n in d.walk() if n.rule == "weak"
                      for l in plan[n].ctx_pos[n.side["var"]]}
            assert called - set(p.defs) - set(p.exits) <= unused


def test_flattening_does_not_change_results(named):
    for name in ("increment-42", "double-42", "kierstead", "fix-guarded", "factorial-5"):
        d = src.typecheck_stl(named[name])
        assert cmp.run_closed_nat(d, "cps-defun", flatten=False) == cmp.run_closed_nat(d, "cps-defun", flatten=True)


def test_kierstead_closures_are_mutually_recursive(named):
    groups = cmp.closure_groups(src.typecheck_stl(named["kierstead"]))
    assert any(len(g) > 1 for g in groups)
