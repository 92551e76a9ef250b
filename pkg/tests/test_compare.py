from hypothesis import given, settings, strategies as st

from intweave import compare as cmp
from intweave import source as src
from intweave import target as tg
from intweave.target import VNum, VPair, VUnit

from conftest import derive

P = tg.parse_value

DEFUN_GOLDEN = "l0(<>,<>) l1(<>,<<>,<>>) l2(<>,<<>,<>>) l3(<<>,<>>,1) l5(<>,<<>,1>) l4(<<>,1>,42) l6(<>,43)"
INT_GOLDEN = "l0() l1() l2() l3(1) l5(1) l4(1,42) l6(43)"


def one_line(trace, style):
    return " ".join(tg.format_trace(trace, style).split())


def test_value_simplification_examples():
    small, big = P("<2,<3,3>>"), P("<1,<<2,<>>,<3,<2,3>>>>")
    assert cmp.simplifies_value(small, big)
    assert not cmp.simplifies_value(small, P("<2,3>"))
    assert cmp.simplifies_value(VUnit(), big)
    assert not cmp.simplifies_value(big, small)


def test_literal_multiset_mode_ignores_tagged_numbers():
    v = tg.VInl(VNum(4))
    assert cmp.simplifies_value(v, VUnit(), deep=False)
    assert not cmp.simplifies_value(v, VUnit())


@settings(max_examples=200)
@given(st.lists(st.integers(0, 5), max_size=6), st.lists(st.integers(0, 5), max_size=6),
       st.lists(st.integers(0, 5), max_size=6))
def test_value_simplification_is_a_preorder(a, b, c):
    def tup(xs):
        v = VUnit()
        for x in xs:
            v = VPair(VNum(x), v)
        return v
    u, v, w = tup(a), tup(b), tup(c)
    assert cmp.simplifies_value(u, u)
    if cmp.simplifies_value(u, v) and cmp.simplifies_value(v, w):
        assert cmp.simplifies_value(u, w)


def test_trace_simplification_needs_equal_labels_and_length():
    t1 = [("f", VNum(1)), ("g", VUnit())]
    t2 = [("f", VPair(VNum(1), VNum(2))), ("g", VNum(3))]
    assert cmp.simplifies_trace(t1, t2)
    assert not cmp.simplifies_trace(t1, t2[:1])
    assert not cmp.simplifies_trace([("h", VNum(1))], t2[:1])


def test_golden_traces():
    pair = cmp.compact_traces(derive("(fn x: Nat => 1 + x) 42"))
    assert one_line(pair.defun, "closure") == DEFUN_GOLDEN
    assert one_line(pair.int, "args") == INT_GOLDEN
    assert cmp.simplifies_trace(pair.int, pair.defun)


def test_increment_skeletons_agree():
    d = derive("fn x: Nat => 1 + x")
    c = cmp.compile_both(d)
    assert cmp.skeleton_equal(c.defun, c.int)
    assert cmp.skeleton_diff(c.defun, c.int) == []


def test_skeleton_detects_a_changed_callee():
    c = cmp.compile_both(derive("fn x: Nat => 1 + x"))
    name, d = next(iter(c.int.defs.items()))
    other = next(l for l in c.int.defs if l != d.body.callee)
    bad = tg.TargetProgram(c.int.entries, {**c.int.defs, name: tg.FunctionDef(name, d.param, tg.Direct(other, d.body.arg))},
                           c.int.exits, c.int.arg_types)
    assert not cmp.skeleton_equal(c.defun, bad)
    assert cmp.skeleton_diff(c.defun, bad)


def test_all_routes_agree_on_the_running_example():
    d = derive("(fn x: Nat => 1 + x) 42")
    assert [cmp.run_closed_nat(d, r) for r in cmp.ROUTES] == [43, 43, 43]


def test_erased_route_needs_a_function_application():
    d = derive("3 + 4")
    try:
        cmp.run_closed_nat(d, "erased")
    except cmp.CompareError:
        pass
    else:
        raise AssertionError("expected CompareError")


def test_environment_answers_queries_with_the_argument():
    p = cmp.route_program(derive("fn x: Nat => 1 + x"), "int")
    env = cmp.make_environment(p, 42)
    closed = tg.link(p, env)
    assert closed.exits == (cmp.SINK,)
    t = tg.run_trace(closed, closed.entries[0], VUnit())
    assert t.last == (cmp.SINK, VNum(43))


def test_named_examples_pass_every_check(named):
    verdicts = [cmp.check_case(k, v) for k, v in named.items()]
    assert all(v.ok for v in verdicts), cmp.format_verdicts(verdicts)


def test_factorial_on_all_routes(named):
    d = src.typecheck_stl(named["factorial-5"])
    assert src.reference_eval(named["factorial-5"]) == 120
    assert cmp.run_closed_nat(d, "cps-defun") == 120
    assert cmp.run_closed_nat(d, "int") == 120


def test_core_terms_coincide_after_erasure():
    for text in ["fn x: Unit => x", "fn f: Unit -> Unit => fn x: Unit => f x", "(fn x: Unit => x) ()"]:
        assert cmp.core_coincides(derive(text))


def test_verdict_table():
    v = cmp.check_case("inc", src.parse_source("(fn x: Nat => 1 + x) 42"))
    assert v.ok
    out = cmp.format_verdicts([v])
    assert "inc" in out


def test_failed_case_is_reported():
    v = cmp.check_case("bad", src.parse_source("1 + ()"))
    assert not v.ok and v.detail


def test_defun_traces_end_at_the_answer(stl_corpus):
    for item in stl_corpus:
        if item.type != src.NAT_T:
            continue
        p = cmp.route_program(src.typecheck_stl(item.term), "cps-defun")
        t = tg.run_trace(p, p.entries[0], cmp.entry_value(p))
        assert t.last[0] == p.exits[0]


def test_generator_is_seeded():
    a = cmp.generate_corpus(5, 20, 10)
    b = cmp.generate_corpus(5, 20, 10)
    assert [src.pretty(x.term) for x in a] == [src.pretty(x.term) for x in b]


def test_generator_covers_every_rule():
    rules = set()
    for item in cmp.generate_corpus(1, 200, 12):
        rules |= {n.rule for n in src.typecheck_stl(item.term).walk()}
    assert {"ax", "→i", "→e", "num", "add", "if", "contr", "fix", "weak"} <= rules


def test_core_generator_stays_in_core():
    for item in cmp.generate_corpus(2, 30, 10, features=(), fragment="core"):
        assert src.typecheck_stl(item.term).fragment == "core"


def test_kierstead_annotation_is_recursive(named):
    e = src.infer_subexp(src.typecheck_stl(named["kierstead"]))
    mus = cmp.recursive_annotations(e)
    assert mus
    c = tg.TyVar("c")
    assert any(tg.types_equal(src.simplify_units(m), tg.Mu("c", tg.Sum(tg.UNIT, c))) for m in mus)
