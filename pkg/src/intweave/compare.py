"""Checkers relating the two compilation routes, run harness and test corpus.

``skeleton_equal`` compares call-graph shapes, ``simplifies_value`` and
``simplifies_trace`` compare the numbers carried by calls, and
``run_closed_nat`` runs a closed term of type N on any route. The corpus
generator produces reproducible, well-typed source terms.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import source as src
from . import target as tg
from .cps import cps_translate
from .defun import cps_defun, erase
from .int_interp import int_interpret
from .labelling import LabelPlan, annotate_cps_full, show_label
from .source import (
    Add, App, Arrow, Derivation, Fix, If, Lam, NAT_T, Num, STAR, SourceTerm, SourceType, UNIT_T, Var,
)
from .target import (
    CallTrace, Direct, E_UNIT, ELet, ENum, EPair, EVar, FunctionDef, NAT, Prod, TargetProgram, TargetValue,
    UNIT, VPair, VUnit,
)

ROUTES = ("cps-defun", "int", "erased")
MAX_STEPS = 10**5
SINK = "sink"


class CompareError(Exception):
    pass


# ---------------------------------------------------------------------------
# Skeletons


@dataclass(frozen=True)
class SkeletonView:
    entries: tuple[str, ...]
    exits: tuple[str, ...]
    shapes: tuple[tuple[str, tuple[str, ...]], ...]


def skeleton(p: TargetProgram) -> SkeletonView:
    """Forget every expression: keep callees per label and the interface."""
    shapes = []
    for name in sorted(p.defs, key=tg.label_sort_key):
        b = p.defs[name].body
        if isinstance(b, Direct):
            shapes.append((name, ("direct", b.callee)))
        else:
            shapes.append((name, ("case", b.left_callee, b.right_callee)))
    return SkeletonView(tuple(p.entries), tuple(p.exits), tuple(shapes))


def skeleton_equal(p: TargetProgram, q: TargetProgram) -> bool:
    return skeleton(p) == skeleton(q)


def skeleton_diff(p: TargetProgram, q: TargetProgram) -> list[str]:
    """Human-readable differences, empty when the skeletons agree."""
    sp, sq = skeleton(p), skeleton(q)
    out = []
    if sp.entries != sq.entries:
        out.append(f"entries {sp.entries} vs {sq.entries}")
    if sp.exits != sq.exits:
        out.append(f"exits {sp.exits} vs {sq.exits}")
    a, b = dict(sp.shapes), dict(sq.shapes)
    for k in sorted(set(a) | set(b), key=tg.label_sort_key):
        if a.get(k) != b.get(k):
            out.append(f"{k}: {a.get(k)} vs {b.get(k)}")
    return out


# ---------------------------------------------------------------------------
# Simplification of values and traces


def simplifies_value(v: TargetValue, w: TargetValue, deep: bool = True) -> bool:
    """Multiset inclusion of the numbers inside ``v`` and ``w``.

    With ``deep`` (the default) numbers under injections and folds count
    too: closures of recursive or shared functions are folded data, and
    the numbers they hold are stored all the same. ``deep=False`` counts
    pairs and numbers only."""
    mv, mw = tg.value_multiset(v, deep), tg.value_multiset(w, deep)
    return all(mw[n] >= k for n, k in mv.items())


def simplifies_trace(t1: CallTrace | Sequence, t2: CallTrace | Sequence, deep: bool = True) -> bool:
    c1 = t1.calls if isinstance(t1, CallTrace) else tuple(t1)
    c2 = t2.calls if isinstance(t2, CallTrace) else tuple(t2)
    if len(c1) != len(c2):
        return False
    return all(f == g and simplifies_value(v, w, deep) for (f, v), (g, w) in zip(c1, c2))


def trace_numbers(t: CallTrace) -> Counter:
    out: Counter = Counter()
    for _, v in t.calls:
        out.update(tg.value_multiset(v))
    return out


# ---------------------------------------------------------------------------
# Routes


@dataclass
class Compiled:
    derivation: Derivation
    plan: LabelPlan
    defun: TargetProgram
    int: TargetProgram
    annotated: Derivation


def compile_both(d: Derivation, flatten: bool = False) -> Compiled:
    """Both routes from one derivation and one shared label plan."""
    plan = LabelPlan(d)
    p_defun = cps_defun(d, flatten=flatten, plan=plan)
    e = src.infer_subexp(d)
    p_int = int_interpret(e, plan)
    return Compiled(d, plan, p_defun, p_int, e)


def entry_value(p: TargetProgram, port: int = 0) -> TargetValue:
    """The canonical input on an entry port: the unit-like value of its type."""
    entry = p.entries[port]
    ty = p.arg_types.get(entry, UNIT)
    return tg.unit_value_of(ty, p.data_env)


def route_program(d: Derivation, route: str, flatten: bool = False) -> TargetProgram:
    if route == "cps-defun":
        return cps_defun(d, flatten=flatten)
    if route == "int":
        return int_interpret(src.infer_subexp(d), LabelPlan(d))
    if route == "erased":
        return erase(cps_defun(d, flatten=flatten))
    raise CompareError(f"unknown route {route!r}; expected one of {', '.join(ROUTES)}")


def make_environment(p: TargetProgram, argument: int, convention: str = "erased") -> TargetProgram:
    """Stub equations closing a program with interface ``N -> N``.

    The program has entries ``[q, a_x]`` and exits ``[a, q_x]``: the result
    query and the answer to the argument, then the result answer and the
    query to the argument. The stub answers every query to the argument with
    ``argument`` and forwards the result to the exit ``sink``. In the
    ``erased`` convention the argument query carries the saved value alone;
    in the ``defun`` convention it carries a closure and a continuation, and
    the continuation is handed back with the answer."""
    if len(p.entries) != 2 or len(p.exits) != 2:
        raise CompareError("make_environment expects a program with interface N -> N")
    a_x = p.entries[1]
    a, q_x = p.exits
    n = ENum(argument)
    if convention == "erased":
        # q_x(u) = a_x(<u, n>) where the query value is <u, <>>
        answer = ELet(EVar("_w"), "_u", "_e", EPair(EVar("_u"), n))
        result = EVar("_w")
    elif convention == "defun":
        # q_x(<c, k>) = a_x(<k, n>); a(<c, m>) = sink(m)
        answer = ELet(EVar("_w"), "_c", "_k", EPair(EVar("_k"), n))
        result = ELet(EVar("_w"), "_c", "_m", EVar("_m"))
    else:
        raise CompareError(f"unknown convention {convention!r}")
    defs = {q_x: FunctionDef(q_x, "_w", Direct(a_x, answer)),
            a: FunctionDef(a, "_w", Direct(SINK, result))}
    types = {SINK: NAT}
    if a_x in p.arg_types:
        types[q_x] = p.arg_types[q_x]
    return TargetProgram((a, q_x), defs, (SINK, a_x), {**types, a: p.arg_types.get(a, NAT)})


def _nat_of(v: TargetValue) -> int:
    """The number an answer exit carries: the last component of a pair chain."""
    while isinstance(v, VPair):
        v = v.right
    if not isinstance(v, tg.VNum):
        raise CompareError(f"answer {tg.show_value(v)} carries no number")
    return v.n


def run_closed_nat(d: Derivation, route: str, max_steps: int = MAX_STEPS, flatten: bool = False) -> int:
    """Number delivered at the answer exit of a closed term of type N.

    The ``erased`` route handles an application ``f n`` of a function of
    type ``N -> N`` to a closed argument: ``f`` is compiled alone and closed
    with the argument-answering stub of ``make_environment``, in the
    argument-free convention of the Int route."""
    if d.ctx or d.type != NAT_T:
        raise CompareError("run_closed_nat needs a closed derivation of type Nat")
    if route == "erased":
        return _run_erased(d, max_steps)
    p = route_program(d, route, flatten)
    trace = tg.run_trace(p, p.entries[0], entry_value(p), max_steps)
    return _answer(p, trace)


def _answer(p: TargetProgram, trace: CallTrace) -> int:
    if trace.truncated:
        raise src.Diverged(f"no answer within {len(trace)} calls")
    label, v = trace.last
    if label not in p.exits:
        raise CompareError(f"trace stopped at {label}, which is not an exit")
    return _nat_of(v)


def _run_erased(d: Derivation, max_steps: int) -> int:
    t = d.term
    if not (isinstance(t, App) and src.synth_type({}, t.fun) == Arrow(NAT_T, NAT_T)):
        raise CompareError("the erased route runs applications f n with f : Nat -> Nat")
    arg = run_closed_nat(src.typecheck_stl(t.arg), "int", max_steps)
    f = src.typecheck_stl(t.fun)
    p = int_interpret(src.infer_subexp(f), LabelPlan(f))
    env = make_environment(p, arg, "erased")
    closed = tg.link(p, env)
    trace = tg.run_trace(closed, p.entries[0], entry_value(p), max_steps)
    if trace.truncated:
        raise src.Diverged(f"no answer within {len(trace)} calls")
    label, v = trace.last
    if label != SINK:
        raise CompareError(f"trace stopped at {label}, not at the sink")
    return _nat_of(v)


def core_coincides(d: Derivation, max_steps: int = MAX_STEPS) -> bool:
    """Bounded equality of the erased CPS-defun program and the Int program
    of a core derivation, on every entry port with its unit-like input."""
    if d.fragment != "core":
        raise CompareError("core_coincides needs a core derivation")
    c = compile_both(d)
    erased = erase(c.defun)
    inputs = [(i, VUnit(), entry_value(c.int, i)) for i in range(len(c.int.entries))]
    return tg.program_equal_bounded(erased, c.int, inputs, max_steps, equiv=tg.equal_up_to_units)


def recursive_annotations(e: Derivation) -> list[tg.TargetType]:
    """The recursive subexponentials of an annotated derivation, with unit
    factors removed."""
    out = []
    for a in src.subexp_annotations(e):
        stack = [src.simplify_units(a)]
        while stack:
            ty = stack.pop()
            if isinstance(ty, tg.Mu) and not any(tg.types_equal(ty, m) for m in out):
                out.append(ty)
            for f in ("left", "right", "body"):
                if hasattr(ty, f):
                    stack.append(getattr(ty, f))
    return out


def closure_groups(d: Derivation, flatten: bool = False) -> list[list[str]]:
    """Mutually recursive groups of the closure datatypes of the CPS-defun
    route, each sorted by label."""
    from .defun import defun

    seq = annotate_cps_full(cps_translate(d), LabelPlan(d))
    out = defun(seq, flatten=flatten)
    return [sorted(g, key=tg.label_sort_key) for g in out.tau.groups]


# ---------------------------------------------------------------------------
# Compact traces


def administrative_labels(d: Derivation, plan: LabelPlan) -> set[str]:
    """Labels of pure glue: the ports of variable axioms and the body query
    under each abstraction. Removing their calls from a trace and renaming
    the rest gives the compact form in which the increment traces are
    usually displayed."""
    out = set()
    for n in d.walk():
        np = plan[n]
        if n.rule == "ax":
            out |= {show_label(l) for l in np.out_neg}
            for ls in np.ctx_pos.values():
                out |= {show_label(l) for l in ls}
        elif n.rule == "→i":
            out.add(show_label(plan[n.premises[0]].out_neg[0]))
    return out


def compact_renaming(d: Derivation, plan: LabelPlan, drop: set[str]) -> dict[str, str]:
    """Renumber the surviving abstraction labels ``l0, l1, ...`` in pre-order
    of the labelled CPS term, with the exit labels last."""
    seq = annotate_cps_full(cps_translate(d), plan)
    order = [x for x in seq.abstraction_labels() if x not in drop]
    exits = [show_label(x) for x in seq.exits]
    order = [x for x in order if x not in exits] + exits
    return {x: f"l{i}" for i, x in enumerate(order)}


def compact_trace(trace: CallTrace, drop: set[str], renaming: dict[str, str]) -> CallTrace:
    calls = tuple((renaming.get(f, f), v) for f, v in trace.calls if f not in drop)
    return CallTrace(calls, trace.truncated)


@dataclass
class TracePair:
    defun: CallTrace
    int: CallTrace


def compact_traces(d: Derivation) -> TracePair:
    """The two routes' traces of a closed term of type N in compact form."""
    c = compile_both(d)
    drop = administrative_labels(d, c.plan)
    ren = compact_renaming(d, c.plan, drop)
    out = []
    for p in (c.defun, c.int):
        t = tg.run_trace(p, p.entries[0], entry_value(p))
        out.append(compact_trace(t, drop, ren))
    return TracePair(*out)


# ---------------------------------------------------------------------------
# Case verdicts


@dataclass
class Verdict:
    name: str
    text: str
    skeleton_ok: bool | None = None
    trace_ok: bool | None = None
    values_ok: bool | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return all(x is not False for x in (self.skeleton_ok, self.trace_ok, self.values_ok))


def check_case(name: str, term: SourceTerm, max_steps: int = MAX_STEPS, fuel: int = 10**6) -> Verdict:
    """Skeleton equality for any closed term; for terms of type N also the
    trace simplification and agreement with the reference evaluator."""
    v = Verdict(name, src.pretty(term))
    try:
        d = src.typecheck_stl(term)
        c = compile_both(d)
        tg.typecheck_program(c.defun)
        tg.typecheck_program(c.int)
    except (src.SourceError, tg.TargetError) as exc:
        v.skeleton_ok, v.detail = False, f"{type(exc).__name__}: {exc}"
        return v
    diff = skeleton_diff(c.int, c.defun)
    v.skeleton_ok = not diff
    if diff:
        v.detail = "; ".join(diff[:3])
    if d.type != NAT_T:
        return v
    try:
        expected = src.reference_eval(term, fuel)
    except src.Diverged:
        expected = None
    ti = tg.run_trace(c.int, c.int.entries[0], entry_value(c.int), max_steps)
    td = tg.run_trace(c.defun, c.defun.entries[0], entry_value(c.defun), max_steps)
    if expected is None:
        # both routes must fail to answer as well
        v.values_ok = ti.truncated and td.truncated
        v.trace_ok = None
        return v
    v.trace_ok = not ti.truncated and simplifies_trace(ti, td)
    try:
        got = (_answer(c.int, ti), _answer(c.defun, td))
        v.values_ok = got == (expected, expected)
        if not v.values_ok:
            v.detail = f"int {got[0]}, cps-defun {got[1]}, reference {expected}"
    except (CompareError, src.Diverged) as exc:
        v.values_ok, v.detail = False, str(exc)
    return v


def format_verdicts(verdicts: Iterable[Verdict]) -> str:
    def mark(x):
        return "-" if x is None else ("ok" if x else "FAIL")

    rows = [("case", "skeleton", "trace", "values", "term")]
    for v in verdicts:
        text = v.text if len(v.text) <= 60 else v.text[:57] + "..."
        rows.append((v.name, mark(v.skeleton_ok), mark(v.trace_ok), mark(v.values_ok), text))
        if v.detail:
            rows.append(("", "", "", "", "  " + v.detail))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r[:4], widths)) + "  " + r[4] for r in rows)


# ---------------------------------------------------------------------------
# Corpus


NAMED_EXAMPLES: dict[str, str] = {
    "increment": "fn x: Nat => 1 + x",
    "increment-42": "(fn x: Nat => 1 + x) 42",
    "double": "fn x: Nat => x + x",
    "double-42": "(fn x: Nat => x + x) 42",
    "seven": "7",
    "twice": "fn f: Nat -> Nat => fn x: Nat => f (f x)",
    "kierstead": ("(fn g: ((Nat -> Nat) -> Nat -> Nat) -> Nat -> Nat => g (fn x: Nat -> Nat => g (fn y: Nat -> Nat => x)))"
                  " (fn f: (Nat -> Nat) -> Nat -> Nat => f (f (fn x: Nat => x))) 3"),
    "kierstead-t": ("fn g: ((Nat -> Nat) -> Nat -> Nat) -> Nat -> Nat => "
                    "g (fn x: Nat -> Nat => g (fn y: Nat -> Nat => x))"),
    "fix-const": "fix[Nat] (fn x: Nat => 3)",
    "fix-guarded": "(fix[Nat -> Nat] (fn f: Nat -> Nat => fn n: Nat => if n then 5 else f 0)) 2",
    "factorial-5": (
        "(fix[Nat -> Nat -> Nat -> ((Nat -> Nat) -> Nat -> Nat) -> Nat -> Nat]"
        " (fn loop: Nat -> Nat -> Nat -> ((Nat -> Nat) -> Nat -> Nat) -> Nat -> Nat =>"
        " fn r0: Nat => fn r1: Nat => fn r2: Nat => fn i: (Nat -> Nat) -> Nat -> Nat => fn acc: Nat =>"
        " if r0 + r1 + r2 then acc else"
        " loop (if r0 then 1 else 0) (if r0 then (if r1 then 1 else 0) else r1)"
        " (if r0 + r1 then (if r2 then 1 else 0) else r2)"
        " (fn s: Nat -> Nat => fn z: Nat => s (i s z)) (i (fn x: Nat => x + acc) 0)))"
        " 1 0 1 (fn s: Nat -> Nat => fn z: Nat => s z) 1"),
}
"""Hand-written cases. ``factorial-5`` multiplies by repeated addition and
counts a three-bit counter ``r2 r1 r0`` (bit set = 0) down from 5, since the
language has no subtraction; ``i`` is the Church numeral of the round."""


_BASE_TYPES = (NAT_T, UNIT_T)


def _arrow(*ts: SourceType) -> SourceType:
    out = ts[-1]
    for t in reversed(ts[:-1]):
        out = Arrow(t, out)
    return out


_SMALL_TYPES = (NAT_T, NAT_T, UNIT_T, Arrow(NAT_T, NAT_T), Arrow(UNIT_T, NAT_T), _arrow(NAT_T, NAT_T, NAT_T),
                Arrow(Arrow(NAT_T, NAT_T), NAT_T))


class TermGenerator:
    """Seeded type-directed generator of closed source terms.

    ``features`` selects the rules that may appear: ``nat`` (numerals,
    addition, conditionals), ``fix`` and ``share`` (variables used more than
    once). Without ``nat`` only unit and arrow types occur."""

    def __init__(self, seed: int, features: Iterable[str] = ("nat", "fix", "share")):
        self.rng = random.Random(seed)
        self.features = set(features)
        self.counter = 0

    def _fresh(self) -> str:
        self.counter += 1
        return f"v{self.counter}"

    def _type(self, depth: int = 2) -> SourceType:
        if "nat" not in self.features:
            if depth == 0 or self.rng.random() < 0.5:
                return UNIT_T
            return Arrow(self._type(depth - 1), self._type(depth - 1))
        if depth == 0 or self.rng.random() < 0.55:
            return NAT_T if self.rng.random() < 0.8 else UNIT_T
        return Arrow(self._type(depth - 1), self._type(depth - 1))

    def term(self, ty: SourceType, ctx: list[tuple[str, SourceType]], size: int) -> SourceTerm:
        rng = self.rng
        choices = []
        vars_here = [n for n, t in ctx if t == ty]
        heads = [(n, t) for n, t in ctx if isinstance(t, Arrow) and _returns(t, ty)]
        if vars_here:
            choices += ["var"] * 3
        if isinstance(ty, Arrow):
            choices += ["lam"] * 4
        if ty == NAT_T and "nat" in self.features:
            choices += ["num"] * 2
            if size >= 3:
                choices += ["add", "add"]
            if size >= 4:
                choices += ["if"]
        if ty == UNIT_T:
            choices += ["star"]
        nat_vars = [n for n, t in ctx if t == NAT_T]
        if "share" in self.features and ty == NAT_T and nat_vars and size >= 3:
            choices += ["dup"] * 2
        if size >= 3:
            choices += ["app"]
            if heads:
                choices += ["call"] * 2
        if "fix" in self.features and size >= 5:
            choices += ["fix"]
        if not choices:
            choices = ["app"] if size >= 3 else []
        if not choices:
            return self._fallback(ty, ctx)
        kind = rng.choice(choices)
        if kind == "var":
            return Var(rng.choice(vars_here))
        if kind == "num":
            return Num(rng.choice((0, 0, 1, 1, 2, 3, 5, 42)))
        if kind == "star":
            return STAR
        if kind == "lam":
            x = self._fresh()
            return Lam(x, ty.dom, self.term(ty.cod, ctx + [(x, ty.dom)], size - 1))
        if kind == "add":
            k = rng.randint(1, size - 2)
            return Add(self.term(NAT_T, ctx, k), self.term(NAT_T, ctx, size - 1 - k))
        if kind == "if":
            k = max(1, (size - 1) // 3)
            return If(self.term(NAT_T, ctx, k), self.term(NAT_T, ctx, k), self.term(NAT_T, ctx, size - 1 - 2 * k))
        if kind == "dup":
            x = rng.choice(nat_vars)
            return Add(Var(x), self.term(NAT_T, ctx, size - 2) if rng.random() < 0.5 else Var(x))
        if kind == "call":
            name, t = rng.choice(heads)
            out: SourceTerm = Var(name)
            budget = size - 1
            while t != ty:
                k = max(1, budget // 2)
                out = App(out, self.term(t.dom, ctx, k))
                budget -= k
                t = t.cod
            return out
        if kind == "app":
            a = self._type(1)
            k = rng.randint(1, size - 2)
            return App(self.term(Arrow(a, ty), ctx, size - 1 - k), self.term(a, ctx, k))
        if kind == "fix":
            return self._fix(ty, ctx, size)
        raise AssertionError(kind)

    def _fix(self, ty: SourceType, ctx, size: int) -> SourceTerm:
        """A recursion that terminates: the recursive call sits in the else
        branch of a test and is made with argument 0, which takes the then
        branch. At type N the step ignores its argument or adds to a guarded
        use of it."""
        f, n = self._fresh(), self._fresh()
        if ty == NAT_T and "nat" in self.features:
            guard = Num(self.rng.choice((0, 1)))
            body = If(guard, self.term(NAT_T, ctx, 2), self.term(NAT_T, ctx, 2))
            return App(Fix(NAT_T), Lam(f, NAT_T, body))
        if ty == Arrow(NAT_T, NAT_T) and "nat" in self.features:
            base = self.term(NAT_T, ctx + [(n, NAT_T)], max(1, size - 5))
            step = Add(App(Var(f), Num(0)), Num(self.rng.choice((1, 2))))
            return App(Fix(ty), Lam(f, ty, Lam(n, NAT_T, If(Var(n), base, step))))
        body = self.term(ty, ctx + [(f, ty)], size - 2)
        return App(Fix(ty), Lam(f, ty, body))

    def _fallback(self, ty: SourceType, ctx) -> SourceTerm:
        if ty == NAT_T:
            return Num(1)
        if ty == UNIT_T:
            return STAR
        x = self._fresh()
        return Lam(x, ty.dom, self._fallback(ty.cod, ctx + [(x, ty.dom)]))


def _returns(t: SourceType, ty: SourceType) -> bool:
    while isinstance(t, Arrow):
        t = t.cod
        if t == ty:
            return True
    return False


@dataclass
class CorpusItem:
    name: str
    term: SourceTerm
    type: SourceType
    fragment: str
    uses_fix: bool = False
    tags: set[str] = field(default_factory=set)


def generate_corpus(seed: int, count: int, max_size: int = 12, ty: SourceType | None = None,
                    features: Iterable[str] = ("nat", "fix", "share"), fragment: str | None = None,
                    require_fix: bool = False, max_tries: int = 200_000) -> list[CorpusItem]:
    """``count`` distinct closed well-typed terms of size at most
    ``max_size``, deterministic in ``seed``. Terms of type N that diverge
    under the reference evaluator within 10^4 applications are dropped."""
    gen = TermGenerator(seed, features)
    out, seen = [], set()
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries:
            raise CompareError(f"corpus generator found only {len(out)} of {count} terms")
        want = ty or gen._type()
        t = gen.term(want, [], gen.rng.randint(max(2, max_size // 2), max_size))
        if src.term_size(t) > max_size:
            continue
        uses_fix = any(isinstance(s, Fix) for s in _subterms(t))
        if require_fix and not uses_fix:
            continue
        key = src.pretty(t)
        if key in seen:
            continue
        try:
            d = src.typecheck_stl(t, fragment=fragment)
        except src.TypeCheckError:
            continue
        if d.type == NAT_T and uses_fix:
            try:
                src.reference_eval(t, 10**4)
            except src.Diverged:
                continue
        seen.add(key)
        out.append(CorpusItem(f"gen{seed}-{len(out)}", t, d.type, d.fragment, uses_fix))
    return out


def _subterms(t: SourceTerm):
    stack = [t]
    while stack:
        s = stack.pop()
        yield s
        for name in ("fun", "arg", "body", "left", "right", "cond", "then", "else_", "scrut"):
            c = getattr(s, name, None)
            if isinstance(c, SourceTerm.__args__):
                stack.append(c)


def named_terms() -> dict[str, SourceTerm]:
    return {k: src.parse_source(v) for k, v in NAMED_EXAMPLES.items()}


def run_corpus(seed: int, count: int = 100, max_size: int = 12, include_named: bool = True,
               max_steps: int = MAX_STEPS) -> list[Verdict]:
    cases: list[tuple[str, SourceTerm]] = []
    if include_named:
        cases += list(named_terms().items())
    cases += [(c.name, c.term) for c in generate_corpus(seed, count, max_size)]
    return [check_case(name, t, max_steps) for name, t in cases]


# ---------------------------------------------------------------------------
# Target generators


NAT_LIST = src.list_type(NAT)


class TargetGenerator:
    """Seeded generator of well-typed target types, expressions and programs."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.counter = 0

    def _fresh(self, base: str = "x") -> str:
        self.counter += 1
        return f"{base}{self.counter}"

    def type(self, depth: int = 2) -> tg.TargetType:
        rng = self.rng
        if depth == 0:
            return rng.choice((UNIT, NAT, NAT))
        k = rng.random()
        if k < 0.35:
            return rng.choice((UNIT, NAT, NAT))
        if k < 0.65:
            return Prod(self.type(depth - 1), self.type(depth - 1))
        if k < 0.9:
            return tg.Sum(self.type(depth - 1), self.type(depth - 1))
        return NAT_LIST

    def expr(self, ty: tg.TargetType, ctx: dict[str, tg.TargetType], size: int) -> tg.TargetExpr:
        """An expression of type ``ty`` under ``ctx`` with about ``size`` nodes."""
        rng = self.rng
        matching = [x for x, t in ctx.items() if tg.types_equal(t, ty)]
        if matching and rng.random() < 0.3:
            return EVar(rng.choice(matching))
        if size <= 1 or rng.random() < 0.15:
            return self._leaf(ty, ctx)
        pairs = [x for x, t in ctx.items() if isinstance(t, Prod)]
        sums = [x for x, t in ctx.items() if isinstance(t, tg.Sum)]
        lists = [x for x, t in ctx.items() if tg.types_equal(t, NAT_LIST)]
        kinds = ["intro"] * 3 + ["case_iszero"]
        if pairs:
            kinds += ["let"] * 2
        if sums:
            kinds += ["case"] * 2
        if lists:
            kinds += ["unfold"]
        kinds += ["let_new"]
        kind = rng.choice(kinds)
        if kind == "let":
            p = rng.choice(pairs)
            x, y = self._fresh(), self._fresh()
            pt = ctx[p]
            return ELet(EVar(p), x, y, self.expr(ty, {**ctx, x: pt.left, y: pt.right}, size - 1))
        if kind == "let_new":
            a, b = self.type(1), self.type(1)
            x, y = self._fresh(), self._fresh()
            half = max(1, size // 2)
            scrut = self.expr(Prod(a, b), ctx, half)
            return ELet(scrut, x, y, self.expr(ty, {**ctx, x: a, y: b}, size - half))
        if kind == "case":
            s = rng.choice(sums)
            st = ctx[s]
            x, y = self._fresh(), self._fresh()
            half = max(1, (size - 1) // 2)
            return tg.ECase(EVar(s), x, self.expr(ty, {**ctx, x: st.left}, half),
                            y, self.expr(ty, {**ctx, y: st.right}, half))
        if kind == "case_iszero":
            x, y = self._fresh(), self._fresh()
            third = max(1, (size - 1) // 3)
            return tg.ECase(tg.EIsZero(self.expr(NAT, ctx, third)), x, self.expr(ty, {**ctx, x: UNIT}, third),
                            y, self.expr(ty, {**ctx, y: UNIT}, third))
        if kind == "unfold":
            s = rng.choice(lists)
            x, y = self._fresh(), self._fresh()
            half = max(1, (size - 1) // 2)
            cell = tg.unfold_type(NAT_LIST)
            return tg.ECase(tg.EUnfold(NAT_LIST, EVar(s)), x, self.expr(ty, {**ctx, x: cell.left}, half),
                            y, self.expr(ty, {**ctx, y: cell.right}, half))
        return self._intro(ty, ctx, size)

    def _intro(self, ty, ctx, size):
        rng = self.rng
        if isinstance(ty, tg.TUnit):
            return E_UNIT
        if isinstance(ty, tg.TNat):
            if size >= 3 and rng.random() < 0.6:
                k = max(1, (size - 1) // 2)
                return tg.EAdd(self.expr(NAT, ctx, k), self.expr(NAT, ctx, size - 1 - k))
            return ENum(rng.randint(0, 9))
        if isinstance(ty, Prod):
            k = max(1, (size - 1) // 2)
            return EPair(self.expr(ty.left, ctx, k), self.expr(ty.right, ctx, size - 1 - k))
        if isinstance(ty, tg.Sum):
            if rng.random() < 0.5:
                return tg.EInl(self.expr(ty.left, ctx, size - 1), ty.right)
            return tg.EInr(self.expr(ty.right, ctx, size - 1), ty.left)
        if isinstance(ty, tg.Mu):
            return tg.EFold(ty, self.expr(tg.unfold_type(ty), ctx, size - 1))
        raise CompareError(f"cannot generate at type {tg.show_type(ty)}")

    def _leaf(self, ty, ctx):
        matching = [x for x, t in ctx.items() if tg.types_equal(t, ty)]
        if matching:
            return EVar(self.rng.choice(matching))
        e = tg.default_value_expr(ty)
        if e is None:
            raise CompareError(f"type {tg.show_type(ty)} has no value")
        return e

    def program(self, n_labels: int = 6, n_exits: int = 2, size: int = 8) -> TargetProgram:
        """A random well-typed program. Every definition calls a random label
        of the program (possibly itself) or an exit."""
        rng = self.rng
        labels = [f"f{i}" for i in range(n_labels)]
        exits = [f"o{i}" for i in range(n_exits)]
        types = {x: self.type() for x in labels + exits}
        defs = {}
        for f in labels:
            x = self._fresh("p")
            ctx = {x: types[f]}
            if rng.random() < 0.35:
                a, b = self.type(1), self.type(1)
                g, h = rng.choice(labels + exits), rng.choice(labels + exits)
                y, z = self._fresh("y"), self._fresh("z")
                scrut = self.expr(tg.Sum(a, b), ctx, size // 2)
                body = tg.Branch(scrut, y, g, self.expr(types[g], {**ctx, y: a}, size),
                                 z, h, self.expr(types[h], {**ctx, z: b}, size))
            else:
                g = rng.choice(labels + exits)
                body = Direct(g, self.expr(types[g], ctx, size))
            defs[f] = FunctionDef(f, x, body)
        return TargetProgram(labels[:1], defs, exits, types)


def closed_expressions(seed: int, count: int, size: int = 10) -> list[tuple[tg.TargetExpr, tg.TargetType]]:
    gen = TargetGenerator(seed)
    out = []
    for _ in range(count):
        ty = gen.type()
        out.append((gen.expr(ty, {}, gen.rng.randint(1, size)), ty))
    return out


def preserves_types(p: TargetProgram, value: TargetValue, max_steps: int = 200) -> bool:
    """Every call along the trace from the first entry carries a value of
    the callee's argument type."""
    trace = tg.run_trace(p, p.entries[0], value, max_steps)
    return all(tg.value_has_type(v, p.arg_types[f], p.data_env) for f, v in trace.calls)
