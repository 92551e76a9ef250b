"""Interpretation of annotated derivations as interaction programs.

A type ``X`` has query ports ``X-`` and answer ports ``X+``; a program for
``G |- t : X`` takes calls on ``X- G+`` and leaves through ``X+ G-``. A
context variable with subexponential ``A`` carries an ``A`` value next to
every call on its ports. Port labels come from the same label plan the
CPS route uses, so the two programs can be compared label by label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import source as src
from . import target as tg
from .labelling import LabelPlan, LabelTerm, Plus, show_label
from .source import Derivation, ExpNat, ExpUnit, SubArrow
from .target import (
    Branch, Direct, E_UNIT, EAdd, EFold, EInl, EInr, EIsZero, ELet, ENum, EPair, EUnfold, EVar, FunctionDef,
    NAT, Prod, TargetProgram, UNIT,
)


class IntError(Exception):
    pass


@dataclass(frozen=True)
class Interface:
    neg: tuple[tg.TargetType, ...]
    pos: tuple[tg.TargetType, ...]


def interface(x) -> Interface:
    """``1 = ([unit],[unit])``, ``N = ([unit],[nat])`` and
    ``(A.X -o Y) = (Y- (A*X+), Y+ (A*X-))`` with the pairing taken pointwise."""
    if isinstance(x, ExpUnit):
        return Interface((UNIT,), (UNIT,))
    if isinstance(x, ExpNat):
        return Interface((UNIT,), (NAT,))
    if isinstance(x, SubArrow):
        dom, cod = interface(x.dom), interface(x.cod)
        return Interface(cod.neg + tuple(Prod(x.annot, t) for t in dom.pos),
                         cod.pos + tuple(Prod(x.annot, t) for t in dom.neg))
    raise IntError(f"no interface for {x}")


def _plain(n: Derivation) -> Derivation:
    """The unannotated node a (possibly struct) node stands for."""
    while n.rule == "struct":
        n = n.premises[0]
    return n.side["source"]


def _names(labels) -> list[str]:
    return [show_label(l) for l in labels]


class _Builder:
    def __init__(self, plan: LabelPlan):
        self.plan = plan

    def port_types(self, n: Derivation) -> dict[str, tg.TargetType]:
        ports = self.plan[_plain(n)]
        out = {}
        x = interface(n.type)
        out.update(zip(_names(ports.out_neg), x.neg))
        out.update(zip(_names(ports.out_pos), x.pos))
        for c in n.ctx:
            ci = interface(c.type)
            out.update(zip(_names(ports.ctx_pos[c.name]), (Prod(c.annot, t) for t in ci.pos)))
            out.update(zip(_names(ports.ctx_neg[c.name]), (Prod(c.annot, t) for t in ci.neg)))
        return out

    def program(self, n: Derivation, parts, defs, types) -> TargetProgram:
        plain = _plain(n)
        all_defs: dict[str, FunctionDef] = {}
        all_types: dict[str, tg.TargetType] = {}
        for p in parts:
            clash = set(all_defs) & set(p.defs)
            if clash:
                raise IntError(f"labels defined twice: {sorted(clash)}")
            all_defs.update(p.defs)
            all_types.update(p.arg_types)
        for d in defs:
            if d.name in all_defs:
                raise IntError(f"label {d.name} defined twice")
            all_defs[d.name] = d
        all_types.update(types)
        all_types.update(self.port_types(n))
        return TargetProgram(_names(self.plan.entries(plain)), all_defs, _names(self.plan.exits(plain)), all_types)

    def go(self, n: Derivation) -> TargetProgram:
        r = n.rule
        if r == "struct":
            return self.struct(n)
        plain = n.side["source"]
        np = self.plan[plain]
        prem = [self.go(p) for p in n.premises]
        if r in ("1i", "num"):
            q, a = show_label(np.out_neg[0]), show_label(np.out_pos[0])
            value = E_UNIT if r == "1i" else ENum(n.term.n)
            return self.program(n, [], [FunctionDef(q, "_w", Direct(a, value))], {})
        if r == "ax":
            return self.axiom(n, np)
        if r in ("weak", "exch"):
            return self.program(n, prem, [], {})
        if r == "→i":
            body = self.plan[_plain(n.premises[0])]
            q = show_label(np.out_neg[0])
            return self.program(n, prem, [_forward(q, show_label(body.out_neg[0]))], {})
        if r == "→e":
            s_node, t_node = n.premises
            scale = s_node.type.annot
            p_t = self.scaled(t_node, prem[1], scale)
            s_q = show_label(self.plan[_plain(s_node)].out_neg[0])
            return self.program(n, [prem[0], p_t], [_forward(show_label(np.out_neg[0]), s_q)], {})
        if r == "add":
            return self.add(n, np, prem)
        if r == "if":
            return self.if_(n, np, prem)
        if r == "contr":
            return self.contr(n, np, prem[0])
        if r == "fix":
            return self.fix(n, np)
        raise IntError(f"no interpretation for rule {r}")

    def axiom(self, n, np):
        (c,) = n.ctx
        name = c.name
        defs = []
        for q, target in zip(np.out_neg, np.ctx_neg[name]):
            defs.append(FunctionDef(show_label(q), "_v", Direct(show_label(target), EPair(E_UNIT, EVar("_v")))))
        for a, target in zip(np.ctx_pos[name], np.out_pos):
            defs.append(FunctionDef(show_label(a), "_w", Direct(show_label(target), ELet(EVar("_w"), "_u", "_v", EVar("_v")))))
        return self.program(n, [], defs, {})

    def scaled(self, t_node: Derivation, p_t: TargetProgram, scale: tg.TargetType) -> TargetProgram:
        """``A . I(t)`` with the context ports re-associated from
        ``A*(B*X)`` to ``(A*B)*X``."""
        p = tg.tensor_exp(scale, p_t)
        tp = self.plan[_plain(t_node)]
        pos, neg = set(), set()
        for c in t_node.ctx:
            pos |= set(_names(tp.ctx_pos[c.name]))
            neg |= set(_names(tp.ctx_neg[c.name]))

        def param(label, old, avoid):
            ns = tg.NameSupply(avoid | {old}, "_r")
            w, ab, a, b, x = (ns.fresh() for _ in range(5))
            repl = ELet(EVar(w), ab, x, ELet(EVar(ab), a, b, EPair(EVar(a), EPair(EVar(b), EVar(x)))))
            return w, repl

        def call(label, arg, avoid):
            ns = tg.NameSupply(avoid | tg.all_vars(arg), "_r")
            a, bx, b, x = (ns.fresh() for _ in range(4))
            return ELet(arg, a, bx, ELet(EVar(bx), b, x, EPair(EPair(EVar(a), EVar(b)), EVar(x))))

        p = tg.map_params(p, pos, param)
        return tg.map_calls(p, neg, call)

    def add(self, n, np, prem):
        s_node, t_node = n.premises
        p_t = self.scaled(t_node, prem[1], NAT)
        a_s, a_t = (show_label(l) for l in np.local["arg_answer"])
        q_s = show_label(self.plan[_plain(s_node)].out_neg[0])
        q_t = show_label(self.plan[_plain(t_node)].out_neg[0])
        defs = [
            _forward(show_label(np.out_neg[0]), q_s),
            FunctionDef(a_s, "_x", Direct(q_t, EPair(EVar("_x"), E_UNIT))),
            FunctionDef(a_t, "_w", Direct(show_label(np.out_pos[0]),
                                          ELet(EVar("_w"), "_x", "_y", EAdd(EVar("_x"), EVar("_y"))))),
        ]
        return self.program(n, [prem[0], p_t], defs, {a_s: NAT, a_t: Prod(NAT, NAT)})

    def if_(self, n, np, prem):
        s_node, t1_node, t2_node = n.premises
        a_s, a1, a2 = (show_label(l) for l in np.local["branch"])
        q_s, q1, q2 = (show_label(self.plan[_plain(p)].out_neg[0]) for p in n.premises)
        a = show_label(np.out_pos[0])
        defs = [
            _forward(show_label(np.out_neg[0]), q_s),
            FunctionDef(a_s, "_x", Branch(EIsZero(EVar("_x")), "_u", q1, E_UNIT, "_u", q2, E_UNIT)),
            _forward(a1, a),
            _forward(a2, a),
        ]
        return self.program(n, prem, defs, {a_s: NAT, a1: NAT, a2: NAT})

    def contr(self, n, np, p_q):
        q_node = n.premises[0]
        qp = self.plan[_plain(q_node)]
        x, y, z = n.side["var"], n.side["left"], n.side["right"]
        annots = {c.name: c.annot for c in q_node.ctx}
        ay, az = annots[y], annots[z]
        xi = interface(next(c.type for c in n.ctx if c.name == x))
        defs, types = [], {}
        for copy, inj, other in ((y, EInl, az), (z, EInr, ay)):
            for query, target, ty in zip(qp.ctx_neg[copy], np.ctx_neg[x], xi.neg):
                arg = ELet(EVar("_w"), "_a", "_v", EPair(inj(EVar("_a"), other), EVar("_v")))
                defs.append(FunctionDef(show_label(query), "_w", Direct(show_label(target), arg)))
        for j, shared in enumerate(np.ctx_pos[x]):
            if not isinstance(shared, Plus):
                raise IntError("contraction answer port must be a label sum")
            left, right = show_label(shared.left), show_label(shared.right)
            defs.append(_dispatcher(show_label(shared), left, right))
            defs.append(_forward(left, show_label(qp.ctx_pos[y][j])))
            defs.append(_forward(right, show_label(qp.ctx_pos[z][j])))
            types[left] = Prod(ay, xi.pos[j])
            types[right] = Prod(az, xi.pos[j])
        return self.program(n, [p_q], defs, types)

    def struct(self, n):
        p = self.go(n.premises[0])
        w: tg.Retraction = n.side.get("witness")
        if w is None:
            raise IntError("struct node without a retraction witness")
        ports = self.plan[_plain(n)]
        var = n.side["var"]
        pos = set(_names(ports.ctx_pos[var]))
        neg = set(_names(ports.ctx_neg[var]))

        def param(label, old, avoid):
            ns = tg.NameSupply(avoid | {old} | tg.all_vars(w.decode), "_s")
            new, b, v = ns.fresh(), ns.fresh(), ns.fresh()
            dec = tg.subst_expr(w.decode, w.y, EVar(b))
            return new, ELet(EVar(new), b, v, EPair(dec, EVar(v)))

        def call(label, arg, avoid):
            ns = tg.NameSupply(avoid | tg.all_vars(arg) | tg.all_vars(w.encode), "_s")
            a, v = ns.fresh(), ns.fresh()
            enc = tg.subst_expr(w.encode, w.x, EVar(a))
            return ELet(arg, a, v, EPair(enc, EVar(v)))

        p = tg.map_calls(tg.map_params(p, pos, param), neg, call)
        return self.program(n, [p], [], {})

    def fix(self, n, np):
        elem = n.side["elem"]
        x = n.type.cod
        defs, types = fix_equations(np.local, np.out_pos, elem, interface(x))
        return self.program(n, [], defs, types)


def _forward(name: str, target: str) -> FunctionDef:
    return FunctionDef(name, "_v", Direct(target, EVar("_v")))


def _dispatcher(name: str, left: str, right: str) -> FunctionDef:
    """``name(<s, v>) = case s of inl a => left(<a, v>) | inr b => right(<b, v>)``."""
    scrut = ELet(EVar("_w"), "_s", "_v", EVar("_s"))
    return FunctionDef(name, "_w", Branch(
        scrut, "_a", left, ELet(EVar("_w"), "_s", "_v", EPair(EVar("_a"), EVar("_v"))),
        "_b", right, ELet(EVar("_w"), "_s", "_v", EPair(EVar("_b"), EVar("_v")))))


def fix_equations(local: Mapping[str, list[LabelTerm]], out_pos, elem: tg.TargetType, x: Interface):
    """The stack machine of ``fix_X : (list A).(A.X -o X) -o X``.

    A query from outside starts with the empty stack. A query of the step
    function to its own argument pushes the saved ``A`` value and re-enters
    the step function. An answer of the step function pops: on the empty
    stack it leaves, otherwise it resumes the argument with the popped value."""
    lst = src.list_type(elem)
    cell = Prod(elem, lst)
    nil = EFold(lst, EInl(E_UNIT, cell))

    def cons(a, s):
        return EFold(lst, EInr(EPair(a, s), UNIT))

    nn, npos = len(x.neg), len(x.pos)
    result_neg = _names(local["result_neg"])
    q4 = show_label(local["rec"][0])
    resume = _names(local["resume"])
    outside, inside = _names(local["outside"]), _names(local["inside"])
    result_pos = _names(out_pos[:npos])
    step_neg = _names(out_pos[npos:])
    d_neg, c_pos = step_neg[:nn], step_neg[nn:]
    d_pos = _names(local["step_result_pos"])
    c_neg = _names(local["step_arg_neg"])
    reenter = [q4] + resume

    defs, types = [], {}
    for i in range(nn):
        # outside query: empty stack
        defs.append(FunctionDef(result_neg[i], "_v", Direct(reenter[i], EPair(nil, EVar("_v")))))
        # internal re-entry into the step function
        defs.append(_forward(reenter[i], d_neg[i]))
        # the step function queries its argument: push and re-enter
        arg = ELet(EVar("_w"), "_s", "_av", ELet(EVar("_av"), "_a", "_v",
                                                 EPair(cons(EVar("_a"), EVar("_s")), EVar("_v"))))
        defs.append(FunctionDef(c_neg[i], "_w", Direct(reenter[i], arg)))
        types[reenter[i]] = Prod(lst, x.neg[i])
    for j in range(npos):
        disp = show_label(Plus(local["outside"][j], local["inside"][j]))
        defs.append(_forward(d_pos[j], disp))
        scrut = ELet(EVar("_w"), "_s", "_v", EUnfold(lst, EVar("_s")))
        defs.append(FunctionDef(disp, "_w", Branch(
            scrut, "_e", outside[j], ELet(EVar("_w"), "_s", "_v", EVar("_v")),
            "_c", inside[j], ELet(EVar("_w"), "_s", "_v", EPair(EVar("_c"), EVar("_v"))))))
        defs.append(_forward(outside[j], result_pos[j]))
        pop = ELet(EVar("_w"), "_c", "_v", ELet(EVar("_c"), "_a", "_s",
                                                EPair(EVar("_s"), EPair(EVar("_a"), EVar("_v")))))
        defs.append(FunctionDef(inside[j], "_w", Direct(c_pos[j], pop)))
        types[disp] = Prod(lst, x.pos[j])
        types[outside[j]] = x.pos[j]
        types[inside[j]] = Prod(cell, x.pos[j])
    return defs, types


def int_interpret(d: Derivation, plan: LabelPlan | None = None) -> TargetProgram:
    """The interaction program of an annotated derivation (as produced by
    ``infer_subexp``). ``plan`` must be the label plan of the unannotated
    derivation when the result is compared with the CPS route."""
    plan = plan or LabelPlan(_root_source(d))
    return _Builder(plan).go(d)


def _root_source(d: Derivation) -> Derivation:
    plain = _plain(d)
    return plain


def int_fix(elem: tg.TargetType, x) -> TargetProgram:
    """The fixpoint box at subexponential type ``x`` with stack elements of
    type ``elem``, as a standalone program."""
    plain = src.typecheck_stl(src.Fix(src.erase_type(x)))
    plan = LabelPlan(plain)
    ty = SubArrow(src.list_type(elem), SubArrow(elem, x, x), x)
    node = Derivation("fix", (), plain.term, ty, (), {"source": plain, "elem": elem}, plain.fragment)
    return _Builder(plan).go(node)
