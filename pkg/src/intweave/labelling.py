"""Control-flow labels for CPS images.

Every abstraction carries a unique label and every application a label
term ``l | L1 + L2`` naming the abstractions that may flow to it. Coercions
``coercl``/``coercr`` widen a function labelled ``L1`` to ``L1 + L2``.

Labels are assigned by a *plan* computed once per source derivation. For
each node it fixes the labels generated by the node (the query ports of its
result and the answer ports of its context) and the labels it receives as
parameters (answer ports of its result, query ports of its context). The
same plan drives the Int interpretation, so both routes name every port
alike.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from . import source as src
from .cps import NameSupply, cont_type
from .source import Arrow, Derivation, NatT, SourceType, UnitT


# ---------------------------------------------------------------------------
# Label terms


@dataclass(frozen=True)
class Leaf:
    name: str


@dataclass(frozen=True)
class Plus:
    left: "LabelTerm"
    right: "LabelTerm"


LabelTerm = Union[Leaf, Plus]


def show_label(lt: LabelTerm) -> str:
    """Textual name; also the target label of a dispatcher."""
    if isinstance(lt, Leaf):
        return lt.name
    parts = []
    for side in (lt.left, lt.right):
        text = show_label(side)
        parts.append(f"[{text}]" if isinstance(side, Plus) else text)
    return "+".join(parts)


def leaves(lt: LabelTerm) -> list[str]:
    if isinstance(lt, Leaf):
        return [lt.name]
    return leaves(lt.left) + leaves(lt.right)


def plus_nodes(lt: LabelTerm) -> list[Plus]:
    if isinstance(lt, Leaf):
        return []
    return plus_nodes(lt.left) + plus_nodes(lt.right) + [lt]


class LabelSupply:
    def __init__(self, prefix: str = "l", start: int = 1):
        self.prefix = prefix
        self.counter = itertools.count(start)
        self.drawn: list[str] = []

    def fresh(self) -> Leaf:
        name = f"{self.prefix}{next(self.counter)}"
        self.drawn.append(name)
        return Leaf(name)

    def many(self, n: int) -> list[Leaf]:
        return [self.fresh() for _ in range(n)]


# ---------------------------------------------------------------------------
# Labelled types


@dataclass(frozen=True)
class LUnit:
    pass


@dataclass(frozen=True)
class LNat:
    pass


@dataclass(frozen=True)
class LBot:
    pass


@dataclass(frozen=True)
class LProd:
    left: "LType"
    right: "LType"


@dataclass(frozen=True)
class LNeg:
    """``dom ->^label bottom``."""
    dom: "LType"
    label: LabelTerm


LType = Union[LUnit, LNat, LBot, LProd, LNeg]


def erase_ltype(t: LType) -> SourceType:
    if isinstance(t, LUnit):
        return src.UNIT_T
    if isinstance(t, LNat):
        return src.NAT_T
    if isinstance(t, LBot):
        return src.BOT
    if isinstance(t, LProd):
        return src.ProdT(erase_ltype(t.left), erase_ltype(t.right))
    if isinstance(t, LNeg):
        return src.neg(erase_ltype(t.dom))
    raise TypeError(t)


def positive_labels(t: LType) -> list[LabelTerm]:
    if isinstance(t, LNeg):
        return negative_labels(t.dom)
    if isinstance(t, LProd):
        return positive_labels(t.left) + positive_labels(t.right)
    return []


def negative_labels(t: LType) -> list[LabelTerm]:
    if isinstance(t, LNeg):
        return [t.label] + positive_labels(t.dom)
    if isinstance(t, LProd):
        return negative_labels(t.left) + negative_labels(t.right)
    return []


def show_ltype(t: LType, style: str = "neg", prec: int = 0) -> str:
    """``style='neg'`` prints ``¬_l A``; ``style='arrow'`` prints ``A →^l ⊥``."""
    if isinstance(t, LUnit):
        return "1"
    if isinstance(t, LNat):
        return "ℕ"
    if isinstance(t, LBot):
        return "⊥"
    if isinstance(t, LProd):
        text = f"{show_ltype(t.left, style, 2)} × {show_ltype(t.right, style, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(t, LNeg):
        if style == "neg":
            return f"¬_{{{show_label(t.label)}}}{show_ltype(t.dom, style, 3)}"
        text = f"{show_ltype(t.dom, style, 1)} →^{{{show_label(t.label)}}} ⊥"
        return f"({text})" if prec > 0 else text
    raise TypeError(t)


def neg_count(x: SourceType) -> int:
    """Number of query ports ``|X^-|`` of a source type."""
    if isinstance(x, (UnitT, NatT)):
        return 1
    if isinstance(x, Arrow):
        return neg_count(x.cod) + pos_count(x.dom)
    raise TypeError(x)


def pos_count(x: SourceType) -> int:
    if isinstance(x, (UnitT, NatT)):
        return 1
    if isinstance(x, Arrow):
        return pos_count(x.cod) + neg_count(x.dom)
    raise TypeError(x)


def _base(x: SourceType) -> LType:
    return LUnit() if isinstance(x, UnitT) else LNat()


def labelled_cont(x: SourceType, negs: Sequence[LabelTerm], poss: Sequence[LabelTerm]) -> LType:
    """The labelled continuation type ``K_X``; ``negs[0]`` is not used."""
    _check_counts(x, negs, poss)
    if isinstance(x, (UnitT, NatT)):
        return LNeg(_base(x), poss[0])
    ny, py = neg_count(x.cod), pos_count(x.cod)
    arg = labelled_type(x.dom, list(poss[py:]), list(negs[ny:]))
    return LProd(arg, labelled_cont(x.cod, negs[:ny], poss[:py]))


def labelled_type(x: SourceType, negs: Sequence[LabelTerm], poss: Sequence[LabelTerm]) -> LType:
    """``Xbar[negs, poss]``: ``1bar[q, a] = not_q not_a 1`` and
    ``(X->Y)bar[y- x+, y+ x-] = not_(y-_0) (Xbar[x-, x+] * K_Y)``."""
    _check_counts(x, negs, poss)
    return LNeg(labelled_cont(x, negs, poss), negs[0])


def _check_counts(x, negs, poss):
    if len(negs) != neg_count(x) or len(poss) != pos_count(x):
        raise ValueError(f"port lists of lengths {len(negs)},{len(poss)} do not fit {src.show_source_type(x)}")


@dataclass(frozen=True)
class InterfaceLabelling:
    neg: tuple[LabelTerm, ...]
    pos: tuple[LabelTerm, ...]
    source_type: SourceType

    @property
    def ltype(self) -> LType:
        return labelled_type(self.source_type, self.neg, self.pos)


def make_interface_labelling(x: SourceType, fresh: LabelSupply) -> InterfaceLabelling:
    return InterfaceLabelling(tuple(fresh.many(neg_count(x))), tuple(fresh.many(pos_count(x))), x)


# ---------------------------------------------------------------------------
# Labelled terms


@dataclass(frozen=True)
class LVar:
    name: str


@dataclass(frozen=True)
class LStar:
    pass


@dataclass(frozen=True)
class LNum:
    n: int


@dataclass(frozen=True)
class LAdd:
    left: "LTerm"
    right: "LTerm"


@dataclass(frozen=True)
class LIf:
    cond: "LTerm"
    then: "LTerm"
    else_: "LTerm"


@dataclass(frozen=True)
class LPair:
    left: "LTerm"
    right: "LTerm"


@dataclass(frozen=True)
class LLetPair:
    scrut: "LTerm"
    x: str
    y: str
    body: "LTerm"


@dataclass(frozen=True)
class LLam:
    label: str
    var: str
    vtype: LType
    body: "LTerm"


@dataclass(frozen=True)
class LApp:
    fun: "LTerm"
    label: LabelTerm
    arg: "LTerm"


@dataclass(frozen=True)
class Coercl:
    target: Plus
    term: "LTerm"


@dataclass(frozen=True)
class Coercr:
    target: Plus
    term: "LTerm"


@dataclass(frozen=True)
class LFix:
    """A recursive abstraction: ``fix (fn g. body)`` where ``body`` is an
    abstraction of the type of ``g``."""
    var: str
    vtype: LType
    body: LLam


LTerm = Union[LVar, LStar, LNum, LAdd, LIf, LPair, LLetPair, LLam, LApp, Coercl, Coercr, LFix]


def children(t: LTerm) -> list[LTerm]:
    if isinstance(t, (LAdd, LPair)):
        return [t.left, t.right]
    if isinstance(t, LIf):
        return [t.cond, t.then, t.else_]
    if isinstance(t, LLetPair):
        return [t.scrut, t.body]
    if isinstance(t, (LLam, LFix)):
        return [t.body]
    if isinstance(t, LApp):
        return [t.fun, t.arg]
    if isinstance(t, (Coercl, Coercr)):
        return [t.term]
    return []


def walk_terms(t: LTerm):
    """Pre-order iteration."""
    stack = [t]
    while stack:
        s = stack.pop()
        yield s
        stack.extend(reversed(children(s)))


def lfree_vars(t: LTerm) -> frozenset[str]:
    if isinstance(t, LVar):
        return frozenset([t.name])
    if isinstance(t, (LLam, LFix)):
        return lfree_vars(t.body) - {t.var}
    if isinstance(t, LLetPair):
        return lfree_vars(t.scrut) | (lfree_vars(t.body) - {t.x, t.y})
    out = frozenset()
    for c in children(t):
        out |= lfree_vars(c)
    return out


def lsubst(t: LTerm, name: str, repl: LTerm) -> LTerm:
    """Substitution; binders are globally unique so no capture can occur."""
    if isinstance(t, LVar):
        return repl if t.name == name else t
    if isinstance(t, LLam):
        return t if t.var == name else LLam(t.label, t.var, t.vtype, lsubst(t.body, name, repl))
    if isinstance(t, LFix):
        return t if t.var == name else LFix(t.var, t.vtype, lsubst(t.body, name, repl))
    if isinstance(t, LLetPair):
        body = t.body if name in (t.x, t.y) else lsubst(t.body, name, repl)
        return LLetPair(lsubst(t.scrut, name, repl), t.x, t.y, body)
    if isinstance(t, LApp):
        return LApp(lsubst(t.fun, name, repl), t.label, lsubst(t.arg, name, repl))
    if isinstance(t, Coercl):
        return Coercl(t.target, lsubst(t.term, name, repl))
    if isinstance(t, Coercr):
        return Coercr(t.target, lsubst(t.term, name, repl))
    if isinstance(t, LAdd):
        return LAdd(lsubst(t.left, name, repl), lsubst(t.right, name, repl))
    if isinstance(t, LPair):
        return LPair(lsubst(t.left, name, repl), lsubst(t.right, name, repl))
    if isinstance(t, LIf):
        return LIf(*(lsubst(c, name, repl) for c in (t.cond, t.then, t.else_)))
    return t


def erase_labels(t: LTerm) -> src.SourceTerm:
    """``|t|``: drop labels and coercions."""
    if isinstance(t, LVar):
        return src.Var(t.name)
    if isinstance(t, LStar):
        return src.STAR
    if isinstance(t, LNum):
        return src.Num(t.n)
    if isinstance(t, LAdd):
        return src.Add(erase_labels(t.left), erase_labels(t.right))
    if isinstance(t, LIf):
        return src.If(erase_labels(t.cond), erase_labels(t.then), erase_labels(t.else_))
    if isinstance(t, LPair):
        return src.Pair(erase_labels(t.left), erase_labels(t.right))
    if isinstance(t, LLetPair):
        return src.LetPair(erase_labels(t.scrut), t.x, t.y, erase_labels(t.body))
    if isinstance(t, LLam):
        return src.Lam(t.var, erase_ltype(t.vtype), erase_labels(t.body))
    if isinstance(t, LApp):
        return src.App(erase_labels(t.fun), erase_labels(t.arg))
    if isinstance(t, (Coercl, Coercr)):
        return erase_labels(t.term)
    if isinstance(t, LFix):
        ty = erase_ltype(t.vtype)
        return src.App(src.Fix(ty), src.Lam(t.var, ty, erase_labels(t.body)))
    raise TypeError(t)


def show_labelled(t: LTerm, prec: int = 0) -> str:
    if isinstance(t, LVar):
        return t.name
    if isinstance(t, LStar):
        return "*"
    if isinstance(t, LNum):
        return str(t.n)
    if isinstance(t, LPair):
        return f"<{show_labelled(t.left)}, {show_labelled(t.right)}>"
    if isinstance(t, (Coercl, Coercr)):
        kind = "coercl" if isinstance(t, Coercl) else "coercr"
        return f"{kind}_{{{show_label(t.target)}}}({show_labelled(t.term)})"
    if isinstance(t, LLam):
        text = f"λ^{{{t.label}}}{t.var}. {show_labelled(t.body)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, LFix):
        text = f"fix({t.var}. {show_labelled(t.body)})"
        return text
    if isinstance(t, LLetPair):
        text = f"let {show_labelled(t.scrut)} be <{t.x}, {t.y}> in {show_labelled(t.body)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, LIf):
        text = f"if {show_labelled(t.cond)} then {show_labelled(t.then)} else {show_labelled(t.else_)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, LAdd):
        text = f"{show_labelled(t.left, 1)} + {show_labelled(t.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(t, LApp):
        text = f"{show_labelled(t.fun, 2)} @^{{{show_label(t.label)}}} {show_labelled(t.arg, 3)}"
        return f"({text})" if prec > 2 else text
    raise TypeError(t)


class LabelTypeError(Exception):
    pass


def ltype_of(ctx: Mapping[str, LType], t: LTerm) -> LType:
    """Type synthesis in the labelled calculus (with coercions)."""
    if isinstance(t, LVar):
        if t.name not in ctx:
            raise LabelTypeError(f"unbound variable {t.name}")
        return ctx[t.name]
    if isinstance(t, LStar):
        return LUnit()
    if isinstance(t, LNum):
        return LNat()
    if isinstance(t, LAdd):
        if ltype_of(ctx, t.left) != LNat() or ltype_of(ctx, t.right) != LNat():
            raise LabelTypeError("addition of non-numbers")
        return LNat()
    if isinstance(t, LIf):
        if ltype_of(ctx, t.cond) != LNat():
            raise LabelTypeError("if condition must be a number")
        a, b = ltype_of(ctx, t.then), ltype_of(ctx, t.else_)
        if a != b:
            raise LabelTypeError("if branches differ")
        return a
    if isinstance(t, LPair):
        return LProd(ltype_of(ctx, t.left), ltype_of(ctx, t.right))
    if isinstance(t, LLetPair):
        p = ltype_of(ctx, t.scrut)
        if not isinstance(p, LProd):
            raise LabelTypeError("let-pair on a non-product")
        return ltype_of({**ctx, t.x: p.left, t.y: p.right}, t.body)
    if isinstance(t, LLam):
        if ltype_of({**ctx, t.var: t.vtype}, t.body) != LBot():
            raise LabelTypeError("abstraction body must have type bottom")
        return LNeg(t.vtype, Leaf(t.label))
    if isinstance(t, LApp):
        f = ltype_of(ctx, t.fun)
        if not isinstance(f, LNeg) or f.label != t.label:
            raise LabelTypeError(f"application label {show_label(t.label)} does not match the function type")
        a = ltype_of(ctx, t.arg)
        if a != f.dom:
            raise LabelTypeError(f"argument type {show_ltype(a)} does not match {show_ltype(f.dom)}")
        return LBot()
    if isinstance(t, (Coercl, Coercr)):
        f = ltype_of(ctx, t.term)
        part = t.target.left if isinstance(t, Coercl) else t.target.right
        if not isinstance(f, LNeg) or f.label != part:
            raise LabelTypeError("coercion source label mismatch")
        return LNeg(f.dom, t.target)
    if isinstance(t, LFix):
        got = ltype_of({**ctx, t.var: t.vtype}, t.body)
        if got != t.vtype:
            raise LabelTypeError("recursive abstraction has the wrong type")
        return t.vtype
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Label plan


@dataclass
class NodePorts:
    out_neg: list[LabelTerm] = field(default_factory=list)
    out_pos: list[LabelTerm] = field(default_factory=list)
    ctx_neg: dict[str, list[LabelTerm]] = field(default_factory=dict)
    ctx_pos: dict[str, list[LabelTerm]] = field(default_factory=dict)
    local: dict[str, list[LabelTerm]] = field(default_factory=dict)


class LabelPlan:
    """Port labels for every node of one source derivation."""

    def __init__(self, root: Derivation, supply: LabelSupply | None = None,
                 out_pos: Sequence[LabelTerm] | None = None,
                 ctx_neg: Mapping[str, Sequence[LabelTerm]] | None = None):
        self.root = root
        self.supply = supply or LabelSupply()
        self.ports: dict[int, NodePorts] = {}
        self._generate(root)
        top = self.ports[root.nid]
        top.out_pos = list(out_pos) if out_pos is not None else self.supply.many(pos_count(root.type))
        for c in root.ctx:
            given = (ctx_neg or {}).get(c.name)
            top.ctx_neg[c.name] = list(given) if given is not None else self.supply.many(neg_count(c.type))
        self._distribute(root)

    def __getitem__(self, node: Derivation) -> NodePorts:
        return self.ports[node.nid]

    def _generate(self, d: Derivation) -> NodePorts:
        for p in d.premises:
            self._generate(p)
        fresh = self.supply
        np = NodePorts()
        prem = [self.ports[p.nid] for p in d.premises]
        r = d.rule
        if r == "ax":
            (c,) = d.ctx
            np.out_neg = fresh.many(neg_count(c.type))
            np.ctx_pos = {c.name: fresh.many(pos_count(c.type))}
        elif r in ("1i", "num"):
            np.out_neg = [fresh.fresh()]
        elif r == "fix":
            x = d.term.at
            nn, npos = neg_count(x), pos_count(x)
            np.local["result_neg"] = fresh.many(nn)          # q1, e...
            np.local["step_result_pos"] = fresh.many(npos)   # d+
            np.local["step_arg_neg"] = fresh.many(nn)        # c-
            np.local["rec"] = [fresh.fresh()]                # q4
            np.local["resume"] = fresh.many(nn - 1)          # p
            np.local["outside"] = fresh.many(npos)           # ext
            np.local["inside"] = fresh.many(npos)            # int
            np.out_neg = np.local["result_neg"] + np.local["step_result_pos"] + np.local["step_arg_neg"]
        elif r == "weak":
            (q,) = prem
            var = d.side["var"]
            c = next(c for c in d.ctx if c.name == var)
            np.out_neg = list(q.out_neg)
            np.ctx_pos = {**q.ctx_pos, var: fresh.many(pos_count(c.type))}
        elif r == "exch":
            (q,) = prem
            np.out_neg, np.ctx_pos = list(q.out_neg), dict(q.ctx_pos)
        elif r == "→i":
            (b,) = prem
            x = d.term.var
            q = fresh.fresh()
            np.out_neg = [q] + b.out_neg[1:] + b.ctx_pos[x]
            np.ctx_pos = {k: v for k, v in b.ctx_pos.items() if k != x}
        elif r == "→e":
            s, t = prem
            ny = neg_count(d.type)
            np.out_neg = [fresh.fresh()] + s.out_neg[1:ny]
            np.ctx_pos = {**s.ctx_pos, **t.ctx_pos}
        elif r == "add":
            np.out_neg = [fresh.fresh()]
            np.local["arg_answer"] = [fresh.fresh(), fresh.fresh()]
            np.ctx_pos = {**prem[0].ctx_pos, **prem[1].ctx_pos}
        elif r == "if":
            np.out_neg = [fresh.fresh()]
            np.local["branch"] = [fresh.fresh(), fresh.fresh(), fresh.fresh()]
            np.ctx_pos = {k: v for p in prem for k, v in p.ctx_pos.items()}
        elif r == "contr":
            (q,) = prem
            x, y, z = d.side["var"], d.side["left"], d.side["right"]
            c = next(c for c in d.ctx if c.name == x)
            nn, npos = neg_count(c.type), pos_count(c.type)
            np.local["left_query"] = fresh.many(nn)
            np.local["right_query"] = fresh.many(nn)
            np.local["left_answer"] = fresh.many(npos)
            np.local["right_answer"] = fresh.many(npos)
            np.out_neg = list(q.out_neg)
            np.ctx_pos = {k: v for k, v in q.ctx_pos.items() if k not in (y, z)}
            np.ctx_pos[x] = [Plus(a, b) for a, b in zip(np.local["left_answer"], np.local["right_answer"])]
        else:
            raise ValueError(f"no label plan for rule {r}")
        self.ports[d.nid] = np
        return np

    def _distribute(self, d: Derivation) -> None:
        np = self.ports[d.nid]
        prem = [self.ports[p.nid] for p in d.premises]
        r = d.rule

        def restrict(p_node, extra=None):
            names = {c.name for c in p_node.ctx}
            out = {k: v for k, v in np.ctx_neg.items() if k in names}
            out.update(extra or {})
            return out

        if r in ("weak", "exch"):
            prem[0].out_pos = list(np.out_pos)
            prem[0].ctx_neg = restrict(d.premises[0])
        elif r == "→i":
            b = prem[0]
            py = pos_count(d.type.cod)
            b.out_pos = np.out_pos[:py]
            b.ctx_neg = restrict(d.premises[0], {d.term.var: np.out_pos[py:]})
        elif r == "→e":
            s, t = prem
            ny = neg_count(d.type)
            s.out_pos = list(np.out_pos) + list(t.out_neg)
            t.out_pos = s.out_neg[ny:]
            s.ctx_neg = restrict(d.premises[0])
            t.ctx_neg = restrict(d.premises[1])
        elif r == "add":
            a_s, a_t = np.local["arg_answer"]
            prem[0].out_pos, prem[1].out_pos = [a_s], [a_t]
            for p, pd in zip(prem, d.premises):
                p.ctx_neg = restrict(pd)
        elif r == "if":
            for p, pd, a in zip(prem, d.premises, np.local["branch"]):
                p.out_pos = [a]
                p.ctx_neg = restrict(pd)
        elif r == "contr":
            q = prem[0]
            q.out_pos = list(np.out_pos)
            q.ctx_neg = restrict(d.premises[0], {
                d.side["left"]: np.local["left_query"], d.side["right"]: np.local["right_query"]})
        for p in d.premises:
            self._distribute(p)

    def entries(self, d: Derivation | None = None) -> list[LabelTerm]:
        """Query ports of the result, then answer ports of the context in
        reverse declaration order."""
        d = d or self.root
        np = self.ports[d.nid]
        out = list(np.out_neg)
        for c in reversed(d.ctx):
            out += np.ctx_pos[c.name]
        return out

    def exits(self, d: Derivation | None = None) -> list[LabelTerm]:
        d = d or self.root
        np = self.ports[d.nid]
        out = list(np.out_pos)
        for c in reversed(d.ctx):
            out += np.ctx_neg[c.name]
        return out


# ---------------------------------------------------------------------------
# Labelled eta-expansion


def coerce_to(term: LTerm, target: LabelTerm, leaf: str) -> LTerm:
    """Wrap ``term`` (labelled ``leaf``) in the coercions reaching ``target``."""
    if isinstance(target, Leaf):
        if target.name != leaf:
            raise ValueError(f"{leaf} is not a leaf of the target label")
        return term
    if leaf in leaves(target.left):
        return Coercl(target, coerce_to(term, target.left, leaf))
    return Coercr(target, coerce_to(term, target.right, leaf))


def _owned_leaf(lt: LabelTerm, owned: set[str]) -> str:
    mine = [l for l in leaves(lt) if l in owned]
    if len(mine) != 1:
        raise ValueError(f"label {show_label(lt)} needs exactly one owned leaf, found {mine}")
    return mine[0]


def eta_build(xterm: LTerm, from_type: LType, to_type: LType, owned: set[str], names: NameSupply) -> LTerm:
    """A labelled eta-expansion of ``xterm : from_type`` at ``to_type``.

    Each abstraction sits at a negative position of ``to_type`` or a positive
    position of ``from_type``; it takes the owned leaf of the label term there
    and is coerced up to it. Applications use the labels at the remaining
    positions unchanged."""
    if isinstance(from_type, (LUnit, LNat, LBot)):
        if type(from_type) is not type(to_type):
            raise ValueError("shape mismatch in eta_build")
        return xterm
    if isinstance(from_type, LProd):
        a, b = names.fresh("a"), names.fresh("b")
        return LLetPair(xterm, a, b, LPair(
            eta_build(LVar(a), from_type.left, to_type.left, owned, names),
            eta_build(LVar(b), from_type.right, to_type.right, owned, names)))
    if isinstance(from_type, LNeg):
        leaf = _owned_leaf(to_type.label, owned)
        y = names.fresh("x")
        body = LApp(xterm, from_type.label, eta_build(LVar(y), to_type.dom, from_type.dom, owned, names))
        return coerce_to(LLam(leaf, y, to_type.dom, body), to_type.label, leaf)
    raise TypeError(from_type)


def eta_label(x: SourceType, q: Sequence[LabelTerm], a1: Sequence[LabelTerm], a2: Sequence[LabelTerm],
              fresh: LabelSupply, names: NameSupply | None = None):
    """The two labelled copies of ``eta(x, Xbar)`` used at a contraction.

    Returns ``(t1, t2, a1', a2', q1, q2)``: with ``x : Xbar[q, a1'+a2']`` the
    terms have types ``Xbar[q1, a1]`` and ``Xbar[q2, a2]``."""
    names = names or NameSupply()
    n_neg, n_pos = neg_count(x), pos_count(x)
    q1, q2 = fresh.many(n_neg), fresh.many(n_neg)
    a1p, a2p = fresh.many(n_pos), fresh.many(n_pos)
    shared = labelled_type(x, q, [Plus(u, v) for u, v in zip(a1p, a2p)])
    t1 = eta_build(LVar("x"), shared, labelled_type(x, q1, a1),
                   {l.name for l in q1 + a1p}, names)
    t2 = eta_build(LVar("x"), shared, labelled_type(x, q2, a2),
                   {l.name for l in q2 + a2p}, names)
    return t1, t2, a1p, a2p, q1, q2


# ---------------------------------------------------------------------------
# Annotating CPS derivations


@dataclass
class LabelledSequent:
    ctx: tuple[tuple[str, LType], ...]
    term: LTerm
    type: LType
    entries: list[LabelTerm]
    exits: list[LabelTerm]
    plan: LabelPlan | None = None

    def abstraction_labels(self) -> list[str]:
        return [t.label for t in walk_terms(self.term) if isinstance(t, LLam)]


def annotate_cps_full(cps: Derivation, plan: LabelPlan | None = None,
                      names: NameSupply | None = None) -> LabelledSequent:
    """Label a CPS-translated derivation following ``plan`` (built from the
    source derivation the CPS one came from)."""
    source_root = cps.side["source"]
    plan = plan or LabelPlan(source_root)
    if names is None:
        avoid = set()
        for n in cps.walk():
            avoid |= src.all_names(n.term)
            avoid |= {c.name for c in n.ctx}
        names = NameSupply(avoid)
    term = _annotate(cps, plan, names)
    top = plan[source_root]
    ctx = tuple((c.name, labelled_type(c.type, top.ctx_neg[c.name], top.ctx_pos[c.name]))
                for c in source_root.ctx)
    ty = labelled_type(source_root.type, top.out_neg, top.out_pos)
    return LabelledSequent(ctx, term, ty, plan.entries(), plan.exits(), plan)


def annotate_cps_single(cps: Derivation, plan: LabelPlan | None = None,
                        names: NameSupply | None = None) -> LabelledSequent:
    """Single-label annotation of the image of a core or lin derivation."""
    for n in cps.walk():
        if n.rule in ("contr", "fix"):
            raise ValueError("single-label annotation needs a derivation without contraction or fix")
    return annotate_cps_full(cps, plan, names)


def _var_type(plan: LabelPlan, node: Derivation, name: str) -> LType:
    np = plan[node]
    c = next(c for c in node.ctx if c.name == name)
    return labelled_type(c.type, np.ctx_neg[name], np.ctx_pos[name])


def _annotate(cps: Derivation, plan: LabelPlan, names: NameSupply) -> LTerm:
    d = cps.side["source"]
    np = plan[d]
    r = d.rule
    prem = cps.premises
    if r == "ax":
        (c,) = d.ctx
        owned = {l.name for l in np.out_neg + np.ctx_pos[c.name]}
        return eta_build(LVar(c.name), _var_type(plan, d, c.name),
                         labelled_type(d.type, np.out_neg, np.out_pos), owned, names)
    if r in ("1i", "num"):
        k = names.fresh("k")
        q, a = np.out_neg[0], np.out_pos[0]
        value = LStar() if r == "1i" else LNum(d.term.n)
        return LLam(q.name, k, labelled_cont(d.type, np.out_neg, np.out_pos), LApp(LVar(k), a, value))
    if r in ("weak", "exch"):
        return _annotate(prem[0], plan, names)
    if r == "→i":
        body_src = d.premises[0]
        body = _annotate(prem[0], plan, names)
        p, k = names.fresh("p"), names.fresh("k")
        q = np.out_neg[0]
        inner = LLetPair(LVar(p), d.term.var, k, LApp(body, plan[body_src].out_neg[0], LVar(k)))
        return LLam(q.name, p, labelled_cont(d.type, np.out_neg, np.out_pos), inner)
    if r == "→e":
        s_src, t_src = d.premises
        s, t = (_annotate(p, plan, names) for p in prem)
        k = names.fresh("k")
        body = LApp(s, plan[s_src].out_neg[0], LPair(t, LVar(k)))
        return LLam(np.out_neg[0].name, k, labelled_cont(d.type, np.out_neg, np.out_pos), body)
    if r == "add":
        s_src, t_src = d.premises
        s, t = (_annotate(p, plan, names) for p in prem)
        a_s, a_t = np.local["arg_answer"]
        k, m, n = names.fresh("k"), names.fresh("m"), names.fresh("n")
        inner = LLam(a_t.name, n, LNat(), LApp(LVar(k), np.out_pos[0], LAdd(LVar(m), LVar(n))))
        middle = LLam(a_s.name, m, LNat(), LApp(t, plan[t_src].out_neg[0], inner))
        return LLam(np.out_neg[0].name, k, labelled_cont(d.type, np.out_neg, np.out_pos),
                    LApp(s, plan[s_src].out_neg[0], middle))
    if r == "if":
        s_src, t1_src, t2_src = d.premises
        s, t1, t2 = (_annotate(p, plan, names) for p in prem)
        a_s, a1, a2 = np.local["branch"]
        k, m, n1, n2 = names.fresh("k"), names.fresh("m"), names.fresh("n"), names.fresh("n")
        out = np.out_pos[0]
        b1 = LApp(t1, plan[t1_src].out_neg[0], LLam(a1.name, n1, LNat(), LApp(LVar(k), out, LVar(n1))))
        b2 = LApp(t2, plan[t2_src].out_neg[0], LLam(a2.name, n2, LNat(), LApp(LVar(k), out, LVar(n2))))
        middle = LLam(a_s.name, m, LNat(), LIf(LVar(m), b1, b2))
        return LLam(np.out_neg[0].name, k, labelled_cont(d.type, np.out_neg, np.out_pos),
                    LApp(s, plan[s_src].out_neg[0], middle))
    if r == "contr":
        q_src = d.premises[0]
        qp = plan[q_src]
        body = _annotate(prem[0], plan, names)
        x, y, z = d.side["var"], d.side["left"], d.side["right"]
        xty = next(c.type for c in d.ctx if c.name == x)
        shared = _var_type(plan, d, x)
        copies = []
        for copy, query, answer in ((y, "left_query", "left_answer"), (z, "right_query", "right_answer")):
            target = labelled_type(xty, qp.ctx_neg[copy], qp.ctx_pos[copy])
            owned = {l.name for l in np.local[query] + np.local[answer]}
            copies.append(eta_build(LVar(x), shared, target, owned, names))
        return lsubst(lsubst(body, y, copies[0]), z, copies[1])
    if r == "fix":
        return _annotate_fix(d, np, names)
    raise ValueError(f"cannot annotate rule {r}")


def _annotate_fix(d: Derivation, np: NodePorts, names: NameSupply) -> LTerm:
    x = d.term.at
    nn, npos = neg_count(x), pos_count(x)
    result_neg = np.local["result_neg"]            # [q1] + e
    result_pos = np.out_pos[:npos]                 # answers leaving the fixpoint
    step_neg = np.out_pos[npos:]                   # d- c+, called on the step function
    step_pos = np.out_neg[nn:]                     # d+ c-, its answers
    d_neg, c_pos = step_neg[:nn], step_neg[nn:]
    d_pos, c_neg = step_pos[:npos], step_pos[npos:]
    q4 = np.local["rec"][0]
    resume = np.local["resume"]
    outside, inside = np.local["outside"], np.local["inside"]
    dispatch = [Plus(a, b) for a, b in zip(outside, inside)]

    f_type = labelled_type(Arrow(x, x), step_neg, step_pos)
    k_type = labelled_cont(x, result_neg, result_pos)
    k1_type = labelled_cont(x, [q4] + resume, dispatch)
    g_type = LNeg(k1_type, q4)

    w, f, k, g, k1 = (names.fresh(b) for b in ("w", "f", "k", "g", "k"))
    own = lambda *groups: {l.name for grp in groups for l in grp}
    eta_g = eta_build(LVar(g), g_type, labelled_type(x, c_neg, c_pos), own(c_neg, inside), names)
    eta_k1 = eta_build(LVar(k1), k1_type, labelled_cont(x, d_neg, d_pos), own(d_pos, resume), names)
    t_k = eta_build(LVar(k), k_type, k1_type, own(result_neg[1:], outside), names)
    step = LLam(q4.name, k1, k1_type, LApp(LVar(f), d_neg[0], LPair(eta_g, eta_k1)))
    body = LApp(LFix(g, g_type, step), q4, t_k)
    w_type = labelled_cont(d.type, np.out_neg, np.out_pos)
    return LLam(result_neg[0].name, w, w_type, LLetPair(LVar(w), f, k, body))


def check_well_labelled(seq: LabelledSequent) -> bool:
    """Each abstraction label names one abstraction (a contracted variable
    may repeat the same eta-expansion), pairwise distinct port leaves, and
    a derivable labelled typing."""
    seen: dict[str, LLam] = {}
    for t in walk_terms(seq.term):
        if isinstance(t, LLam) and seen.setdefault(t.label, t) != t:
            return False
    port_leaves = [l for lt in list(seq.entries) + list(seq.exits) for l in leaves(lt)]
    if len(port_leaves) != len(set(port_leaves)):
        return False
    try:
        return ltype_of(dict(seq.ctx), seq.term) == seq.type
    except LabelTypeError:
        return False
