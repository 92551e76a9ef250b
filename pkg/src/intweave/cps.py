"""Call-by-name CPS translation of typing derivations.

Continuation types: ``K_1 = not 1``, ``K_N = not N`` and
``K_(X->Y) = not K_X * K_Y``; a term of type ``X`` becomes a term of type
``Xbar = not K_X``. The translated derivation mirrors the source one node
for node, so later stages can key data on the source node.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import source as src
from .source import (
    App, Arrow, BotT, Decl, Derivation, Fix, Lam, LetPair, NatT, Num, Pair, ProdT, STAR, SourceTerm,
    SourceType, UnitT, Var, neg,
)


@dataclass(frozen=True)
class CpsTypePair:
    continuation: SourceType
    lifted: SourceType


def cont_type(x: SourceType) -> SourceType:
    if isinstance(x, (UnitT, NatT)):
        return neg(x)
    if isinstance(x, Arrow):
        return ProdT(lifted_type(x.dom), cont_type(x.cod))
    raise src.TypeCheckError(f"no continuation type for {src.show_source_type(x)}")


def lifted_type(x: SourceType) -> SourceType:
    return neg(cont_type(x))


def cps_type(x: SourceType) -> CpsTypePair:
    if not src.is_user_type(x):
        raise src.TypeCheckError("cps_type expects a source type")
    return CpsTypePair(cont_type(x), lifted_type(x))


class NameSupply:
    """Deterministic fresh names avoiding a given set."""

    def __init__(self, avoid=()):
        self.used = set(avoid)
        self.counts: dict[str, int] = {}

    def fresh(self, base: str) -> str:
        n = self.counts.get(base, 0)
        while True:
            n += 1
            cand = f"{base}{n}"
            if cand not in self.used:
                self.counts[base] = n
                self.used.add(cand)
                return cand


def eta_expand(t: SourceTerm, x: SourceType, names: NameSupply | None = None) -> SourceTerm:
    """eta(t, A->B) = fn y. eta(t eta(y, A), B); products are split and
    re-paired; base types and bottom leave the term unchanged."""
    names = names or NameSupply(src.all_names(t))
    if isinstance(x, (UnitT, NatT, BotT)):
        return t
    if isinstance(x, Arrow):
        y = names.fresh("x")
        return Lam(y, x.dom, eta_expand(App(t, eta_expand(Var(y), x.dom, names)), x.cod, names))
    if isinstance(x, ProdT):
        a, b = names.fresh("a"), names.fresh("b")
        return LetPair(t, a, b, Pair(eta_expand(Var(a), x.left, names), eta_expand(Var(b), x.right, names)))
    raise TypeError(x)


def cps_translate(d: Derivation, names: NameSupply | None = None) -> Derivation:
    """Translate a source derivation row by row. Every node of the result
    keeps its source node under ``side['source']``."""
    if names is None:
        avoid = set()
        for n in d.walk():
            avoid |= src.all_names(n.term)
            avoid |= {c.name for c in n.ctx}
        names = NameSupply(avoid)
    return _translate(d, names)


def _ctx(d: Derivation) -> tuple[Decl, ...]:
    return tuple(Decl(c.name, lifted_type(c.type)) for c in d.ctx)


def _translate(d: Derivation, names: NameSupply) -> Derivation:
    prem = tuple(_translate(p, names) for p in d.premises)
    ty = lifted_type(d.type)
    r = d.rule
    if r == "ax":
        (c,) = d.ctx
        term = eta_expand(Var(c.name), lifted_type(c.type), names)
    elif r in ("1i", "num"):
        base = src.UNIT_T if r == "1i" else src.NAT_T
        k = names.fresh("k")
        term = Lam(k, neg(base), App(Var(k), STAR if r == "1i" else Num(d.term.n)))
    elif r == "→i":
        (body,) = prem
        lam = d.term
        p, k = names.fresh("p"), names.fresh("k")
        term = Lam(p, cont_type(d.type), LetPair(Var(p), lam.var, k, App(body.term, Var(k))))
    elif r == "→e":
        s, t = prem
        k = names.fresh("k")
        term = Lam(k, cont_type(d.type), App(s.term, Pair(t.term, Var(k))))
    elif r == "add":
        s, t = prem
        k, x, y = names.fresh("k"), names.fresh("m"), names.fresh("n")
        inner = Lam(y, src.NAT_T, App(Var(k), src.Add(Var(x), Var(y))))
        term = Lam(k, neg(src.NAT_T), App(s.term, Lam(x, src.NAT_T, App(t.term, inner))))
    elif r == "if":
        s, t1, t2 = prem
        k, x, y1, y2 = names.fresh("k"), names.fresh("m"), names.fresh("n"), names.fresh("n")
        branch1 = App(t1.term, Lam(y1, src.NAT_T, App(Var(k), Var(y1))))
        branch2 = App(t2.term, Lam(y2, src.NAT_T, App(Var(k), Var(y2))))
        term = Lam(k, neg(src.NAT_T), App(s.term, Lam(x, src.NAT_T, src.If(Var(x), branch1, branch2))))
    elif r in ("weak", "exch"):
        term = prem[0].term
    elif r == "contr":
        x, y, z = d.side["var"], d.side["left"], d.side["right"]
        xty = lifted_type(next(c.type for c in d.ctx if c.name == x))
        term = src.subst(prem[0].term, y, eta_expand(Var(x), xty, names))
        term = src.subst(term, z, eta_expand(Var(x), xty, names))
    elif r == "fix":
        term = _fix_term(d.term.at, names)
    else:
        raise src.TypeCheckError(f"no CPS row for rule {r}")
    return Derivation(r, _ctx(d), term, ty, prem, {**d.side, "source": d}, d.fragment)


def _fix_term(x: SourceType, names: NameSupply) -> SourceTerm:
    """fn <f,k>. fix (fn g. fn k1. f <eta g, eta k1>) (eta k), with every
    variable occurrence eta-expanded."""
    xbar, kx = lifted_type(x), cont_type(x)
    w, f, k, g, k1 = (names.fresh(b) for b in ("w", "f", "k", "g", "k"))
    step = Lam(g, xbar, Lam(k1, kx, App(Var(f), Pair(eta_expand(Var(g), xbar, names),
                                                      eta_expand(Var(k1), kx, names)))))
    body = App(App(Fix(xbar), step), eta_expand(Var(k), kx, names))
    return Lam(w, cont_type(Arrow(Arrow(x, x), x)), LetPair(Var(w), f, k, body))


def validate_cps(d: Derivation) -> None:
    """Re-typecheck every node of a translated derivation."""
    for n in d.walk():
        env = {c.name: c.type for c in n.ctx}
        got = src.synth_type(env, n.term)
        if got != n.type:
            raise src.TypeCheckError(
                f"CPS node {n.rule} has type {src.show_cps_type(got)}, expected {src.show_cps_type(n.type)}")
        if src.free_vars(n.term) - set(env):
            raise src.TypeCheckError("CPS term has free variables outside its context")
