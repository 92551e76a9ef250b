"""Source language: a call-by-name PCF variant.

ASTs for types and terms (including the product and bottom forms used by
CPS images), a parser and printer for the concrete syntax, canonical typing
derivations, subexponential inference and a reference evaluator.
"""

from __future__ import annotations

import itertools
import re
import sys
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from . import target as tg


class SourceError(Exception):
    pass


class ParseError(SourceError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line, self.col = line, col


class TypeCheckError(SourceError):
    pass


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class UnitT:
    pass


@dataclass(frozen=True)
class NatT:
    pass


@dataclass(frozen=True)
class Arrow:
    dom: "SourceType"
    cod: "SourceType"


@dataclass(frozen=True)
class ProdT:
    left: "SourceType"
    right: "SourceType"


@dataclass(frozen=True)
class BotT:
    pass


SourceType = Union[UnitT, NatT, Arrow, ProdT, BotT]

UNIT_T = UnitT()
NAT_T = NatT()
BOT = BotT()


def neg(ty: SourceType) -> Arrow:
    """``not A``, the type ``A -> bottom``."""
    return Arrow(ty, BOT)


def is_user_type(ty: SourceType) -> bool:
    if isinstance(ty, (UnitT, NatT)):
        return True
    if isinstance(ty, Arrow):
        return is_user_type(ty.dom) and is_user_type(ty.cod)
    return False


def show_source_type(ty: SourceType, prec: int = 0) -> str:
    if isinstance(ty, UnitT):
        return "Unit"
    if isinstance(ty, NatT):
        return "Nat"
    if isinstance(ty, BotT):
        return "Bot"
    if isinstance(ty, Arrow):
        text = f"{show_source_type(ty.dom, 1)} -> {show_source_type(ty.cod, 0)}"
        return f"({text})" if prec > 0 else text
    if isinstance(ty, ProdT):
        text = f"{show_source_type(ty.left, 2)} * {show_source_type(ty.right, 1)}"
        return f"({text})" if prec > 0 else text
    raise TypeError(ty)


def show_cps_type(ty: SourceType, prec: int = 0) -> str:
    """Notation of CPS images: ``¬A`` for ``A -> ⊥``, ``×`` for products."""
    if isinstance(ty, UnitT):
        return "1"
    if isinstance(ty, NatT):
        return "ℕ"
    if isinstance(ty, BotT):
        return "⊥"
    if isinstance(ty, Arrow):
        if isinstance(ty.cod, BotT):
            return "¬" + show_cps_type(ty.dom, 3)
        text = f"{show_cps_type(ty.dom, 1)} → {show_cps_type(ty.cod, 0)}"
        return f"({text})" if prec > 0 else text
    if isinstance(ty, ProdT):
        text = f"{show_cps_type(ty.left, 2)} × {show_cps_type(ty.right, 2)}"
        return f"({text})" if prec > 1 else text
    raise TypeError(ty)


# ---------------------------------------------------------------------------
# Terms

_binder_counter = itertools.count(1)


def _next_index() -> int:
    return next(_binder_counter)


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Lam:
    var: str
    annot: SourceType
    body: "SourceTerm"
    index: int = field(default_factory=_next_index, compare=False)


@dataclass(frozen=True)
class App:
    fun: "SourceTerm"
    arg: "SourceTerm"


@dataclass(frozen=True)
class Num:
    n: int


@dataclass(frozen=True)
class Add:
    left: "SourceTerm"
    right: "SourceTerm"


@dataclass(frozen=True)
class If:
    cond: "SourceTerm"
    then: "SourceTerm"
    else_: "SourceTerm"


@dataclass(frozen=True)
class Fix:
    at: SourceType


@dataclass(frozen=True)
class Pair:
    left: "SourceTerm"
    right: "SourceTerm"


@dataclass(frozen=True)
class LetPair:
    scrut: "SourceTerm"
    x: str
    y: str
    body: "SourceTerm"
    index: int = field(default_factory=_next_index, compare=False)


SourceTerm = Union[Star, Var, Lam, App, Num, Add, If, Fix, Pair, LetPair]

STAR = Star()


def free_vars(t: SourceTerm) -> frozenset[str]:
    if isinstance(t, Var):
        return frozenset([t.name])
    if isinstance(t, Lam):
        return free_vars(t.body) - {t.var}
    if isinstance(t, (App,)):
        return free_vars(t.fun) | free_vars(t.arg)
    if isinstance(t, (Add, Pair)):
        return free_vars(t.left) | free_vars(t.right)
    if isinstance(t, If):
        return free_vars(t.cond) | free_vars(t.then) | free_vars(t.else_)
    if isinstance(t, LetPair):
        return free_vars(t.scrut) | (free_vars(t.body) - {t.x, t.y})
    return frozenset()


def occurrences(t: SourceTerm, name: str) -> int:
    if isinstance(t, Var):
        return int(t.name == name)
    if isinstance(t, Lam):
        return 0 if t.var == name else occurrences(t.body, name)
    if isinstance(t, App):
        return occurrences(t.fun, name) + occurrences(t.arg, name)
    if isinstance(t, (Add, Pair)):
        return occurrences(t.left, name) + occurrences(t.right, name)
    if isinstance(t, If):
        return occurrences(t.cond, name) + occurrences(t.then, name) + occurrences(t.else_, name)
    if isinstance(t, LetPair):
        inner = 0 if name in (t.x, t.y) else occurrences(t.body, name)
        return occurrences(t.scrut, name) + inner
    return 0


def all_names(t: SourceTerm) -> set[str]:
    out: set[str] = set()

    def go(t):
        if isinstance(t, Var):
            out.add(t.name)
        elif isinstance(t, Lam):
            out.add(t.var)
            go(t.body)
        elif isinstance(t, App):
            go(t.fun)
            go(t.arg)
        elif isinstance(t, (Add, Pair)):
            go(t.left)
            go(t.right)
        elif isinstance(t, If):
            go(t.cond)
            go(t.then)
            go(t.else_)
        elif isinstance(t, LetPair):
            out.update((t.x, t.y))
            go(t.scrut)
            go(t.body)

    go(t)
    return out


def term_size(t: SourceTerm) -> int:
    if isinstance(t, Lam):
        return 1 + term_size(t.body)
    if isinstance(t, App):
        return 1 + term_size(t.fun) + term_size(t.arg)
    if isinstance(t, (Add, Pair)):
        return 1 + term_size(t.left) + term_size(t.right)
    if isinstance(t, If):
        return 1 + term_size(t.cond) + term_size(t.then) + term_size(t.else_)
    if isinstance(t, LetPair):
        return 1 + term_size(t.scrut) + term_size(t.body)
    return 1


def rename_free(t: SourceTerm, old: str, new: str) -> SourceTerm:
    """Replace free occurrences of ``old`` by the variable ``new``; binders are
    assumed distinct from ``new``."""
    return subst(t, old, Var(new))


def subst(t: SourceTerm, name: str, repl: SourceTerm) -> SourceTerm:
    """Capture-avoiding substitution ``t[repl/name]``."""
    if name not in free_vars(t):
        return t
    fv = free_vars(repl)

    def fresh(base, avoid):
        for k in itertools.count(1):
            cand = f"{base}{k}"
            if cand not in avoid:
                return cand

    if isinstance(t, Var):
        return repl
    if isinstance(t, Lam):
        if t.var in fv:
            new = fresh(t.var, fv | all_names(t.body) | {name})
            return Lam(new, t.annot, subst(subst(t.body, t.var, Var(new)), name, repl), t.index)
        return Lam(t.var, t.annot, subst(t.body, name, repl), t.index)
    if isinstance(t, App):
        return App(subst(t.fun, name, repl), subst(t.arg, name, repl))
    if isinstance(t, Add):
        return Add(subst(t.left, name, repl), subst(t.right, name, repl))
    if isinstance(t, Pair):
        return Pair(subst(t.left, name, repl), subst(t.right, name, repl))
    if isinstance(t, If):
        return If(subst(t.cond, name, repl), subst(t.then, name, repl), subst(t.else_, name, repl))
    if isinstance(t, LetPair):
        scrut = subst(t.scrut, name, repl)
        x, y, body = t.x, t.y, t.body
        avoid = fv | all_names(body) | {name}
        if x in fv:
            nx = fresh(x, avoid | {y})
            body, x = subst(body, x, Var(nx)), nx
        if y in fv:
            ny = fresh(y, avoid | {x})
            body, y = subst(body, y, Var(ny)), ny
        return LetPair(scrut, x, y, subst(body, name, repl), t.index)
    return t


def alpha_equiv(a: SourceTerm, b: SourceTerm) -> bool:
    return _debruijn(a, {}) == _debruijn(b, {})


def _debruijn(t: SourceTerm, env: Mapping[str, int], depth: int = 0):
    if isinstance(t, Var):
        return ("bv", depth - env[t.name]) if t.name in env else ("fv", t.name)
    if isinstance(t, Lam):
        return ("lam", t.annot, _debruijn(t.body, {**env, t.var: depth}, depth + 1))
    if isinstance(t, App):
        return ("app", _debruijn(t.fun, env, depth), _debruijn(t.arg, env, depth))
    if isinstance(t, Add):
        return ("add", _debruijn(t.left, env, depth), _debruijn(t.right, env, depth))
    if isinstance(t, Pair):
        return ("pair", _debruijn(t.left, env, depth), _debruijn(t.right, env, depth))
    if isinstance(t, If):
        return ("if",) + tuple(_debruijn(s, env, depth) for s in (t.cond, t.then, t.else_))
    if isinstance(t, LetPair):
        inner = {**env, t.x: depth, t.y: depth + 1}
        return ("let", _debruijn(t.scrut, env, depth), _debruijn(t.body, inner, depth + 2))
    return t


def number_binders(t: SourceTerm, start: int = 1) -> SourceTerm:
    """Reassign binder indices in pre-order (outer binders first)."""
    counter = itertools.count(start)

    def go(t):
        if isinstance(t, Lam):
            i = next(counter)
            return Lam(t.var, t.annot, go(t.body), i)
        if isinstance(t, LetPair):
            i = next(counter)
            scrut = go(t.scrut)
            return LetPair(scrut, t.x, t.y, go(t.body), i)
        if isinstance(t, App):
            return App(go(t.fun), go(t.arg))
        if isinstance(t, Add):
            return Add(go(t.left), go(t.right))
        if isinstance(t, Pair):
            return Pair(go(t.left), go(t.right))
        if isinstance(t, If):
            return If(go(t.cond), go(t.then), go(t.else_))
        return t

    return go(t)


def uniquify_binders(t: SourceTerm, avoid: set[str]) -> SourceTerm:
    """Rename bound variables so that every binder is distinct from each other
    and from ``avoid`` (the result is alpha-equivalent)."""
    used = set(avoid)

    def pick(name):
        if name not in used:
            used.add(name)
            return name
        for k in itertools.count(1):
            cand = f"{name}{k}"
            if cand not in used and cand not in avoid:
                used.add(cand)
                return cand

    def go(t, env):
        if isinstance(t, Var):
            return Var(env.get(t.name, t.name))
        if isinstance(t, Lam):
            new = pick(t.var)
            return Lam(new, t.annot, go(t.body, {**env, t.var: new}), t.index)
        if isinstance(t, LetPair):
            scrut = go(t.scrut, env)
            nx, ny = pick(t.x), pick(t.y)
            return LetPair(scrut, nx, ny, go(t.body, {**env, t.x: nx, t.y: ny}), t.index)
        if isinstance(t, App):
            return App(go(t.fun, env), go(t.arg, env))
        if isinstance(t, Add):
            return Add(go(t.left, env), go(t.right, env))
        if isinstance(t, Pair):
            return Pair(go(t.left, env), go(t.right, env))
        if isinstance(t, If):
            return If(go(t.cond, env), go(t.then, env), go(t.else_, env))
        return t

    used |= free_vars(t)
    return go(t, {})


# ---------------------------------------------------------------------------
# Concrete syntax

_RESERVED = {"fn", "if", "then", "else", "fix", "Unit", "Nat"}
_SRC_TOKEN = re.compile(r"(?P<ws>\s+)|(?P<num>\d+)|(?P<id>[A-Za-z_][A-Za-z0-9_']*)|(?P<sym>=>|->|\(\)|[():+\[\]])")


class _SrcLexer:
    def __init__(self, text: str):
        self.toks = []
        pos, line, col = 0, 1, 1
        while pos < len(text):
            m = _SRC_TOKEN.match(text, pos)
            if not m:
                raise ParseError(f"unexpected character {text[pos]!r}", line, col)
            kind = m.lastgroup
            value = m.group(kind)
            if kind != "ws":
                self.toks.append((kind, value, line, col))
            for ch in value:
                if ch == "\n":
                    line, col = line + 1, 1
                else:
                    col += 1
            pos = m.end()
        self.eof = ("eof", "", line, col)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else self.eof

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ParseError(message, tok[2], tok[3])

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def ident(self):
        tok = self.next()
        if tok[0] != "id":
            raise self.error(f"expected an identifier, found {tok[1] or 'end of input'!r}", tok)
        if tok[1] in _RESERVED:
            raise self.error(f"reserved word {tok[1]!r} used as an identifier", tok)
        return tok[1]


def _p_type(lx: _SrcLexer) -> SourceType:
    left = _p_type_atom(lx)
    if lx.peek()[1] == "->":
        lx.next()
        return Arrow(left, _p_type(lx))
    return left


def _p_type_atom(lx: _SrcLexer) -> SourceType:
    tok = lx.next()
    if tok[1] == "Unit":
        return UNIT_T
    if tok[1] == "Nat":
        return NAT_T
    if tok[1] == "(":
        ty = _p_type(lx)
        lx.expect(")")
        return ty
    raise lx.error(f"expected a type, found {tok[1] or 'end of input'!r}", tok)


def _p_term(lx: _SrcLexer) -> SourceTerm:
    tok = lx.peek()
    if tok[1] == "fn":
        lx.next()
        x = lx.ident()
        lx.expect(":")
        ty = _p_type(lx)
        lx.expect("=>")
        return Lam(x, ty, _p_term(lx))
    if tok[1] == "if":
        lx.next()
        c = _p_term(lx)
        lx.expect("then")
        t = _p_term(lx)
        lx.expect("else")
        e = _p_term(lx)
        return If(c, t, e)
    return _p_sum(lx)


def _p_sum(lx: _SrcLexer) -> SourceTerm:
    left = _p_app(lx)
    while lx.peek()[1] == "+":
        lx.next()
        left = Add(left, _p_app(lx))
    return left


def _starts_atom(tok) -> bool:
    return tok[0] in ("num",) or (tok[0] == "id" and tok[1] not in _RESERVED - {"fix"}) or tok[1] in ("(", "()")


def _p_app(lx: _SrcLexer) -> SourceTerm:
    head = _p_atom(lx)
    while _starts_atom(lx.peek()):
        head = App(head, _p_atom(lx))
    return head


def _p_atom(lx: _SrcLexer) -> SourceTerm:
    tok = lx.next()
    kind, value = tok[0], tok[1]
    if kind == "num":
        return Num(int(value))
    if value == "()":
        return STAR
    if value == "(":
        t = _p_term(lx)
        lx.expect(")")
        return t
    if value == "fix":
        if lx.peek()[1] != "[":
            raise lx.error("fix needs an explicit type argument: fix[X]")
        lx.next()
        ty = _p_type(lx)
        lx.expect("]")
        return Fix(ty)
    if kind == "id":
        if value in _RESERVED:
            raise lx.error(f"unexpected reserved word {value!r}", tok)
        return Var(value)
    raise lx.error(f"unexpected {value or 'end of input'!r}", tok)


def parse_source(text: str) -> SourceTerm:
    lx = _SrcLexer(text)
    t = _p_term(lx)
    if lx.peek()[0] != "eof":
        raise lx.error(f"unexpected {lx.peek()[1]!r} after the end of the term")
    return number_binders(t)


def parse_source_type(text: str) -> SourceType:
    lx = _SrcLexer(text)
    ty = _p_type(lx)
    if lx.peek()[0] != "eof":
        raise lx.error("trailing input after type")
    return ty


def pretty(t: SourceTerm, prec: int = 0) -> str:
    """Concrete syntax accepted by ``parse_source``.
    Precedence: 0 term, 1 sum operand, 2 application head, 3 atom."""
    if isinstance(t, Star):
        return "()"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Num):
        return str(t.n)
    if isinstance(t, Fix):
        return f"fix[{show_source_type(t.at)}]"
    if isinstance(t, Lam):
        text = f"fn {t.var}: {show_source_type(t.annot)} => {pretty(t.body, 0)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, If):
        text = f"if {pretty(t.cond)} then {pretty(t.then)} else {pretty(t.else_)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, Add):
        text = f"{pretty(t.left, 1)} + {pretty(t.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(t, App):
        text = f"{pretty(t.fun, 2)} {pretty(t.arg, 3)}"
        return f"({text})" if prec > 2 else text
    raise SourceError(f"{type(t).__name__} has no surface syntax")


def show_cps(t: SourceTerm, prec: int = 0) -> str:
    """Notation for CPS images: ``λx. t``, juxtaposition, ``<s, t>``."""
    if isinstance(t, Star):
        return "*"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Num):
        return str(t.n)
    if isinstance(t, Fix):
        return f"fix_{{{show_cps_type(t.at)}}}"
    if isinstance(t, Pair):
        return f"<{show_cps(t.left)}, {show_cps(t.right)}>"
    if isinstance(t, Lam):
        text = f"λ{t.var}. {show_cps(t.body)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, LetPair):
        text = f"let {show_cps(t.scrut)} be <{t.x}, {t.y}> in {show_cps(t.body)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, If):
        text = f"if {show_cps(t.cond)} then {show_cps(t.then)} else {show_cps(t.else_)}"
        return f"({text})" if prec > 0 else text
    if isinstance(t, Add):
        text = f"{show_cps(t.left, 1)} + {show_cps(t.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(t, App):
        text = f"{show_cps(t.fun, 2)} {show_cps(t.arg, 3)}"
        return f"({text})" if prec > 2 else text
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Type synthesis (no derivation), used for CPS images and the generator


def synth_type(ctx: Mapping[str, SourceType], t: SourceTerm) -> SourceType:
    """Type of ``t`` allowing arbitrary reuse of variables (products and
    bottom included). Raises ``TypeCheckError``."""
    if isinstance(t, Star):
        return UNIT_T
    if isinstance(t, Num):
        return NAT_T
    if isinstance(t, Var):
        if t.name not in ctx:
            raise TypeCheckError(f"unbound variable {t.name}")
        return ctx[t.name]
    if isinstance(t, Fix):
        return Arrow(Arrow(t.at, t.at), t.at)
    if isinstance(t, Lam):
        return Arrow(t.annot, synth_type({**ctx, t.var: t.annot}, t.body))
    if isinstance(t, App):
        f = synth_type(ctx, t.fun)
        if not isinstance(f, Arrow):
            raise TypeCheckError(f"applying a term of type {show_source_type(f)}")
        a = synth_type(ctx, t.arg)
        if a != f.dom:
            raise TypeCheckError(
                f"argument type {show_source_type(a)} does not match {show_source_type(f.dom)}")
        return f.cod
    if isinstance(t, Add):
        for s in (t.left, t.right):
            if synth_type(ctx, s) != NAT_T:
                raise TypeCheckError("addition of non-numbers")
        return NAT_T
    if isinstance(t, If):
        if synth_type(ctx, t.cond) != NAT_T:
            raise TypeCheckError("if condition must be a number")
        a, b = synth_type(ctx, t.then), synth_type(ctx, t.else_)
        if a != b:
            raise TypeCheckError("if branches have different types")
        return a
    if isinstance(t, Pair):
        return ProdT(synth_type(ctx, t.left), synth_type(ctx, t.right))
    if isinstance(t, LetPair):
        p = synth_type(ctx, t.scrut)
        if not isinstance(p, ProdT):
            raise TypeCheckError("let-pair on a non-product")
        return synth_type({**ctx, t.x: p.left, t.y: p.right}, t.body)
    raise TypeError(t)


# ---------------------------------------------------------------------------
# Derivations

FRAGMENTS = ("core", "lin", "stl", "source")
_RULE_FRAGMENT = {
    "ax": "core", "1i": "core", "weak": "core", "exch": "core", "→i": "core", "→e": "core",
    "num": "lin", "add": "lin", "if": "lin", "contr": "stl", "fix": "source",
    "struct": "stl", "×i": "core", "×e": "core",
}

_node_ids = itertools.count()


@dataclass(frozen=True)
class Decl:
    name: str
    type: object  # SourceType, or SubexpType in annotated derivations
    annot: tg.TargetType | None = None


@dataclass(frozen=True, eq=False)
class Derivation:
    rule: str
    ctx: tuple[Decl, ...]
    term: SourceTerm
    type: object
    premises: tuple["Derivation", ...] = ()
    side: Mapping = field(default_factory=dict)
    fragment: str = "core"
    nid: int = field(default_factory=lambda: next(_node_ids))

    def walk(self):
        """Pre-order iteration over all nodes."""
        stack = [self]
        while stack:
            d = stack.pop()
            yield d
            stack.extend(reversed(d.premises))

    def ctx_names(self) -> list[str]:
        return [d.name for d in self.ctx]


def _join_fragment(*names: str) -> str:
    return max(names, key=FRAGMENTS.index)


def _node(rule, ctx, term, ty, premises=(), side=None) -> Derivation:
    frag = _join_fragment(_RULE_FRAGMENT[rule], *(p.fragment for p in premises))
    return Derivation(rule, tuple(ctx), term, ty, tuple(premises), side or {}, frag)


class _Names:
    def __init__(self, avoid):
        self.avoid = set(avoid)

    def fresh(self, base):
        for k in itertools.count(1):
            cand = f"{base}_{k}"
            if cand not in self.avoid:
                self.avoid.add(cand)
                return cand


def typecheck_stl(term: SourceTerm, context: Sequence[tuple[str, SourceType]] = (),
                  expected: SourceType | None = None, fragment: str | None = None) -> Derivation:
    """Canonical derivation of ``context |- term : expected``.

    Contraction is placed where a variable enters the context (the lowest
    possible point), weakening at the leaves, and an exchange node restores
    the context order below rules that split the context."""
    names = [n for n, _ in context]
    if len(set(names)) != len(names):
        raise TypeCheckError("duplicate variable in context")
    for _, ty in context:
        if not is_user_type(ty):
            raise TypeCheckError("context types must be source types")
    term = uniquify_binders(term, set(names))
    ctx_map = dict(context)
    unbound = free_vars(term) - set(names)
    if unbound:
        raise TypeCheckError(f"unbound variable {sorted(unbound)[0]}")
    synth_type(ctx_map, term)  # early, readable type errors
    supply = _Names(set(names) | all_names(term))
    d = _derive([Decl(n, ty) for n, ty in context], term, supply)
    if expected is not None and d.type != expected:
        raise TypeCheckError(
            f"term has type {show_source_type(d.type)}, expected {show_source_type(expected)}")
    if fragment is not None and FRAGMENTS.index(d.fragment) > FRAGMENTS.index(fragment):
        raise TypeCheckError(f"term needs fragment {d.fragment}, not within {fragment}")
    return d


def _derive(ctx: list[Decl], t: SourceTerm, supply: _Names) -> Derivation:
    """Contract every variable used more than once, then derive linearly."""
    shared = [d for d in ctx if occurrences(t, d.name) >= 2]
    if not shared:
        return _derive_linear(ctx, t, supply)
    premise_ctx: list[Decl] = []
    copies: dict[str, list[str]] = {}
    body = t
    for d in ctx:
        if d in shared:
            k = occurrences(t, d.name)
            names = [supply.fresh(d.name) for _ in range(k)]
            copies[d.name] = names
            body = _rename_occurrences(body, d.name, names)
            premise_ctx.extend(Decl(n, d.type) for n in names)
        else:
            premise_ctx.append(d)
    deriv = _derive_linear(premise_ctx, body, supply)
    for d in shared:
        names = copies[d.name]
        # merge the last two copies repeatedly; the final merge yields the original name
        while len(names) > 1:
            y, z = names[-2], names[-1]
            merged = d.name if len(names) == 2 else supply.fresh(d.name)
            new_ctx = []
            for c in deriv.ctx:
                if c.name == y:
                    new_ctx.append(Decl(merged, d.type))
                elif c.name != z:
                    new_ctx.append(c)
            term = subst(subst(deriv.term, y, Var(merged)), z, Var(merged))
            deriv = _node("contr", new_ctx, term, deriv.type, [deriv], {"var": merged, "left": y, "right": z})
            names = names[:-2] + [merged]
    return deriv


def _rename_occurrences(t: SourceTerm, name: str, names: list[str]) -> SourceTerm:
    """Give the free occurrences of ``name`` the distinct names ``names``, left to right."""
    it = iter(names)

    def go(t):
        if isinstance(t, Var):
            return Var(next(it)) if t.name == name else t
        if isinstance(t, Lam):
            return t if t.var == name else Lam(t.var, t.annot, go(t.body), t.index)
        if isinstance(t, App):
            f = go(t.fun)
            return App(f, go(t.arg))
        if isinstance(t, Add):
            l = go(t.left)
            return Add(l, go(t.right))
        if isinstance(t, If):
            c = go(t.cond)
            a = go(t.then)
            return If(c, a, go(t.else_))
        return t

    return go(t)


def _weaken_to(d: Derivation, ctx: list[Decl]) -> Derivation:
    """Insert the declarations of ``ctx`` missing from ``d`` by weakening, so
    that the result has exactly ``ctx`` (whose order must extend ``d.ctx``)."""
    present = {c.name for c in d.ctx}
    for i, c in enumerate(ctx):
        if c.name in present:
            continue
        cur = list(d.ctx)
        # position: after all declarations that precede c in ctx
        before = {x.name for x in ctx[:i]}
        pos = 0
        for j, e in enumerate(cur):
            if e.name in before:
                pos = j + 1
        new_ctx = cur[:pos] + [c] + cur[pos:]
        d = _node("weak", new_ctx, d.term, d.type, [d], {"var": c.name, "position": pos})
        present.add(c.name)
    return d


def _reorder(d: Derivation, ctx: list[Decl]) -> Derivation:
    names = [c.name for c in d.ctx]
    want = [c.name for c in ctx]
    if names == want:
        return d
    perm = tuple(names.index(n) for n in want)
    return _node("exch", ctx, d.term, d.type, [d], {"perm": perm})


def _split(ctx: list[Decl], parts: list[SourceTerm]) -> list[list[Decl]]:
    """Assign each declaration to the part that uses it; unused ones go to the first part."""
    out: list[list[Decl]] = [[] for _ in parts]
    for c in ctx:
        for k, p in enumerate(parts):
            if c.name in free_vars(p):
                out[k].append(c)
                break
        else:
            out[0].append(c)
    return out


def _derive_linear(ctx: list[Decl], t: SourceTerm, supply: _Names) -> Derivation:
    if isinstance(t, Var):
        decl = next(c for c in ctx if c.name == t.name)
        return _weaken_to(_node("ax", [decl], t, decl.type), ctx)
    if isinstance(t, Star):
        return _weaken_to(_node("1i", [], t, UNIT_T), ctx)
    if isinstance(t, Num):
        return _weaken_to(_node("num", [], t, NAT_T), ctx)
    if isinstance(t, Fix):
        if not is_user_type(t.at):
            raise TypeCheckError("fix type must be a source type")
        return _weaken_to(_node("fix", [], t, Arrow(Arrow(t.at, t.at), t.at)), ctx)
    if isinstance(t, Lam):
        if not is_user_type(t.annot):
            raise TypeCheckError("binder annotations must be source types")
        body = _derive(ctx + [Decl(t.var, t.annot)], t.body, supply)
        return _node("→i", ctx, Lam(t.var, t.annot, body.term, t.index), Arrow(t.annot, body.type), [body])
    if isinstance(t, App):
        gs, gt = _split(ctx, [t.fun, t.arg])
        ds = _derive_linear(gs, t.fun, supply)
        dt = _derive_linear(gt, t.arg, supply)
        if not isinstance(ds.type, Arrow) or ds.type.dom != dt.type:
            raise TypeCheckError("ill-typed application")
        d = _node("→e", gs + gt, App(ds.term, dt.term), ds.type.cod, [ds, dt])
        return _reorder(d, ctx)
    if isinstance(t, Add):
        gs, gt = _split(ctx, [t.left, t.right])
        ds = _derive_linear(gs, t.left, supply)
        dt = _derive_linear(gt, t.right, supply)
        if ds.type != NAT_T or dt.type != NAT_T:
            raise TypeCheckError("addition of non-numbers")
        return _reorder(_node("add", gs + gt, Add(ds.term, dt.term), NAT_T, [ds, dt]), ctx)
    if isinstance(t, If):
        gs, g1, g2 = _split(ctx, [t.cond, t.then, t.else_])
        ds = _derive_linear(gs, t.cond, supply)
        d1 = _derive_linear(g1, t.then, supply)
        d2 = _derive_linear(g2, t.else_, supply)
        if ds.type != NAT_T or d1.type != NAT_T or d2.type != NAT_T:
            raise TypeCheckError("if expects numbers in all three positions")
        d = _node("if", gs + g1 + g2, If(ds.term, d1.term, d2.term), NAT_T, [ds, d1, d2])
        return _reorder(d, ctx)
    raise TypeCheckError(f"{type(t).__name__} is not part of the source language")


def validate_derivation(d: Derivation) -> None:
    """Check every node against its rule schema; raise ``TypeCheckError``."""
    for node in d.walk():
        _validate_node(node)


def _same_type(a, b) -> bool:
    if isinstance(a, SubArrow) and isinstance(b, SubArrow):
        return tg.types_equal(a.annot, b.annot) and _same_type(a.dom, b.dom) and _same_type(a.cod, b.cod)
    return a == b


def _same_decl(a: Decl, b: Decl) -> bool:
    if a.name != b.name or not _same_type(a.type, b.type):
        return False
    if a.annot is None or b.annot is None:
        return a.annot is None and b.annot is None
    return tg.types_equal(a.annot, b.annot)


def _same_ctx(a: Sequence[Decl], b: Sequence[Decl]) -> bool:
    return len(a) == len(b) and all(_same_decl(x, y) for x, y in zip(a, b))


def _arrow_parts(ty):
    if isinstance(ty, Arrow):
        return None, ty.dom, ty.cod
    if isinstance(ty, SubArrow):
        return ty.annot, ty.dom, ty.cod
    return None


def _is_nat(ty) -> bool:
    return isinstance(ty, (NatT, ExpNat))


def _validate_node(n: Derivation) -> None:
    def fail(msg):
        raise TypeCheckError(f"invalid {n.rule} node: {msg}")

    p = n.premises
    annotated = any(c.annot is not None for c in n.ctx) or isinstance(n.type, (ExpUnit, ExpNat, SubArrow))
    if n.rule == "ax":
        if len(n.ctx) != 1 or n.term != Var(n.ctx[0].name) or not _same_type(n.ctx[0].type, n.type):
            fail("expected x:X |- x:X")
        if annotated and not tg.types_equal(n.ctx[0].annot, tg.UNIT):
            fail("axiom annotation must be unit")
    elif n.rule in ("1i", "num", "fix"):
        if n.ctx:
            fail("context must be empty")
        if n.rule == "1i" and (n.term != STAR or not isinstance(n.type, (UnitT, ExpUnit))):
            fail("expected |- * : 1")
        if n.rule == "num" and (not isinstance(n.term, Num) or not _is_nat(n.type)):
            fail("expected |- n : N")
        if n.rule == "fix":
            if not isinstance(n.term, Fix) or erase_type(n.type) != Arrow(Arrow(n.term.at, n.term.at), n.term.at):
                fail("expected |- fix_X : (X->X)->X")
            if annotated:
                outer = n.type
                step = outer.dom
                if not (_same_type(step.dom, step.cod) and _same_type(step.cod, outer.cod)):
                    fail("fix type must use one annotated X")
                if not tg.types_equal(outer.annot, list_type(step.annot)):
                    fail("fix annotation must be list(A)")
    elif n.rule == "weak":
        (q,) = p
        pos = n.side["position"]
        if not (_same_ctx(q.ctx, n.ctx[:pos] + n.ctx[pos + 1:]) and n.ctx[pos].name == n.side["var"]):
            fail("context mismatch")
        if q.term != n.term or not _same_type(q.type, n.type):
            fail("sequent mismatch")
    elif n.rule == "exch":
        (q,) = p
        perm = n.side["perm"]
        if sorted(perm) != list(range(len(q.ctx))) or not _same_ctx(n.ctx, [q.ctx[i] for i in perm]):
            fail("not a permutation of the premise context")
        if q.term != n.term or not _same_type(q.type, n.type):
            fail("sequent mismatch")
    elif n.rule == "→i":
        (q,) = p
        lam = n.term
        parts = _arrow_parts(n.type)
        if not isinstance(lam, Lam) or parts is None:
            fail("expected an abstraction")
        last = q.ctx[-1]
        if last.name != lam.var or not _same_ctx(q.ctx[:-1], n.ctx) or q.term != lam.body:
            fail("premise must bind the abstracted variable last")
        annot, dom, cod = parts
        if not _same_type(dom, last.type) or not _same_type(cod, q.type) or erase_type(dom) != lam.annot:
            fail("type mismatch")
        if annot is not None and not tg.types_equal(annot, last.annot):
            fail("arrow annotation must equal the binder's annotation")
    elif n.rule in ("→e", "add"):
        s, t = p
        if n.rule == "→e":
            parts = _arrow_parts(s.type)
            if parts is None or not _same_type(parts[1], t.type) or not _same_type(parts[2], n.type):
                fail("type mismatch")
            scale = parts[0]
            if n.term != App(s.term, t.term):
                fail("term mismatch")
        else:
            if not (_is_nat(s.type) and _is_nat(t.type) and _is_nat(n.type)) or n.term != Add(s.term, t.term):
                fail("expected numbers")
            scale = tg.NAT if annotated else None
        expect = list(s.ctx) + [_scaled(c, scale) for c in t.ctx]
        if not _same_ctx(n.ctx, expect):
            fail("context must be the premises' contexts side by side")
    elif n.rule == "if":
        s, t1, t2 = p
        if n.term != If(s.term, t1.term, t2.term) or not all(_is_nat(x.type) for x in (s, t1, t2, n)):
            fail("expected numbers")
        if not _same_ctx(n.ctx, list(s.ctx) + list(t1.ctx) + list(t2.ctx)):
            fail("context mismatch")
    elif n.rule == "contr":
        (q,) = p
        x, y, z = n.side["var"], n.side["left"], n.side["right"]
        names = [c.name for c in q.ctx]
        i = names.index(y)
        if names[i + 1] != z:
            fail("copies must be adjacent")
        cy, cz = q.ctx[i], q.ctx[i + 1]
        want = Decl(x, cy.type, tg.Sum(cy.annot, cz.annot) if annotated else None)
        if not _same_type(cy.type, cz.type):
            fail("copies must have the same type")
        if not _same_ctx(n.ctx, list(q.ctx[:i]) + [want] + list(q.ctx[i + 2:])):
            fail("context mismatch")
        if n.term != subst(subst(q.term, y, Var(x)), z, Var(x)) or not _same_type(q.type, n.type):
            fail("sequent mismatch")
    elif n.rule == "struct":
        (q,) = p
        x = n.side["var"]
        w: tg.Retraction = n.side["witness"]
        names = [c.name for c in q.ctx]
        i = names.index(x)
        old, new = q.ctx[i], n.ctx[i]
        if not (tg.types_equal(w.source, old.annot) and tg.types_equal(w.target, new.annot)):
            fail("witness does not match the annotations")
        tg.check_expr({w.x: w.source}, w.encode, w.target)
        tg.check_expr({w.y: w.target}, w.decode, w.source)
        rest_q = list(q.ctx[:i]) + list(q.ctx[i + 1:])
        rest_n = list(n.ctx[:i]) + list(n.ctx[i + 1:])
        if not _same_ctx(rest_q, rest_n) or old.name != new.name or not _same_type(old.type, new.type):
            fail("context mismatch")
        if q.term != n.term or not _same_type(q.type, n.type):
            fail("sequent mismatch")
    else:
        fail("unknown rule")


def _scaled(c: Decl, scale) -> Decl:
    if scale is None:
        return c
    return Decl(c.name, c.type, tg.Prod(scale, c.annot))


# ---------------------------------------------------------------------------
# Reference evaluator (call by name)


class Diverged(SourceError):
    pass


@dataclass
class _Closure:
    var: str
    body: SourceTerm
    env: dict


class _FixValue:
    pass


_FIX = _FixValue()


def run_deep(fn, *args, stack_mb: int = 512):
    """Run a deeply recursive function on a thread with a large stack."""
    result: list = []
    error: list = []

    def target():
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(10**6)
        try:
            result.append(fn(*args))
        except BaseException as exc:  # re-raised in the caller
            error.append(exc)
        finally:
            sys.setrecursionlimit(old)

    old_size = threading.stack_size()
    threading.stack_size(stack_mb * 1024 * 1024)
    try:
        th = threading.Thread(target=target)
        th.start()
        th.join()
    finally:
        threading.stack_size(old_size)
    if error:
        raise error[0]
    return result[0]


def reference_eval(term: SourceTerm, fuel: int = 10**6):
    """Big-step call-by-name value of a closed term of type N. One unit of
    fuel is spent per application node; raises ``Diverged`` when it runs out."""
    budget = [fuel]

    def force(th):
        return th()

    def ev(t, env):
        if isinstance(t, Num):
            return t.n
        if isinstance(t, Star):
            return ()
        if isinstance(t, Var):
            return force(env[t.name])
        if isinstance(t, Lam):
            return _Closure(t.var, t.body, env)
        if isinstance(t, Fix):
            return _FIX
        if isinstance(t, Add):
            return ev(t.left, env) + ev(t.right, env)
        if isinstance(t, If):
            return ev(t.then, env) if ev(t.cond, env) == 0 else ev(t.else_, env)
        if isinstance(t, App):
            budget[0] -= 1
            if budget[0] < 0:
                raise Diverged("fuel exhausted")
            f = ev(t.fun, env)
            arg_env = env
            return apply(f, lambda: ev(t.arg, arg_env))
        raise SourceError(f"cannot evaluate {type(t).__name__}")

    def apply(f, th):
        if isinstance(f, _Closure):
            return ev(f.body, {**f.env, f.var: th})
        if f is _FIX:
            # fix g = g (fix g)
            def unrolled():
                budget[0] -= 1
                if budget[0] < 0:
                    raise Diverged("fuel exhausted")
                return apply(_FIX, th)

            return apply(force(th), unrolled)
        raise SourceError("application of a non-function")

    try:
        return run_deep(ev, term, {})
    except RecursionError:
        raise Diverged("recursion too deep") from None


# ---------------------------------------------------------------------------
# Subexponential types


@dataclass(frozen=True)
class ExpUnit:
    pass


@dataclass(frozen=True)
class ExpNat:
    pass


@dataclass(frozen=True)
class SubArrow:
    annot: tg.TargetType
    dom: "SubexpType"
    cod: "SubexpType"


SubexpType = Union[ExpUnit, ExpNat, SubArrow]

EXP_UNIT = ExpUnit()
EXP_NAT = ExpNat()


def erase_type(ty) -> SourceType:
    """Drop subexponential annotations."""
    if isinstance(ty, ExpUnit):
        return UNIT_T
    if isinstance(ty, ExpNat):
        return NAT_T
    if isinstance(ty, SubArrow):
        return Arrow(erase_type(ty.dom), erase_type(ty.cod))
    return ty


def map_annots(ty, fn):
    if isinstance(ty, SubArrow):
        return SubArrow(fn(ty.annot), map_annots(ty.dom, fn), map_annots(ty.cod, fn))
    return ty


def show_subexp(ty, prec: int = 0, simplify: bool = False) -> str:
    if isinstance(ty, ExpUnit):
        return "1"
    if isinstance(ty, ExpNat):
        return "N"
    if isinstance(ty, SubArrow):
        annot = simplify_units(ty.annot) if simplify else ty.annot
        a = tg.show_type(annot)
        if not isinstance(annot, (tg.TUnit, tg.TNat, tg.TyVar)):
            a = f"({a})"
        text = f"{a}·{show_subexp(ty.dom, 1, simplify)} ⊸ {show_subexp(ty.cod, 0, simplify)}"
        return f"({text})" if prec > 0 else text
    raise TypeError(ty)


def list_type(a: tg.TargetType) -> tg.TargetType:
    """``list A = mu a. unit + A * a``."""
    name = "l"
    while name in tg.free_type_vars(a):
        name += "'"
    return tg.Mu(name, tg.Sum(tg.UNIT, tg.Prod(a, tg.TyVar(name))))


def simplify_units(ty: tg.TargetType) -> tg.TargetType:
    """Apply ``A*unit = A = unit*A`` everywhere (display and comparison only)."""
    if isinstance(ty, tg.Prod):
        l, r = simplify_units(ty.left), simplify_units(ty.right)
        if isinstance(r, tg.TUnit):
            return l
        if isinstance(l, tg.TUnit):
            return r
        return tg.Prod(l, r)
    if isinstance(ty, tg.Sum):
        return tg.Sum(simplify_units(ty.left), simplify_units(ty.right))
    if isinstance(ty, tg.Mu):
        return tg.Mu(ty.binder, simplify_units(ty.body))
    return ty


class _Unifier:
    """First-order unification over target types with variables; a cycle
    through a variable is closed with a recursive type."""

    def __init__(self):
        self.bound: dict[str, tg.TargetType] = {}
        self.counter = itertools.count()

    def fresh(self) -> tg.TyVar:
        return tg.TyVar(f"α{next(self.counter)}")

    def find(self, ty):
        while isinstance(ty, tg.TyVar) and ty.name in self.bound:
            ty = self.bound[ty.name]
        return ty

    def unify(self, a, b):
        a, b = self.find(a), self.find(b)
        if a == b:
            return
        if isinstance(a, tg.TyVar):
            self.bound[a.name] = b
            return
        if isinstance(b, tg.TyVar):
            self.bound[b.name] = a
            return
        if type(a) is not type(b):
            raise TypeCheckError(f"cannot unify {tg.show_type(a)} with {tg.show_type(b)}")
        if isinstance(a, (tg.Prod, tg.Sum)):
            self.unify(a.left, b.left)
            self.unify(a.right, b.right)
        elif isinstance(a, tg.Mu):
            if not tg.types_equal(a, b):
                raise TypeCheckError("cannot unify distinct recursive types")

    def unify_subexp(self, x, y):
        if isinstance(x, SubArrow) and isinstance(y, SubArrow):
            self.unify(x.annot, y.annot)
            self.unify_subexp(x.dom, y.dom)
            self.unify_subexp(x.cod, y.cod)
        elif type(x) is not type(y):
            raise TypeCheckError("subexponential types with different shapes")

    def resolve(self, ty, seen=()):
        """Substitute bindings (not constraint solutions)."""
        ty = self.find(ty)
        if isinstance(ty, tg.TyVar):
            return ty
        if isinstance(ty, tg.Prod):
            return tg.Prod(self.resolve(ty.left), self.resolve(ty.right))
        if isinstance(ty, tg.Sum):
            return tg.Sum(self.resolve(ty.left), self.resolve(ty.right))
        if isinstance(ty, tg.Mu):
            return tg.Mu(ty.binder, self.resolve(ty.body))
        return ty


def solve_recursive_system(eqs: Mapping[str, tg.TargetType], free_default=None,
                           force_mu: frozenset = frozenset()) -> dict[str, tg.TargetType]:
    """Closed solutions of ``a_i = F_i(a_1..a_n)`` with iso-recursive types.

    Strongly connected groups are solved by nesting (Bekic): the first member
    is bound by a ``mu`` around its equation with the rest of its group solved
    in terms of it. Unfolding every solution gives exactly its equation with
    the solutions substituted. A ``mu`` is omitted when its variable does not
    occur, except for the names in ``force_mu``, which always get one (so
    that they can be folded). Variables without an equation become
    ``free_default`` if given."""
    names = list(eqs)
    deps = {n: tg.free_type_vars(eqs[n]) & set(names) for n in names}
    sccs = _sccs(names, deps)
    solution: dict[str, tg.TargetType] = {}

    def close(ty):
        for n, s in solution.items():
            ty = tg.subst_type(ty, n, s)
        return ty

    for group in sccs:  # dependencies first
        local = {n: close(eqs[n]) for n in group}
        solved = _solve_group(local, group, force_mu)
        solution.update(solved)
    if free_default is not None:
        out = {}
        for n, s in solution.items():
            for v in tg.free_type_vars(s):
                s = tg.subst_type(s, v, free_default)
            out[n] = s
        return out
    return solution


def _bind(name: str, body: tg.TargetType, force_mu) -> tg.TargetType:
    if name in force_mu or name in tg.free_type_vars(body):
        return tg.Mu(name, body)
    return body


def _solve_group(eqs: dict[str, tg.TargetType], group: list[str], force_mu=frozenset()) -> dict[str, tg.TargetType]:
    if len(group) == 1:
        (n,) = group
        return {n: _bind(n, eqs[n], force_mu)}
    head, rest = group[0], group[1:]
    # solve the rest with the head left free
    rest_eqs = {n: eqs[n] for n in rest}
    rest_sol = _solve_subsystem(rest_eqs, force_mu)
    head_body = eqs[head]
    for n, s in rest_sol.items():
        head_body = tg.subst_type(head_body, n, s)
    head_sol = _bind(head, head_body, force_mu)
    out = {head: head_sol}
    for n, s in rest_sol.items():
        out[n] = tg.subst_type(s, head, head_sol)
    return out


def _solve_subsystem(eqs: dict[str, tg.TargetType], force_mu=frozenset()) -> dict[str, tg.TargetType]:
    names = list(eqs)
    deps = {n: tg.free_type_vars(eqs[n]) & set(names) for n in names}
    solution: dict[str, tg.TargetType] = {}
    for group in _sccs(names, deps):
        local = {}
        for n in group:
            ty = eqs[n]
            for m, s in solution.items():
                ty = tg.subst_type(ty, m, s)
            local[n] = ty
        solution.update(_solve_group(local, group, force_mu))
    return solution


def recursive_groups(eqs: Mapping[str, tg.TargetType]) -> list[list[str]]:
    """Strongly connected groups of an equation system that are genuinely
    recursive (several members, or one member mentioning itself)."""
    names = list(eqs)
    deps = {n: tg.free_type_vars(eqs[n]) & set(names) for n in names}
    return [g for g in _sccs(names, deps) if len(g) > 1 or g[0] in deps[g[0]]]


def _sccs(names: list[str], deps: Mapping[str, set]) -> list[list[str]]:
    """Tarjan's algorithm; groups come out dependencies first. Members keep
    the order of ``names``."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = itertools.count()
    order = {n: i for i, n in enumerate(names)}

    def visit(v):
        index[v] = low[v] = next(counter)
        stack.append(v)
        on_stack.add(v)
        for w in sorted(deps.get(v, ()), key=order.get):
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            group = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                group.append(w)
                if w == v:
                    break
            out.append(sorted(group, key=order.get))

    for n in names:
        if n not in index:
            visit(n)
    return out


def infer_subexp(d: Derivation) -> Derivation:
    """Annotate an stl derivation (fix allowed) with subexponentials.

    The derived rules of the annotated system are realized by explicit
    ``struct`` nodes: every axiom, application, addition and contraction is
    followed by a struct step into a fresh annotation variable. Each variable
    collects the types that must retract into it and is solved as the
    recursive sum of those types; struct witnesses come from the retraction
    search of the target module."""
    u = _Unifier()
    constraints: list[tuple[tg.TargetType, tg.TyVar]] = []
    var_types: dict[str, SubexpType] = {}

    def annotate(ty: SourceType) -> SubexpType:
        if isinstance(ty, UnitT):
            return EXP_UNIT
        if isinstance(ty, NatT):
            return EXP_NAT
        if isinstance(ty, Arrow):
            return SubArrow(u.fresh(), annotate(ty.dom), annotate(ty.cod))
        raise TypeCheckError("cannot annotate non-source types")

    def type_of(name: str, ty: SourceType) -> SubexpType:
        if name not in var_types:
            var_types[name] = annotate(ty)
        return var_types[name]

    # contraction copies share the annotated type of the merged variable
    for node in d.walk():
        if node.rule == "contr":
            x = node.side["var"]
            base = type_of(x, node.ctx[[c.name for c in node.ctx].index(x)].type)
            var_types.setdefault(node.side["left"], base)
            var_types.setdefault(node.side["right"], base)

    def struct_up(node: Derivation, name: str, source_annot) -> Derivation:
        alpha = u.fresh()
        constraints.append((source_annot, alpha))
        ctx = [Decl(c.name, c.type, alpha) if c.name == name else c for c in node.ctx]
        return Derivation("struct", tuple(ctx), node.term, node.type, (node,),
                          {"var": name, "source": None}, _join_fragment("stl", node.fragment))

    def go(n: Derivation) -> Derivation:
        side = {**n.side, "source": n}
        if n.rule == "ax":
            (c,) = n.ctx
            ty = type_of(c.name, c.type)
            leaf = Derivation("ax", (Decl(c.name, ty, tg.UNIT),), n.term, ty, (), side, n.fragment)
            return struct_up(leaf, c.name, tg.UNIT)
        if n.rule in ("1i", "num"):
            return Derivation(n.rule, (), n.term, EXP_UNIT if n.rule == "1i" else EXP_NAT, (), side, n.fragment)
        if n.rule == "fix":
            a = u.fresh()
            x = annotate(n.term.at)
            ty = SubArrow(list_type(a), SubArrow(a, x, x), x)
            return Derivation("fix", (), n.term, ty, (), {**side, "elem": a}, n.fragment)
        if n.rule == "weak":
            q = go(n.premises[0])
            pos = n.side["position"]
            c = n.ctx[pos]
            new = Decl(c.name, type_of(c.name, c.type), u.fresh())
            ctx = list(q.ctx[:pos]) + [new] + list(q.ctx[pos:])
            return Derivation("weak", tuple(ctx), n.term, q.type, (q,), side, n.fragment)
        if n.rule == "exch":
            q = go(n.premises[0])
            ctx = [q.ctx[i] for i in n.side["perm"]]
            return Derivation("exch", tuple(ctx), n.term, q.type, (q,), side, n.fragment)
        if n.rule == "→i":
            q = go(n.premises[0])
            last = q.ctx[-1]
            ty = SubArrow(last.annot, last.type, q.type)
            return Derivation("→i", q.ctx[:-1], n.term, ty, (q,), side, n.fragment)
        if n.rule == "→e":
            s, t = (go(p) for p in n.premises)
            if not isinstance(s.type, SubArrow):
                raise TypeCheckError("application of a non-function")
            u.unify_subexp(s.type.dom, t.type)
            scale = s.type.annot
            ctx = list(s.ctx) + [Decl(c.name, c.type, tg.Prod(scale, c.annot)) for c in t.ctx]
            out = Derivation("→e", tuple(ctx), n.term, s.type.cod, (s, t), side, n.fragment)
            for c in t.ctx:
                out = struct_up(out, c.name, tg.Prod(scale, c.annot))
            return out
        if n.rule == "add":
            s, t = (go(p) for p in n.premises)
            ctx = list(s.ctx) + [Decl(c.name, c.type, tg.Prod(tg.NAT, c.annot)) for c in t.ctx]
            out = Derivation("add", tuple(ctx), n.term, EXP_NAT, (s, t), side, n.fragment)
            for c in t.ctx:
                out = struct_up(out, c.name, tg.Prod(tg.NAT, c.annot))
            return out
        if n.rule == "if":
            s, t1, t2 = (go(p) for p in n.premises)
            ctx = list(s.ctx) + list(t1.ctx) + list(t2.ctx)
            return Derivation("if", tuple(ctx), n.term, EXP_NAT, (s, t1, t2), side, n.fragment)
        if n.rule == "contr":
            q = go(n.premises[0])
            x, y, z = n.side["var"], n.side["left"], n.side["right"]
            names = [c.name for c in q.ctx]
            i = names.index(y)
            cy, cz = q.ctx[i], q.ctx[i + 1]
            merged = Decl(x, cy.type, tg.Sum(cy.annot, cz.annot))
            ctx = list(q.ctx[:i]) + [merged] + list(q.ctx[i + 2:])
            out = Derivation("contr", tuple(ctx), n.term, q.type, (q,), side, n.fragment)
            return struct_up(out, x, merged.annot)
        raise TypeCheckError(f"cannot annotate rule {n.rule}")

    # the conclusion's context variables keep their own annotation variables
    for c in d.ctx:
        type_of(c.name, c.type)
    annotated = go(d)

    # solve: alpha := mu alpha. A1 + ... + An, with unification bindings applied
    by_var: dict[str, list[tg.TargetType]] = {}
    for src, alpha in constraints:
        root = u.find(alpha)
        if not isinstance(root, tg.TyVar):
            raise TypeCheckError("annotation variable unified with a structured type")
        by_var.setdefault(root.name, []).append(src)

    def resolve_full(ty):
        return u.resolve(ty)

    eqs = {}
    for name, srcs in by_var.items():
        body = None
        for s in reversed(srcs):
            s = resolve_full(s)
            body = s if body is None else tg.Sum(s, body)
        eqs[name] = body
    solved = solve_recursive_system(eqs)

    def final(ty):
        ty = resolve_full(ty)
        for name, s in solved.items():
            ty = tg.subst_type(ty, name, s)
        for v in tg.free_type_vars(ty):
            ty = tg.subst_type(ty, v, tg.UNIT)
        return ty

    return _finalize(annotated, final)


def _finalize(d: Derivation, final) -> Derivation:
    """Substitute solved annotations and attach struct witnesses."""
    memo: dict[int, Derivation] = {}

    def go(n: Derivation) -> Derivation:
        if n.nid in memo:
            return memo[n.nid]
        prem = tuple(go(p) for p in n.premises)
        ctx = tuple(Decl(c.name, map_annots(c.type, final), final(c.annot)) for c in n.ctx)
        ty = map_annots(n.type, final)
        side = dict(n.side)
        if n.rule == "struct":
            q = prem[0]
            name = side["var"]
            old = next(c for c in q.ctx if c.name == name).annot
            new = next(c for c in ctx if c.name == name).annot
            w = tg.retraction(old, new)
            if w is None:
                raise TypeCheckError(
                    f"no retraction {tg.show_type(old)} <| {tg.show_type(new)} for {name}")
            side["witness"] = w
        if n.rule == "fix":
            side["elem"] = final(side["elem"])
        out = Derivation(n.rule, ctx, n.term, ty, prem, side, n.fragment)
        memo[n.nid] = out
        return out

    return go(d)


def strip_structs(d: Derivation) -> Derivation:
    """The source derivation an annotated one was built from."""
    return d.side.get("source") if d.rule != "struct" else strip_structs(d.premises[0])


def _show_any_type(ty) -> str:
    if isinstance(ty, (ExpUnit, ExpNat, SubArrow)):
        return show_subexp(ty, simplify=True)
    return show_source_type(ty) if is_user_type(ty) else show_cps_type(ty)


def show_derivation(d: Derivation) -> str:
    """One line per node, premises indented under their conclusion."""
    lines = []

    def go(n: Derivation, depth: int) -> None:
        ctx = []
        for c in n.ctx:
            prefix = ""
            if c.annot is not None:
                a = tg.show_type(simplify_units(c.annot))
                prefix = (a if isinstance(simplify_units(c.annot), (tg.TUnit, tg.TNat, tg.TyVar)) else f"({a})") + "·"
            ctx.append(f"{c.name}: {prefix}{_show_any_type(c.type)}")
        term = pretty(n.term) if is_user_type(n.type) or isinstance(n.type, (ExpUnit, ExpNat, SubArrow)) \
            else show_cps(n.term)
        lines.append(f"{'  ' * depth}[{n.rule}] {', '.join(ctx)} ⊢ {term} : {_show_any_type(n.type)}")
        for p in n.premises:
            go(p, depth + 1)

    go(d, 0)
    return "\n".join(lines)


def subexp_annotations(d: Derivation) -> list[tg.TargetType]:
    """Every subexponential annotation of an annotated derivation, on node
    types and context entries, in pre-order without repetition."""
    out: list[tg.TargetType] = []

    def of_type(ty):
        if isinstance(ty, SubArrow):
            out.append(ty.annot)
            of_type(ty.dom)
            of_type(ty.cod)

    for n in d.walk():
        of_type(n.type)
        for c in n.ctx:
            if c.annot is not None:
                out.append(c.annot)
            of_type(c.type)
    seen, uniq = set(), []
    for a in out:
        key = tg.show_type(tg.alpha_normal(a))
        if key not in seen:
            seen.add(key)
            uniq.append(a)
    return uniq
