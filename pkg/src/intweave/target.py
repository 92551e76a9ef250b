"""First-order target language.

Types with iso-recursive ``mu``, pure expressions, a call-by-value evaluator,
tail-call function definitions, programs with entry/exit interfaces, call
traces and the program combinators used by both compilation routes.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union


class TargetError(Exception):
    """Raised for ill-typed expressions or programs and malformed inputs."""


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class TyVar:
    name: str


@dataclass(frozen=True)
class TUnit:
    pass


@dataclass(frozen=True)
class TNat:
    pass


@dataclass(frozen=True)
class Prod:
    left: "TargetType"
    right: "TargetType"


@dataclass(frozen=True)
class Sum:
    left: "TargetType"
    right: "TargetType"


@dataclass(frozen=True)
class Mu:
    binder: str
    body: "TargetType"


TargetType = Union[TyVar, TUnit, TNat, Prod, Sum, Mu]

UNIT = TUnit()
NAT = TNat()

_tyvar_counter = itertools.count()


def fresh_tyvar_name(base: str = "a") -> str:
    return f"{base}%{next(_tyvar_counter)}"


def free_type_vars(ty: TargetType) -> frozenset[str]:
    if isinstance(ty, TyVar):
        return frozenset([ty.name])
    if isinstance(ty, (Prod, Sum)):
        return free_type_vars(ty.left) | free_type_vars(ty.right)
    if isinstance(ty, Mu):
        return free_type_vars(ty.body) - {ty.binder}
    return frozenset()


def subst_type(ty: TargetType, name: str, repl: TargetType) -> TargetType:
    """Capture-avoiding substitution ``ty[repl/name]``."""
    if isinstance(ty, TyVar):
        return repl if ty.name == name else ty
    if isinstance(ty, Prod):
        return Prod(subst_type(ty.left, name, repl), subst_type(ty.right, name, repl))
    if isinstance(ty, Sum):
        return Sum(subst_type(ty.left, name, repl), subst_type(ty.right, name, repl))
    if isinstance(ty, Mu):
        if ty.binder == name:
            return ty
        if ty.binder in free_type_vars(repl):
            new = fresh_tyvar_name(ty.binder.split("%")[0])
            body = subst_type(ty.body, ty.binder, TyVar(new))
            return Mu(new, subst_type(body, name, repl))
        return Mu(ty.binder, subst_type(ty.body, name, repl))
    return ty


def unfold_type(ty: TargetType) -> TargetType:
    if not isinstance(ty, Mu):
        raise TargetError(f"cannot unfold non-recursive type {show_type(ty)}")
    return subst_type(ty.body, ty.binder, ty)


def unfold_at(ty: TargetType, data: Mapping[str, TargetType] | None = None) -> TargetType:
    """Unfold a closed ``mu`` type or a named datatype of ``data``."""
    if isinstance(ty, TyVar) and data and ty.name in data:
        return data[ty.name]
    if not isinstance(ty, Mu) or free_type_vars(ty):
        raise TargetError(f"fold annotation must be a closed mu type or a datatype name: {show_type(ty)}")
    return unfold_type(ty)


def alpha_normal(ty: TargetType, env: Mapping[str, str] | None = None, depth: int = 0) -> TargetType:
    """Rename bound type variables canonically so that dataclass equality is
    equality up to renaming of binders."""
    env = env or {}
    if isinstance(ty, TyVar):
        return TyVar(env.get(ty.name, ty.name))
    if isinstance(ty, Prod):
        return Prod(alpha_normal(ty.left, env, depth), alpha_normal(ty.right, env, depth))
    if isinstance(ty, Sum):
        return Sum(alpha_normal(ty.left, env, depth), alpha_normal(ty.right, env, depth))
    if isinstance(ty, Mu):
        name = f"#{depth}"
        return Mu(name, alpha_normal(ty.body, {**env, ty.binder: name}, depth + 1))
    return ty


def types_equal(a: TargetType, b: TargetType) -> bool:
    return a == b or alpha_normal(a) == alpha_normal(b)


def is_unit_like(ty: TargetType) -> bool:
    """True for types built from unit by products only (singletons)."""
    if isinstance(ty, TUnit):
        return True
    if isinstance(ty, Prod):
        return is_unit_like(ty.left) and is_unit_like(ty.right)
    return False


def show_type(ty: TargetType, prec: int = 0) -> str:
    if isinstance(ty, TyVar):
        return ty.name
    if isinstance(ty, TUnit):
        return "unit"
    if isinstance(ty, TNat):
        return "nat"
    if isinstance(ty, Sum):
        text = f"{show_type(ty.left, 2)} + {show_type(ty.right, 1)}"
        return f"({text})" if prec > 1 else text
    if isinstance(ty, Prod):
        text = f"{show_type(ty.left, 3)} * {show_type(ty.right, 2)}"
        return f"({text})" if prec > 2 else text
    if isinstance(ty, Mu):
        text = f"mu {ty.binder}. {show_type(ty.body, 0)}"
        return f"({text})" if prec > 0 else text
    raise TypeError(ty)


# ---------------------------------------------------------------------------
# Values


@dataclass(frozen=True)
class VUnit:
    pass


@dataclass(frozen=True)
class VNum:
    n: int


@dataclass(frozen=True)
class VPair:
    left: "TargetValue"
    right: "TargetValue"


@dataclass(frozen=True)
class VInl:
    value: "TargetValue"


@dataclass(frozen=True)
class VInr:
    value: "TargetValue"


@dataclass(frozen=True)
class VFold:
    value: "TargetValue"


TargetValue = Union[VUnit, VNum, VPair, VInl, VInr, VFold]

UNIT_VALUE = VUnit()


def show_value(v: TargetValue) -> str:
    if isinstance(v, VUnit):
        return "<>"
    if isinstance(v, VNum):
        return str(v.n)
    if isinstance(v, VPair):
        return f"<{show_value(v.left)},{show_value(v.right)}>"
    if isinstance(v, VInl):
        return f"inl {_show_value_arg(v.value)}"
    if isinstance(v, VInr):
        return f"inr {_show_value_arg(v.value)}"
    if isinstance(v, VFold):
        return f"fold {_show_value_arg(v.value)}"
    raise TypeError(v)


def _show_value_arg(v: TargetValue) -> str:
    text = show_value(v)
    return f"({text})" if isinstance(v, (VInl, VInr, VFold)) else text


def value_has_type(v: TargetValue, ty: TargetType, data: Mapping[str, TargetType] | None = None) -> bool:
    if isinstance(ty, Mu) or (isinstance(ty, TyVar) and data and ty.name in data):
        return isinstance(v, VFold) and value_has_type(v.value, unfold_at(ty, data), data)
    if isinstance(ty, TUnit):
        return isinstance(v, VUnit)
    if isinstance(ty, TNat):
        return isinstance(v, VNum) and v.n >= 0
    if isinstance(ty, Prod):
        return isinstance(v, VPair) and value_has_type(v.left, ty.left, data) and value_has_type(v.right, ty.right, data)
    if isinstance(ty, Sum):
        if isinstance(v, VInl):
            return value_has_type(v.value, ty.left, data)
        if isinstance(v, VInr):
            return value_has_type(v.value, ty.right, data)
        return False
    return False


def value_multiset(v: TargetValue, deep: bool = False) -> Counter:
    """Multiset of the numbers stored in a value. Sums and folds count as
    empty unless ``deep``, which also collects the numbers under ``inl``,
    ``inr`` and ``fold``."""
    out: Counter = Counter()
    stack = [v]
    while stack:
        x = stack.pop()
        if isinstance(x, VNum):
            out[x.n] += 1
        elif isinstance(x, VPair):
            stack += [x.left, x.right]
        elif deep and isinstance(x, (VInl, VInr, VFold)):
            stack.append(x.value)
    return out


def unit_normal(v: TargetValue) -> TargetValue:
    """Drop unit components of pairs, the normal form for ``A*unit = A``."""
    if isinstance(v, VPair):
        left, right = unit_normal(v.left), unit_normal(v.right)
        if isinstance(left, VUnit):
            return right
        if isinstance(right, VUnit):
            return left
        return VPair(left, right)
    if isinstance(v, VInl):
        return VInl(unit_normal(v.value))
    if isinstance(v, VInr):
        return VInr(unit_normal(v.value))
    if isinstance(v, VFold):
        return VFold(unit_normal(v.value))
    return v


def unit_value_of(ty: TargetType, data: Mapping[str, TargetType] | None = None) -> TargetValue:
    """The unique value of a unit-like type; named datatypes of ``data``
    wrapping such a type count too."""
    if isinstance(ty, TUnit):
        return UNIT_VALUE
    if isinstance(ty, Prod):
        return VPair(unit_value_of(ty.left, data), unit_value_of(ty.right, data))
    if isinstance(ty, TyVar) and data and ty.name in data:
        return VFold(unit_value_of(data[ty.name], data))
    raise TargetError(f"{show_type(ty)} is not a singleton type")


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class EVar:
    name: str


@dataclass(frozen=True)
class EUnit:
    pass


@dataclass(frozen=True)
class ENum:
    n: int


@dataclass(frozen=True)
class EAdd:
    left: "TargetExpr"
    right: "TargetExpr"


@dataclass(frozen=True)
class EIsZero:
    arg: "TargetExpr"


@dataclass(frozen=True)
class EPair:
    left: "TargetExpr"
    right: "TargetExpr"


@dataclass(frozen=True)
class ELet:
    """``let scrut be <x, y> in body``"""

    scrut: "TargetExpr"
    x: str
    y: str
    body: "TargetExpr"


@dataclass(frozen=True)
class EInl:
    arg: "TargetExpr"
    other: TargetType | None = None


@dataclass(frozen=True)
class EInr:
    arg: "TargetExpr"
    other: TargetType | None = None


@dataclass(frozen=True)
class ECase:
    scrut: "TargetExpr"
    x: str
    left: "TargetExpr"
    y: str
    right: "TargetExpr"


@dataclass(frozen=True)
class EFold:
    at: TargetType
    arg: "TargetExpr"


@dataclass(frozen=True)
class EUnfold:
    at: TargetType
    arg: "TargetExpr"


TargetExpr = Union[EVar, EUnit, ENum, EAdd, EIsZero, EPair, ELet, EInl, EInr, ECase, EFold, EUnfold]

E_UNIT = EUnit()


def free_vars(e: TargetExpr) -> frozenset[str]:
    if isinstance(e, EVar):
        return frozenset([e.name])
    if isinstance(e, (EUnit, ENum)):
        return frozenset()
    if isinstance(e, (EAdd, EPair)):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, (EIsZero, EInl, EInr, EFold, EUnfold)):
        return free_vars(e.arg)
    if isinstance(e, ELet):
        return free_vars(e.scrut) | (free_vars(e.body) - {e.x, e.y})
    if isinstance(e, ECase):
        return free_vars(e.scrut) | (free_vars(e.left) - {e.x}) | (free_vars(e.right) - {e.y})
    raise TypeError(e)


def all_vars(e: TargetExpr) -> set[str]:
    """Every variable name occurring in ``e``, bound or free."""
    out: set[str] = set()

    def go(e):
        if isinstance(e, EVar):
            out.add(e.name)
        elif isinstance(e, (EAdd, EPair)):
            go(e.left)
            go(e.right)
        elif isinstance(e, (EIsZero, EInl, EInr, EFold, EUnfold)):
            go(e.arg)
        elif isinstance(e, ELet):
            out.update((e.x, e.y))
            go(e.scrut)
            go(e.body)
        elif isinstance(e, ECase):
            out.update((e.x, e.y))
            go(e.scrut)
            go(e.left)
            go(e.right)

    go(e)
    return out


class NameSupply:
    """Fresh variable names avoiding a given set."""

    def __init__(self, avoid: Iterable[str] = (), prefix: str = "_v"):
        self.avoid = set(avoid)
        self.prefix = prefix
        self.counter = itertools.count()

    def fresh(self, base: str | None = None) -> str:
        base = base or self.prefix
        while True:
            name = f"{base}{next(self.counter)}"
            if name not in self.avoid:
                self.avoid.add(name)
                return name


def subst_expr(e: TargetExpr, name: str, repl: TargetExpr) -> TargetExpr:
    """Capture-avoiding substitution ``e[repl/name]``."""
    fv = free_vars(repl)

    def rebind(var: str, body: TargetExpr, avoid: set[str]) -> tuple[str, TargetExpr]:
        if var not in fv:
            return var, body
        supply = NameSupply(avoid | fv | all_vars(body), prefix=var + "_")
        new = supply.fresh()
        return new, subst_expr(body, var, EVar(new))

    def go(e):
        if isinstance(e, EVar):
            return repl if e.name == name else e
        if isinstance(e, (EUnit, ENum)):
            return e
        if isinstance(e, EAdd):
            return EAdd(go(e.left), go(e.right))
        if isinstance(e, EPair):
            return EPair(go(e.left), go(e.right))
        if isinstance(e, EIsZero):
            return EIsZero(go(e.arg))
        if isinstance(e, EInl):
            return EInl(go(e.arg), e.other)
        if isinstance(e, EInr):
            return EInr(go(e.arg), e.other)
        if isinstance(e, EFold):
            return EFold(e.at, go(e.arg))
        if isinstance(e, EUnfold):
            return EUnfold(e.at, go(e.arg))
        if isinstance(e, ELet):
            scrut = go(e.scrut)
            if name in (e.x, e.y):
                return ELet(scrut, e.x, e.y, e.body)
            x, body = rebind(e.x, e.body, {e.y})
            y, body = rebind(e.y, body, {x})
            return ELet(scrut, x, y, subst_expr(body, name, repl))
        if isinstance(e, ECase):
            scrut = go(e.scrut)
            if e.x == name:
                left = e.left
                x = e.x
            else:
                x, left = rebind(e.x, e.left, set())
                left = subst_expr(left, name, repl)
            if e.y == name:
                right = e.right
                y = e.y
            else:
                y, right = rebind(e.y, e.right, set())
                right = subst_expr(right, name, repl)
            return ECase(scrut, x, left, y, right)
        raise TypeError(e)

    if name not in free_vars(e):
        return e
    return go(e)


def expr_of_value(v: TargetValue) -> TargetExpr:
    if isinstance(v, VUnit):
        return E_UNIT
    if isinstance(v, VNum):
        return ENum(v.n)
    if isinstance(v, VPair):
        return EPair(expr_of_value(v.left), expr_of_value(v.right))
    if isinstance(v, VInl):
        return EInl(expr_of_value(v.value))
    if isinstance(v, VInr):
        return EInr(expr_of_value(v.value))
    raise TargetError("fold values need a type annotation to be written as expressions")


def expr_of_typed_value(v: TargetValue, ty: TargetType) -> TargetExpr:
    """Closed expression denoting ``v`` with the annotations needed for ``ty``."""
    if isinstance(ty, Mu):
        return EFold(ty, expr_of_typed_value(v.value, unfold_type(ty)))
    if isinstance(v, VPair) and isinstance(ty, Prod):
        return EPair(expr_of_typed_value(v.left, ty.left), expr_of_typed_value(v.right, ty.right))
    if isinstance(v, VInl) and isinstance(ty, Sum):
        return EInl(expr_of_typed_value(v.value, ty.left), ty.right)
    if isinstance(v, VInr) and isinstance(ty, Sum):
        return EInr(expr_of_typed_value(v.value, ty.right), ty.left)
    return expr_of_value(v)


def show_expr(e: TargetExpr, prec: int = 0) -> str:
    if isinstance(e, EVar):
        return e.name
    if isinstance(e, EUnit):
        return "<>"
    if isinstance(e, ENum):
        return str(e.n)
    if isinstance(e, EAdd):
        text = f"{show_expr(e.left, 1)} + {show_expr(e.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(e, EPair):
        return f"<{show_expr(e.left)}, {show_expr(e.right)}>"
    if isinstance(e, EIsZero):
        return f"iszero({show_expr(e.arg)})"
    if isinstance(e, (EInl, EInr)):
        tag = "inl" if isinstance(e, EInl) else "inr"
        ann = f"[{show_type(e.other)}]" if e.other is not None else ""
        return f"{tag}{ann}({show_expr(e.arg)})"
    if isinstance(e, EFold):
        return f"fold[{show_type(e.at)}]({show_expr(e.arg)})"
    if isinstance(e, EUnfold):
        return f"unfold[{show_type(e.at)}]({show_expr(e.arg)})"
    if isinstance(e, ELet):
        text = f"let {show_expr(e.scrut)} be <{e.x}, {e.y}> in {show_expr(e.body)}"
        return f"({text})" if prec > 0 else text
    if isinstance(e, ECase):
        text = (
            f"case {show_expr(e.scrut)} of inl {e.x} => {show_expr(e.left, 1)}"
            f" | inr {e.y} => {show_expr(e.right, 1)}"
        )
        return f"({text})" if prec > 0 else text
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Typing


def _expect_sum(ty: TargetType, what: str) -> Sum:
    if not isinstance(ty, Sum):
        raise TargetError(f"{what}: expected a sum type, got {show_type(ty)}")
    return ty


def _expect_prod(ty: TargetType, what: str) -> Prod:
    if not isinstance(ty, Prod):
        raise TargetError(f"{what}: expected a product type, got {show_type(ty)}")
    return ty


def typecheck_expr(ctx: Mapping[str, TargetType], e: TargetExpr, data: Mapping[str, TargetType] | None = None) -> TargetType:
    """Synthesize the type of ``e``. Injections need their ``other`` summand
    annotated unless checked against a known type with ``check_expr``."""
    if isinstance(e, EVar):
        if e.name not in ctx:
            raise TargetError(f"unbound variable {e.name}")
        return ctx[e.name]
    if isinstance(e, EUnit):
        return UNIT
    if isinstance(e, ENum):
        if e.n < 0:
            raise TargetError("negative literal")
        return NAT
    if isinstance(e, EAdd):
        check_expr(ctx, e.left, NAT, data)
        check_expr(ctx, e.right, NAT, data)
        return NAT
    if isinstance(e, EIsZero):
        check_expr(ctx, e.arg, NAT, data)
        return Sum(UNIT, UNIT)
    if isinstance(e, EPair):
        return Prod(typecheck_expr(ctx, e.left, data), typecheck_expr(ctx, e.right, data))
    if isinstance(e, ELet):
        p = _expect_prod(typecheck_expr(ctx, e.scrut, data), "let")
        return typecheck_expr({**ctx, e.x: p.left, e.y: p.right}, e.body, data)
    if isinstance(e, EInl):
        if e.other is None:
            raise TargetError("cannot synthesize the type of an unannotated inl")
        return Sum(typecheck_expr(ctx, e.arg, data), e.other)
    if isinstance(e, EInr):
        if e.other is None:
            raise TargetError("cannot synthesize the type of an unannotated inr")
        return Sum(e.other, typecheck_expr(ctx, e.arg, data))
    if isinstance(e, ECase):
        s = _expect_sum(typecheck_expr(ctx, e.scrut, data), "case")
        left = typecheck_expr({**ctx, e.x: s.left}, e.left, data)
        check_expr({**ctx, e.y: s.right}, e.right, left, data)
        return left
    if isinstance(e, EFold):
        check_expr(ctx, e.arg, unfold_at(e.at, data), data)
        return e.at
    if isinstance(e, EUnfold):
        inner = unfold_at(e.at, data)
        check_expr(ctx, e.arg, e.at, data)
        return inner
    raise TypeError(e)


def check_expr(ctx: Mapping[str, TargetType], e: TargetExpr, ty: TargetType,
               data: Mapping[str, TargetType] | None = None) -> None:
    if isinstance(e, EInl):
        s = _expect_sum(ty, "inl")
        if e.other is not None and not types_equal(e.other, s.right):
            raise TargetError("inl annotation mismatch")
        check_expr(ctx, e.arg, s.left, data)
        return
    if isinstance(e, EInr):
        s = _expect_sum(ty, "inr")
        if e.other is not None and not types_equal(e.other, s.left):
            raise TargetError("inr annotation mismatch")
        check_expr(ctx, e.arg, s.right, data)
        return
    if isinstance(e, EPair):
        p = _expect_prod(ty, "pair")
        check_expr(ctx, e.left, p.left, data)
        check_expr(ctx, e.right, p.right, data)
        return
    if isinstance(e, ELet):
        p = _expect_prod(typecheck_expr(ctx, e.scrut, data), "let")
        check_expr({**ctx, e.x: p.left, e.y: p.right}, e.body, ty, data)
        return
    if isinstance(e, ECase):
        s = _expect_sum(typecheck_expr(ctx, e.scrut, data), "case")
        check_expr({**ctx, e.x: s.left}, e.left, ty, data)
        check_expr({**ctx, e.y: s.right}, e.right, ty, data)
        return
    actual = typecheck_expr(ctx, e, data)
    if not types_equal(actual, ty):
        raise TargetError(f"type mismatch: expected {show_type(ty)}, got {show_type(actual)} for {show_expr(e)}")


# ---------------------------------------------------------------------------
# Evaluation


class FuelExhausted(TargetError):
    pass


def eval_expr(e: TargetExpr, fuel: int = 10**6, env: Mapping[str, TargetValue] | None = None) -> TargetValue:
    """Call-by-value evaluation to the unique value (environment machine)."""
    budget = [fuel]

    def go(e, env):
        budget[0] -= 1
        if budget[0] < 0:
            raise FuelExhausted("expression fuel exhausted")
        if isinstance(e, EVar):
            try:
                return env[e.name]
            except KeyError:
                raise TargetError(f"unbound variable {e.name}") from None
        if isinstance(e, EUnit):
            return UNIT_VALUE
        if isinstance(e, ENum):
            return VNum(e.n)
        if isinstance(e, EAdd):
            a, b = go(e.left, env), go(e.right, env)
            return VNum(a.n + b.n)
        if isinstance(e, EIsZero):
            v = go(e.arg, env)
            return VInl(UNIT_VALUE) if v.n == 0 else VInr(UNIT_VALUE)
        if isinstance(e, EPair):
            return VPair(go(e.left, env), go(e.right, env))
        if isinstance(e, ELet):
            v = go(e.scrut, env)
            if not isinstance(v, VPair):
                raise TargetError("let-pair on a non-pair value")
            return go(e.body, {**env, e.x: v.left, e.y: v.right})
        if isinstance(e, EInl):
            return VInl(go(e.arg, env))
        if isinstance(e, EInr):
            return VInr(go(e.arg, env))
        if isinstance(e, ECase):
            v = go(e.scrut, env)
            if isinstance(v, VInl):
                return go(e.left, {**env, e.x: v.value})
            if isinstance(v, VInr):
                return go(e.right, {**env, e.y: v.value})
            raise TargetError("case on a value that is neither inl nor inr")
        if isinstance(e, EFold):
            return VFold(go(e.arg, env))
        if isinstance(e, EUnfold):
            v = go(e.arg, env)
            if not isinstance(v, VFold):
                raise TargetError("unfold of a non-fold value")
            return v.value
        raise TypeError(e)

    return go(e, env or {})


def _is_value_expr(e: TargetExpr) -> bool:
    if isinstance(e, (EUnit, ENum)):
        return True
    if isinstance(e, EPair):
        return _is_value_expr(e.left) and _is_value_expr(e.right)
    if isinstance(e, (EInl, EInr, EFold)):
        return _is_value_expr(e.arg)
    return False


def step_expr(e: TargetExpr) -> TargetExpr | None:
    """One small-step reduction, left to right; ``None`` for values."""
    if _is_value_expr(e):
        return None
    if isinstance(e, EAdd):
        if not _is_value_expr(e.left):
            return EAdd(step_expr(e.left), e.right)
        if not _is_value_expr(e.right):
            return EAdd(e.left, step_expr(e.right))
        return ENum(e.left.n + e.right.n)
    if isinstance(e, EIsZero):
        if not _is_value_expr(e.arg):
            return EIsZero(step_expr(e.arg))
        return EInl(E_UNIT) if e.arg.n == 0 else EInr(E_UNIT)
    if isinstance(e, EPair):
        if not _is_value_expr(e.left):
            return EPair(step_expr(e.left), e.right)
        return EPair(e.left, step_expr(e.right))
    if isinstance(e, (EInl, EInr)):
        return type(e)(step_expr(e.arg), e.other)
    if isinstance(e, EFold):
        return EFold(e.at, step_expr(e.arg))
    if isinstance(e, EUnfold):
        if not _is_value_expr(e.arg):
            return EUnfold(e.at, step_expr(e.arg))
        return e.arg.arg
    if isinstance(e, ELet):
        if not _is_value_expr(e.scrut):
            return ELet(step_expr(e.scrut), e.x, e.y, e.body)
        body = subst_expr(e.body, e.x, e.scrut.left) if e.x != e.y else e.body
        return subst_expr(body, e.y, e.scrut.right)
    if isinstance(e, ECase):
        if not _is_value_expr(e.scrut):
            return ECase(step_expr(e.scrut), e.x, e.left, e.y, e.right)
        if isinstance(e.scrut, EInl):
            return subst_expr(e.left, e.x, e.scrut.arg)
        return subst_expr(e.right, e.y, e.scrut.arg)
    raise TargetError(f"stuck expression {show_expr(e)}")


def value_of_expr(e: TargetExpr) -> TargetValue:
    if isinstance(e, EUnit):
        return UNIT_VALUE
    if isinstance(e, ENum):
        return VNum(e.n)
    if isinstance(e, EPair):
        return VPair(value_of_expr(e.left), value_of_expr(e.right))
    if isinstance(e, EInl):
        return VInl(value_of_expr(e.arg))
    if isinstance(e, EInr):
        return VInr(value_of_expr(e.arg))
    if isinstance(e, EFold):
        return VFold(value_of_expr(e.arg))
    raise TargetError(f"not a value: {show_expr(e)}")


def eval_small_step(e: TargetExpr, fuel: int = 10**6) -> TargetValue:
    """Iterate ``step_expr`` to a value; used to cross-check ``eval_expr``."""
    for _ in range(fuel):
        nxt = step_expr(e)
        if nxt is None:
            return value_of_expr(e)
        e = nxt
    raise FuelExhausted("small-step fuel exhausted")


# ---------------------------------------------------------------------------
# Function definitions and programs

Label = str


@dataclass(frozen=True)
class Direct:
    callee: Label
    arg: TargetExpr


@dataclass(frozen=True)
class Branch:
    scrutinee: TargetExpr
    left_var: str
    left_callee: Label
    left_arg: TargetExpr
    right_var: str
    right_callee: Label
    right_arg: TargetExpr


@dataclass(frozen=True)
class FunctionDef:
    name: Label
    param: str
    body: Direct | Branch

    def callees(self) -> tuple[Label, ...]:
        if isinstance(self.body, Direct):
            return (self.body.callee,)
        return (self.body.left_callee, self.body.right_callee)


@dataclass(frozen=True)
class TargetProgram:
    entries: tuple[Label, ...]
    defs: Mapping[Label, FunctionDef]
    exits: tuple[Label, ...]
    arg_types: Mapping[Label, TargetType] = field(default_factory=dict)
    data_env: Mapping[str, TargetType] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "exits", tuple(self.exits))
        if len(set(self.entries)) != len(self.entries):
            raise TargetError(f"entry labels not pairwise distinct: {self.entries}")
        if len(set(self.exits)) != len(self.exits):
            raise TargetError(f"exit labels not pairwise distinct: {self.exits}")
        for name, d in self.defs.items():
            if d.name != name:
                raise TargetError(f"definition keyed {name} defines {d.name}")
        bad = [x for x in self.exits if x in self.defs]
        if bad:
            raise TargetError(f"exit labels must not be defined: {bad}")

    def labels(self) -> set[Label]:
        out = set(self.entries) | set(self.exits) | set(self.defs)
        for d in self.defs.values():
            out.update(d.callees())
        return out


def typecheck_program(p: TargetProgram) -> None:
    """Raise ``TargetError`` unless every definition is well typed under
    ``arg_types`` and every interface label has a type."""
    for label in itertools.chain(p.entries, p.exits):
        if label not in p.arg_types:
            raise TargetError(f"no argument type for interface label {label}")
    for name, d in p.defs.items():
        if name not in p.arg_types:
            raise TargetError(f"no argument type for {name}")
        ctx = {d.param: p.arg_types[name]}
        try:
            _check_body(p, ctx, d.body)
        except TargetError as exc:
            raise TargetError(f"in definition of {name}: {exc}") from None


def _callee_type(p: TargetProgram, label: Label) -> TargetType:
    if label not in p.arg_types:
        raise TargetError(f"call to {label}, which has no argument type")
    return p.arg_types[label]


def _check_body(p: TargetProgram, ctx, body) -> None:
    data = p.data_env
    if isinstance(body, Direct):
        check_expr(ctx, body.arg, _callee_type(p, body.callee), data)
        return
    s = _expect_sum(typecheck_expr(ctx, body.scrutinee, data), "case")
    check_expr({**ctx, body.left_var: s.left}, body.left_arg, _callee_type(p, body.left_callee), data)
    check_expr({**ctx, body.right_var: s.right}, body.right_arg, _callee_type(p, body.right_callee), data)


@dataclass(frozen=True)
class Halted:
    label: Label
    value: TargetValue


Call = tuple[Label, TargetValue]


def step_call(p: TargetProgram, call: Call, fuel: int = 10**6) -> Call | Halted:
    label, value = call
    d = p.defs.get(label)
    if d is None:
        return Halted(label, value)
    env = {d.param: value}
    body = d.body
    if isinstance(body, Direct):
        return body.callee, eval_expr(body.arg, fuel, env)
    s = eval_expr(body.scrutinee, fuel, env)
    if isinstance(s, VInl):
        return body.left_callee, eval_expr(body.left_arg, fuel, {**env, body.left_var: s.value})
    if isinstance(s, VInr):
        return body.right_callee, eval_expr(body.right_arg, fuel, {**env, body.right_var: s.value})
    raise TargetError(f"internal error: case scrutinee in {label} is not a sum value")


@dataclass(frozen=True)
class CallTrace:
    calls: tuple[Call, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.calls)

    @property
    def last(self) -> Call:
        return self.calls[-1]

    def labels(self) -> list[Label]:
        return [c[0] for c in self.calls]


def run_trace(p: TargetProgram, entry: Label, value: TargetValue, max_steps: int = 10**5,
              fuel: int = 10**6, check_input: bool = True) -> CallTrace:
    """Maximal call trace from ``entry(value)``, cut after ``max_steps`` calls."""
    if entry not in p.entries:
        raise TargetError(f"{entry} is not an entry label")
    if check_input and entry in p.arg_types and not value_has_type(value, p.arg_types[entry], p.data_env):
        raise TargetError(f"input {show_value(value)} does not have type {show_type(p.arg_types[entry])}")
    calls = [(entry, value)]
    call: Call = (entry, value)
    while True:
        if len(calls) >= max_steps:
            return CallTrace(tuple(calls), truncated=call[0] in p.defs)
        nxt = step_call(p, call, fuel)
        if isinstance(nxt, Halted):
            return CallTrace(tuple(calls))
        calls.append(nxt)
        call = nxt


def run_to_exit(p: TargetProgram, port: int, value: TargetValue, max_steps: int = 10**5) -> tuple[int, TargetValue] | None:
    """Run from entry ``port``; return (exit index, value) or ``None`` when the
    trace is cut off or halts at an undefined non-exit label."""
    trace = run_trace(p, p.entries[port], value, max_steps)
    if trace.truncated:
        return None
    label, v = trace.last
    if label in p.exits:
        return p.exits.index(label), v
    return None


# ---------------------------------------------------------------------------
# Program combinators


def rename_labels(p: TargetProgram, mapping: Mapping[Label, Label]) -> TargetProgram:
    def r(x):
        return mapping.get(x, x)

    defs = {}
    for d in p.defs.values():
        b = d.body
        if isinstance(b, Direct):
            body = Direct(r(b.callee), b.arg)
        else:
            body = Branch(b.scrutinee, b.left_var, r(b.left_callee), b.left_arg,
                          b.right_var, r(b.right_callee), b.right_arg)
        defs[r(d.name)] = FunctionDef(r(d.name), d.param, body)
    types = {r(k): v for k, v in p.arg_types.items()}
    return TargetProgram(tuple(map(r, p.entries)), defs, tuple(map(r, p.exits)), types, dict(p.data_env))


def identity(types: Sequence[TargetType], labels: Sequence[Label] | None = None) -> TargetProgram:
    """The identity program: entries equal exits, no definitions."""
    labels = list(labels) if labels is not None else [f"id{i}" for i in range(len(types))]
    if len(labels) != len(types):
        raise TargetError("label/type count mismatch")
    return TargetProgram(tuple(labels), {}, tuple(labels), dict(zip(labels, types)))


def _avoiding_renaming(labels: Iterable[Label], avoid: set[Label]) -> dict[Label, Label]:
    mapping = {}
    used = set(avoid)
    for x in sorted(labels):
        if x in used:
            k = 1
            while f"{x}_{k}" in used:
                k += 1
            mapping[x] = f"{x}_{k}"
            used.add(mapping[x])
        else:
            used.add(x)
    return mapping


def compose(p: TargetProgram, q: TargetProgram) -> TargetProgram:
    """Sequential composition: ``p``'s exits feed ``q``'s entries positionally."""
    if len(p.exits) != len(q.entries):
        raise TargetError("interface arity mismatch in compose")
    for a, b in zip(p.exits, q.entries):
        ta, tb = p.arg_types.get(a), q.arg_types.get(b)
        if ta is not None and tb is not None and not types_equal(ta, tb):
            raise TargetError(f"interface type mismatch in compose: {show_type(ta)} vs {show_type(tb)}")
    q = rename_labels(q, _avoiding_renaming(q.labels(), p.labels()))
    q = rename_labels(q, dict(zip(q.entries, p.exits)))
    defs = {**p.defs, **q.defs}
    types = {**p.arg_types, **q.arg_types}
    return TargetProgram(p.entries, defs, q.exits, types, {**p.data_env, **q.data_env})


def link(p: TargetProgram, env: TargetProgram) -> TargetProgram:
    """Close some of ``p``'s ports with an environment program whose entries
    are exits of ``p`` and whose exits are entries of ``p``. The linked labels
    leave the interface; the definitions are united."""
    clash = set(p.defs) & set(env.defs)
    if clash:
        raise TargetError(f"definitions clash while linking: {sorted(clash)}")
    entries = tuple(x for x in p.entries if x not in env.exits) + tuple(
        x for x in env.entries if x not in p.exits)
    exits = tuple(x for x in p.exits if x not in env.entries) + tuple(
        x for x in env.exits if x not in p.entries)
    types = {**env.arg_types, **p.arg_types}
    return TargetProgram(entries, {**p.defs, **env.defs}, exits, types, {**p.data_env, **env.data_env})


def tensor_exp(a: TargetType, p: TargetProgram) -> TargetProgram:
    """``A . P``: every call carries an extra value of type ``A`` unchanged."""
    defs = {}
    for d in p.defs.values():
        b = d.body
        supply = NameSupply(_def_vars(d), prefix="_t")
        w, u = supply.fresh("_w"), supply.fresh("_u")

        def carry(e, x=d.param, w=w, u=u):
            return ELet(EVar(w), u, x, EPair(EVar(u), e))

        def open_(e, x=d.param, w=w, u=u):
            return ELet(EVar(w), u, x, e)

        if isinstance(b, Direct):
            body = Direct(b.callee, carry(b.arg))
        else:
            body = Branch(open_(b.scrutinee), b.left_var, b.left_callee, carry(b.left_arg),
                          b.right_var, b.right_callee, carry(b.right_arg))
        defs[d.name] = FunctionDef(d.name, w, body)
    types = {k: Prod(a, v) for k, v in p.arg_types.items()}
    return TargetProgram(p.entries, defs, p.exits, types, dict(p.data_env))


def _def_vars(d: FunctionDef) -> set[str]:
    b = d.body
    out = {d.param}
    if isinstance(b, Direct):
        out |= all_vars(b.arg)
    else:
        out |= all_vars(b.scrutinee) | all_vars(b.left_arg) | all_vars(b.right_arg)
        out |= {b.left_var, b.right_var}
    return out


def map_calls(p: TargetProgram, targets: set[Label], fn: Callable[[Label, TargetExpr, set[str]], TargetExpr]) -> TargetProgram:
    """Rewrite the argument of every call to a label in ``targets``."""
    defs = {}
    for d in p.defs.values():
        b = d.body
        avoid = _def_vars(d)
        if isinstance(b, Direct):
            arg = fn(b.callee, b.arg, avoid) if b.callee in targets else b.arg
            body = Direct(b.callee, arg)
        else:
            la = fn(b.left_callee, b.left_arg, avoid) if b.left_callee in targets else b.left_arg
            ra = fn(b.right_callee, b.right_arg, avoid) if b.right_callee in targets else b.right_arg
            body = Branch(b.scrutinee, b.left_var, b.left_callee, la, b.right_var, b.right_callee, ra)
        defs[d.name] = FunctionDef(d.name, d.param, body)
    return TargetProgram(p.entries, defs, p.exits, dict(p.arg_types), dict(p.data_env))


def map_params(p: TargetProgram, targets: set[Label], fn: Callable[[Label, str, set[str]], tuple[str, TargetExpr]]) -> TargetProgram:
    """Change how definitions of ``targets`` read their parameter: ``fn``
    returns a new parameter name and the expression that replaces the old one."""
    defs = dict(p.defs)
    for name in targets:
        d = p.defs.get(name)
        if d is None:
            continue
        new_param, repl = fn(name, d.param, _def_vars(d))
        defs[name] = FunctionDef(name, new_param, _subst_body(d.body, d.param, repl))
    return TargetProgram(p.entries, defs, p.exits, dict(p.arg_types), dict(p.data_env))


def _subst_body(body, name: str, repl: TargetExpr):
    if isinstance(body, Direct):
        return Direct(body.callee, subst_expr(body.arg, name, repl))
    fv = free_vars(repl)
    lv, la = body.left_var, body.left_arg
    rv, ra = body.right_var, body.right_arg
    if lv in fv:
        new = NameSupply(fv | all_vars(la), prefix=lv + "_").fresh()
        la, lv = subst_expr(la, lv, EVar(new)), new
    if rv in fv:
        new = NameSupply(fv | all_vars(ra), prefix=rv + "_").fresh()
        ra, rv = subst_expr(ra, rv, EVar(new)), new
    return Branch(
        subst_expr(body.scrutinee, name, repl),
        lv, body.left_callee, la if lv == name else subst_expr(la, name, repl),
        rv, body.right_callee, ra if rv == name else subst_expr(ra, name, repl),
    )


def inline_labels(p: TargetProgram, labels: Iterable[Label]) -> TargetProgram:
    """Substitute the direct definitions of ``labels`` into their callers and
    drop them. Calls to an inlined label disappear from every trace."""
    defs = dict(p.defs)
    types = dict(p.arg_types)
    for label in labels:
        d = defs.get(label)
        if d is None or not isinstance(d.body, Direct):
            raise TargetError(f"can only inline direct definitions, not {label}")
        if label in p.entries or label in p.exits:
            raise TargetError(f"cannot inline interface label {label}")
        if d.body.callee == label:
            raise TargetError(f"cannot inline self-recursive {label}")
        del defs[label]
        types.pop(label, None)
        for name, c in list(defs.items()):
            defs[name] = FunctionDef(name, c.param, _inline_into(c.body, d))
    return TargetProgram(p.entries, defs, p.exits, types, dict(p.data_env))


def _inline_into(body, d: FunctionDef):
    def through(arg):
        return subst_expr(d.body.arg, d.param, arg)

    if isinstance(body, Direct):
        if body.callee == d.name:
            return Direct(d.body.callee, through(body.arg))
        return body
    lc, la, rc, ra = body.left_callee, body.left_arg, body.right_callee, body.right_arg
    if lc == d.name:
        lc, la = d.body.callee, through(la)
    if rc == d.name:
        rc, ra = d.body.callee, through(ra)
    return Branch(body.scrutinee, body.left_var, lc, la, body.right_var, rc, ra)


def program_equal_bounded(p: TargetProgram, q: TargetProgram, inputs: Iterable[tuple], max_steps: int = 10**5,
                          equiv: Callable[[TargetValue, TargetValue], bool] | None = None) -> bool:
    """Bounded program equality. Each input is ``(port, value)`` or
    ``(port, value_for_p, value_for_q)``; the programs agree on it when both
    reach the same exit index with equivalent values, or neither reaches an exit."""
    equiv = equiv or (lambda a, b: a == b)
    if len(p.entries) != len(q.entries) or len(p.exits) != len(q.exits):
        return False
    for item in inputs:
        port, vp = item[0], item[1]
        vq = item[2] if len(item) > 2 else vp
        rp = run_to_exit(p, port, vp, max_steps)
        rq = run_to_exit(q, port, vq, max_steps)
        if rp is None or rq is None:
            if rp is not rq:
                return False
            continue
        if rp[0] != rq[0] or not equiv(rp[1], rq[1]):
            return False
    return True


def equal_up_to_units(a: TargetValue, b: TargetValue) -> bool:
    return unit_normal(a) == unit_normal(b)


# ---------------------------------------------------------------------------
# Retractions


def default_value_expr(ty: TargetType, _assume_empty: frozenset = frozenset()) -> TargetExpr | None:
    """A closed expression of type ``ty``, or ``None`` when uninhabited."""
    if isinstance(ty, TUnit):
        return E_UNIT
    if isinstance(ty, TNat):
        return ENum(0)
    if isinstance(ty, TyVar):
        return None
    if isinstance(ty, Prod):
        a = default_value_expr(ty.left, _assume_empty)
        b = default_value_expr(ty.right, _assume_empty)
        return None if a is None or b is None else EPair(a, b)
    if isinstance(ty, Sum):
        a = default_value_expr(ty.left, _assume_empty)
        if a is not None:
            return EInl(a, ty.right)
        b = default_value_expr(ty.right, _assume_empty)
        return None if b is None else EInr(b, ty.left)
    if isinstance(ty, Mu):
        key = alpha_normal(ty)
        if free_type_vars(ty) or key in _assume_empty:
            return None
        inner = default_value_expr(unfold_type(ty), _assume_empty | {key})
        return None if inner is None else EFold(ty, inner)
    raise TypeError(ty)


@dataclass(frozen=True)
class Retraction:
    """Witness for ``A <| B``: ``x:A |- encode:B`` and ``y:B |- decode:A``."""

    source: TargetType
    target: TargetType
    encode: TargetExpr
    decode: TargetExpr
    x: str = "x"
    y: str = "y"

    def encode_value(self, v: TargetValue) -> TargetValue:
        return eval_expr(self.encode, env={self.x: v})

    def decode_value(self, v: TargetValue) -> TargetValue:
        return eval_expr(self.decode, env={self.y: v})


def retraction(a: TargetType, b: TargetType, depth: int = 12) -> Retraction | None:
    """Search for a retraction ``a <| b``; ``None`` when none is found."""
    counter = itertools.count()

    def fresh():
        return f"_r{next(counter)}"

    def search(a, b, d):
        # returns (x, s, y, r) with x:a |- s:b and y:b |- r:a
        if d < 0:
            return None
        x, y = fresh(), fresh()
        if types_equal(a, b):
            return x, EVar(x), y, EVar(y)
        if isinstance(a, Prod) and isinstance(b, Prod):
            l = search(a.left, b.left, d - 1)
            r = search(a.right, b.right, d - 1) if l else None
            if l and r:
                x1, y1 = fresh(), fresh()
                x2, y2 = fresh(), fresh()
                s = ELet(EVar(x), x1, x2, EPair(subst_expr(l[1], l[0], EVar(x1)), subst_expr(r[1], r[0], EVar(x2))))
                rr = ELet(EVar(y), y1, y2, EPair(subst_expr(l[3], l[2], EVar(y1)), subst_expr(r[3], r[2], EVar(y2))))
                return x, s, y, rr
        if isinstance(a, Sum) and isinstance(b, Sum):
            l = search(a.left, b.left, d - 1)
            r = search(a.right, b.right, d - 1) if l else None
            if l and r:
                s = ECase(EVar(x), l[0], EInl(l[1], b.right), r[0], EInr(r[1], b.left))
                rr = ECase(EVar(y), l[2], EInl(l[3], a.right), r[2], EInr(r[3], a.left))
                return x, s, y, rr
        if isinstance(b, Mu):
            inner = search(a, unfold_type(b), d - 1)
            if inner:
                s = EFold(b, inner[1])
                rr = subst_expr(inner[3], inner[2], EUnfold(b, EVar(y)))
                return inner[0], s, y, rr
        if isinstance(b, Sum):
            for side in ("left", "right"):
                part = getattr(b, side)
                inner = search(a, part, d - 1)
                if inner is None:
                    continue
                default = default_value_expr(a)
                if default is None:
                    continue
                z = fresh()
                if side == "left":
                    s = EInl(inner[1], b.right)
                    rr = ECase(EVar(y), inner[2], inner[3], z, default)
                else:
                    s = EInr(inner[1], b.left)
                    rr = ECase(EVar(y), z, default, inner[2], inner[3])
                return inner[0], s, y, rr
        if isinstance(b, Prod) and isinstance(b.right, TUnit):
            inner = search(a, b.left, d - 1)
            if inner:
                z = fresh()
                return inner[0], EPair(inner[1], E_UNIT), y, ELet(EVar(y), inner[2], z, inner[3])
        if isinstance(b, Prod) and isinstance(b.left, TUnit):
            inner = search(a, b.right, d - 1)
            if inner:
                z = fresh()
                return inner[0], EPair(E_UNIT, inner[1]), y, ELet(EVar(y), z, inner[2], inner[3])
        if isinstance(a, Prod) and isinstance(a.right, TUnit):
            inner = search(a.left, b, d - 1)
            if inner:
                z = fresh()
                return x, ELet(EVar(x), inner[0], z, inner[1]), inner[2], EPair(inner[3], E_UNIT)
        if isinstance(a, Prod) and isinstance(a.left, TUnit):
            inner = search(a.right, b, d - 1)
            if inner:
                z = fresh()
                return x, ELet(EVar(x), z, inner[0], inner[1]), inner[2], EPair(E_UNIT, inner[3])
        return None

    found = search(a, b, depth)
    if found is None:
        return None
    x, s, y, r = found
    return Retraction(a, b, s, r, x, y)


def retraction_check(w: Retraction, values: Iterable[TargetValue]) -> bool:
    """``decode(encode(v)) = v`` for each supplied value of the source type."""
    for v in values:
        if w.decode_value(w.encode_value(v)) != v:
            return False
    return True


def enumerate_values(ty: TargetType, max_nat: int = 9, mu_depth: int = 3, limit: int = 200) -> list[TargetValue]:
    """Small values of a closed type, nats up to ``max_nat``, recursion to ``mu_depth``."""

    def go(ty, depth):
        if isinstance(ty, TUnit):
            return [UNIT_VALUE]
        if isinstance(ty, TNat):
            return [VNum(n) for n in range(max_nat + 1)]
        if isinstance(ty, Prod):
            out = []
            for a in go(ty.left, depth):
                for b in go(ty.right, depth):
                    out.append(VPair(a, b))
                    if len(out) >= limit:
                        return out
            return out
        if isinstance(ty, Sum):
            return ([VInl(v) for v in go(ty.left, depth)] + [VInr(v) for v in go(ty.right, depth)])[:limit]
        if isinstance(ty, Mu):
            if depth >= mu_depth:
                return []
            return [VFold(v) for v in go(unfold_type(ty), depth + 1)][:limit]
        return []

    return go(ty, 0)


# ---------------------------------------------------------------------------
# Text formats

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+)|(?P<id>[^\W\d][\w'%+\[\]]*)|(?P<sym>=>|<>|[<>(),|=:.*+\[\]]))")


class _Lexer:
    def __init__(self, text: str):
        self.toks: list[tuple[str, str]] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise TargetError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
            kind = m.lastgroup
            self.toks.append((kind, m.group(kind)))
            pos = m.end()
        self.i = 0

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", "")

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, v = self.next()
        if v != value:
            raise TargetError(f"expected {value!r}, got {v!r}")

    def ident(self) -> str:
        kind, v = self.next()
        if kind != "id":
            raise TargetError(f"expected identifier, got {v!r}")
        return v

    def at_end(self) -> bool:
        return self.i >= len(self.toks)


_KEYWORDS = {"let", "be", "in", "case", "of", "inl", "inr", "fold", "unfold", "iszero", "unit", "nat", "mu"}


def _parse_type(lx: _Lexer) -> TargetType:
    if lx.peek()[1] == "mu":
        lx.next()
        binder = lx.ident()
        lx.expect(".")
        return Mu(binder, _parse_type(lx))
    left = _parse_prod(lx)
    if lx.peek()[1] == "+":
        lx.next()
        return Sum(left, _parse_type(lx))
    return left


def _parse_prod(lx: _Lexer) -> TargetType:
    left = _parse_type_atom(lx)
    if lx.peek()[1] == "*":
        lx.next()
        return Prod(left, _parse_prod(lx))
    return left


def _parse_type_atom(lx: _Lexer) -> TargetType:
    kind, v = lx.next()
    if v == "unit":
        return UNIT
    if v == "nat":
        return NAT
    if v == "(":
        ty = _parse_type(lx)
        lx.expect(")")
        return ty
    if v == "mu":
        lx.i -= 1
        return _parse_type(lx)
    if kind == "id":
        return TyVar(v)
    raise TargetError(f"bad type token {v!r}")


def _prep(text: str) -> str:
    # separate '+' and brackets from identifiers inside expressions and types
    return re.sub(r"([+\[\]])", r" \1 ", text)


def parse_type(text: str) -> TargetType:
    lx = _Lexer(_prep(text))
    ty = _parse_type(lx)
    if not lx.at_end():
        raise TargetError(f"trailing input in type: {text!r}")
    return ty


def _parse_expr(lx: _Lexer) -> TargetExpr:
    kind, v = lx.peek()
    if v == "let":
        lx.next()
        scrut = _parse_expr(lx)
        lx.expect("be")
        lx.expect("<")
        x = lx.ident()
        lx.expect(",")
        y = lx.ident()
        lx.expect(">")
        lx.expect("in")
        return ELet(scrut, x, y, _parse_expr(lx))
    if v == "case":
        lx.next()
        scrut = _parse_expr(lx)
        lx.expect("of")
        lx.expect("inl")
        x = lx.ident()
        lx.expect("=>")
        left = _parse_sum_expr(lx)
        lx.expect("|")
        lx.expect("inr")
        y = lx.ident()
        lx.expect("=>")
        right = _parse_sum_expr(lx)
        return ECase(scrut, x, left, y, right)
    return _parse_sum_expr(lx)


def _parse_sum_expr(lx: _Lexer) -> TargetExpr:
    left = _parse_expr_atom(lx)
    while lx.peek()[1] == "+":
        lx.next()
        left = EAdd(left, _parse_expr_atom(lx))
    return left


def _parse_annot(lx: _Lexer) -> TargetType | None:
    if lx.peek()[1] == "[":
        lx.next()
        ty = _parse_type(lx)
        lx.expect("]")
        return ty
    return None


def _parse_expr_atom(lx: _Lexer) -> TargetExpr:
    kind, v = lx.next()
    if kind == "num":
        return ENum(int(v))
    if v == "<>":
        return E_UNIT
    if v == "<":
        a = _parse_expr(lx)
        lx.expect(",")
        b = _parse_expr(lx)
        lx.expect(">")
        return EPair(a, b)
    if v == "(":
        e = _parse_expr(lx)
        lx.expect(")")
        return e
    if v in ("inl", "inr"):
        other = _parse_annot(lx)
        arg = _parse_expr_atom(lx)
        return EInl(arg, other) if v == "inl" else EInr(arg, other)
    if v in ("fold", "unfold"):
        at = _parse_annot(lx)
        if at is None:
            raise TargetError(f"{v} needs a type annotation")
        arg = _parse_expr_atom(lx)
        return EFold(at, arg) if v == "fold" else EUnfold(at, arg)
    if v == "iszero":
        return EIsZero(_parse_expr_atom(lx))
    if kind == "id" and v not in _KEYWORDS:
        return EVar(v)
    raise TargetError(f"bad expression token {v!r}")


def parse_expr(text: str) -> TargetExpr:
    lx = _Lexer(_prep(text))
    e = _parse_expr(lx)
    if not lx.at_end():
        raise TargetError(f"trailing input in expression: {text!r}")
    return e


def parse_value(text: str) -> TargetValue:
    lx = _Lexer(text)

    def atom():
        kind, v = lx.next()
        if kind == "num":
            return VNum(int(v))
        if v == "<>":
            return UNIT_VALUE
        if v == "<":
            a = atom()
            lx.expect(",")
            b = atom()
            lx.expect(">")
            return VPair(a, b)
        if v == "(":
            a = atom()
            lx.expect(")")
            return a
        if v == "inl":
            return VInl(atom())
        if v == "inr":
            return VInr(atom())
        if v == "fold":
            return VFold(atom())
        raise TargetError(f"bad value token {v!r}")

    v = atom()
    if not lx.at_end():
        raise TargetError(f"trailing input in value: {text!r}")
    return v


def show_def(d: FunctionDef) -> str:
    b = d.body
    if isinstance(b, Direct):
        return f"{d.name}({d.param}) = {b.callee}({show_expr(b.arg)})"
    return (
        f"{d.name}({d.param}) = case {show_expr(b.scrutinee, 1)} of "
        f"inl {b.left_var} => {b.left_callee}({show_expr(b.left_arg)}) | "
        f"inr {b.right_var} => {b.right_callee}({show_expr(b.right_arg)})"
    )


def format_program(p: TargetProgram) -> str:
    lines = [f"entries: {' '.join(p.entries)}", f"exits: {' '.join(p.exits)}"]
    for name in sorted(p.data_env, key=label_sort_key):
        lines.append(f"data {name} = {show_type(p.data_env[name])}")
    for name in sorted(p.arg_types, key=label_sort_key):
        lines.append(f"type {name} : {show_type(p.arg_types[name])}")
    for name in sorted(p.defs, key=label_sort_key):
        lines.append(show_def(p.defs[name]))
    return "\n".join(lines) + "\n"


def label_sort_key(label: Label):
    parts = re.split(r"(\d+)", label)
    return [int(x) if x.isdigit() else x for x in parts]


_LABEL = r"[^\W\d][\w'%+\[\]]*"


def _parse_call(text: str) -> tuple[Label, TargetExpr]:
    m = re.match(rf"\s*({_LABEL})\((.*)\)\s*$", text, re.S)
    if not m:
        raise TargetError(f"malformed call {text!r}")
    return m.group(1), parse_expr(m.group(2))


def _split_top(text: str, sep: str) -> list[str]:
    """Split on ``sep`` outside parentheses and angle brackets."""
    parts, depth, cur, i = [], 0, [], 0
    while i < len(text):
        ch = text[i]
        if ch in "(<[":
            depth += 1
        elif ch in ")>]" and not (ch == ">" and i > 0 and text[i - 1] == "="):
            depth -= 1
        if depth == 0 and text.startswith(sep, i):
            parts.append("".join(cur))
            cur = []
            i += len(sep)
            continue
        cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return parts


def parse_def(line: str) -> FunctionDef:
    m = re.match(rf"\s*({_LABEL})\(\s*([^\W\d][\w']*)\s*\)\s*=\s*(.*)$", line, re.S)
    if not m:
        raise TargetError(f"malformed definition {line!r}")
    name, param, rhs = m.group(1), m.group(2), m.group(3).strip()
    if rhs.startswith("case "):
        pieces = _split_top(rhs[len("case "):], " of ")
        if len(pieces) != 2:
            raise TargetError(f"malformed case definition {line!r}")
        scrut = parse_expr(pieces[0])
        mm = re.match(r"\s*inl\s+(\w+)\s*=>\s*(.*)$", pieces[1], re.S)
        if not mm:
            raise TargetError(f"malformed case definition {line!r}")
        left_var = mm.group(1)
        arms = _split_top(mm.group(2), "|")
        if len(arms) != 2:
            raise TargetError(f"case definition needs two arms: {line!r}")
        lc, la = _parse_call(arms[0])
        mr = re.match(r"\s*inr\s+(\w+)\s*=>\s*(.*)$", arms[1], re.S)
        if not mr:
            raise TargetError(f"malformed right arm {arms[1]!r}")
        rc, ra = _parse_call(mr.group(2))
        return FunctionDef(name, param, Branch(scrut, left_var, lc, la, mr.group(1), rc, ra))
    callee, arg = _parse_call(rhs)
    return FunctionDef(name, param, Direct(callee, arg))


def parse_program(text: str) -> TargetProgram:
    entries: tuple = ()
    exits: tuple = ()
    types: dict = {}
    data: dict = {}
    defs: dict = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("entries:"):
            entries = tuple(line[len("entries:"):].split())
        elif line.startswith("exits:"):
            exits = tuple(line[len("exits:"):].split())
        elif line.startswith("data "):
            m = re.match(rf"data\s+({_LABEL})\s*=\s*(.*)$", line)
            if not m:
                raise TargetError(f"malformed data line {line!r}")
            data[m.group(1)] = parse_type(m.group(2))
        elif line.startswith("type "):
            m = re.match(rf"type\s+({_LABEL})\s*:\s*(.*)$", line)
            if not m:
                raise TargetError(f"malformed type line {line!r}")
            types[m.group(1)] = parse_type(m.group(2))
        else:
            d = parse_def(line)
            if d.name in defs:
                raise TargetError(f"duplicate definition for {d.name}")
            defs[d.name] = d
    return TargetProgram(entries, defs, exits, types, data)


def format_trace(trace: CallTrace, style: str = "plain") -> str:
    return "\n".join(format_call(c, style) for c in trace.calls) + ("\n...\n" if trace.truncated else "\n")


def format_call(call: Call, style: str = "plain") -> str:
    """Render one call. ``plain`` prints the value as is; ``closure`` splits a
    top-level pair into closure and argument; ``args`` flattens nested pairs
    into an argument list with unit components left out."""
    label, v = call
    if style == "closure" and isinstance(v, VPair):
        return f"{label}({show_value(v.left)},{show_value(v.right)})"
    if style == "args":
        return f"{label}({','.join(show_value(x) for x in _flat_args(v))})"
    return f"{label}({show_value(v)})"


def _flat_args(v: TargetValue) -> list[TargetValue]:
    if isinstance(v, VUnit):
        return []
    if isinstance(v, VPair):
        return _flat_args(v.left) + _flat_args(v.right)
    return [v]


def format_dot(p: TargetProgram, name: str = "program") -> str:
    """Graphviz description of the call graph: one node per label, entries
    and exits drawn as boxes, case distinctions with two labelled edges."""
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  node [shape=ellipse, fontname=monospace];"]
    for x in p.entries:
        lines.append(f'  "{x}" [shape=box, style=bold];')
    for x in p.exits:
        lines.append(f'  "{x}" [shape=box, style=dashed];')
    for label in sorted(p.defs, key=label_sort_key):
        b = p.defs[label].body
        if isinstance(b, Direct):
            lines.append(f'  "{label}" -> "{b.callee}";')
        else:
            lines.append(f'  "{label}" -> "{b.left_callee}" [label="inl"];')
            lines.append(f'  "{label}" -> "{b.right_callee}" [label="inr"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
