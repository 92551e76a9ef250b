"""Flow-based defunctionalization of labelled CPS terms.

An abstraction labelled ``l`` becomes a closure: the tuple of its free
variables, wrapped in the constructor ``l`` (a fold into the datatype
``tau_l``) unless the term is in the single-label fragment or the datatype
is flattened. Its body becomes the definition ``apply_l(<f, x>)``. An
application labelled with a label term calls the dispatcher of that term,
which cases on the sum of closures and forwards to the members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import source as src
from . import target as tg
from .labelling import (
    Coercl, Coercr, LAdd, LApp, LBot, LFix, LIf, LLam, LLetPair, LNat, LNeg, LNum, LPair, LProd, LStar,
    LTerm, LType, LUnit, LVar, LabelTerm, LabelledSequent, Leaf, Plus, lfree_vars, plus_nodes, show_label,
)
from .target import (
    Branch, Direct, E_UNIT, EAdd, ECase, EFold, EInl, EInr, EIsZero, ELet, ENum, EPair, EUnfold, EVar,
    FunctionDef, Prod, Sum, TargetProgram, UNIT, NAT,
)


class DefunError(Exception):
    pass


def tau_var(label: str) -> str:
    return f"t_{label}"


@dataclass
class TauEnv:
    """Closure datatypes: ``types[l]`` is ``tau_l``; ``payload[l]`` the type
    of the free-variable tuple it wraps."""
    types: dict[str, tg.TargetType]
    payload: dict[str, tg.TargetType]
    groups: list[list[str]]
    folded: set[str]

    def of_label(self, lt: LabelTerm) -> tg.TargetType:
        if isinstance(lt, Leaf):
            return self.types.get(lt.name, UNIT)
        return Sum(self.of_label(lt.left), self.of_label(lt.right))

    def of_type(self, t: LType) -> tg.TargetType:
        if isinstance(t, LUnit):
            return UNIT
        if isinstance(t, LNat):
            return NAT
        if isinstance(t, LProd):
            return Prod(self.of_type(t.left), self.of_type(t.right))
        if isinstance(t, LNeg):
            return self.of_label(t.label)
        raise DefunError(f"no value representation for {t}")

    def data_env(self) -> dict[str, tg.TargetType]:
        """Named datatypes: ``t_l`` for every label whose closures are folded."""
        return {tau_var(l): self.payload[l] for l in sorted(self.folded, key=tg.label_sort_key)}

    def closed(self, label: str) -> tg.TargetType:
        """``tau_l`` as a closed type, each recursive group under one mu."""
        eqs = {tau_var(l): self.payload[l] for l in self.folded}
        return src.solve_recursive_system(eqs, free_default=UNIT).get(tau_var(label), self.types[label])


# expanded closure types larger than this stay named even when flattening
FLATTEN_LIMIT = 200


def _type_size(t: tg.TargetType) -> int:
    if isinstance(t, (tg.Prod, tg.Sum)):
        return 1 + _type_size(t.left) + _type_size(t.right)
    if isinstance(t, tg.Mu):
        return 1 + _type_size(t.body)
    return 1


def _closure_types(eqs: dict[str, tg.TargetType], nominal_all: bool) -> TauEnv:
    """Decide which closure types are named datatypes (always the recursive
    ones; all of them unless flattening) and inline the rest."""
    named_eqs = {tau_var(l): t for l, t in eqs.items()}
    groups = [[g[len("t_"):] for g in grp] for grp in src.recursive_groups(named_eqs)]
    nominal = set(eqs) if nominal_all else {l for grp in groups for l in grp}
    deps = {l: {v[len("t_"):] for v in tg.free_type_vars(eqs[l])} & set(eqs) for l in eqs}
    expanded: dict[str, tg.TargetType] = {}
    for grp in src._sccs(list(eqs), deps):  # dependencies first
        for l in grp:
            if l in nominal:
                continue
            t = eqs[l]
            for m in deps[l]:
                if m not in nominal:
                    t = tg.subst_type(t, tau_var(m), expanded[m])
            if _type_size(t) > FLATTEN_LIMIT:
                nominal.add(l)
            else:
                expanded[l] = t
    payload = {}
    for l, t in eqs.items():
        for m in deps[l]:
            if m not in nominal:
                t = tg.subst_type(t, tau_var(m), expanded[m])
        payload[l] = t
    types = {l: (tg.TyVar(tau_var(l)) if l in nominal else expanded[l]) for l in eqs}
    return TauEnv(types, payload, groups, nominal)


@dataclass
class _Site:
    label: str
    var: str
    vtype: LType
    body: LTerm
    env: dict[str, LType]
    fvs: list[str]
    fix_var: str | None = None
    term: LLam | None = None


@dataclass
class DefunOutput:
    residual: tg.TargetExpr
    defs: dict[str, FunctionDef]
    tau: TauEnv
    arg_types: dict[str, tg.TargetType] = field(default_factory=dict)
    single_label: bool = False

    def data_env(self) -> dict[str, tg.TargetType]:
        return self.tau.data_env()


class _Scan:
    """One pass over the term collecting abstraction sites with their free
    variables, the argument type of every applied label term, and the
    binder order used to lay out closures."""

    def __init__(self, ctx: Sequence[tuple[str, LType]]):
        self.order: dict[str, int] = {}
        for name, _ in ctx:
            self._bind(name)
        self.sites: dict[str, _Site] = {}
        self.app_doms: dict[LabelTerm, LType] = {}
        self.plus_seen = False
        self.has_fix = False

    def _bind(self, name: str) -> None:
        self.order.setdefault(name, len(self.order))

    def _fvs(self, t: LTerm, drop=()) -> list[str]:
        names = set(lfree_vars(t)) - set(drop)
        return sorted(names, key=lambda n: self.order[n])

    def _note_dom(self, lt: LabelTerm, dom: LType) -> None:
        if isinstance(lt, Plus):
            self.plus_seen = True
        old = self.app_doms.get(lt)
        if old is not None and old != dom:
            raise DefunError(f"label {show_label(lt)} is applied at two argument types")
        self.app_doms[lt] = dom

    def _note_type(self, ty: LType) -> None:
        # a label term in a type may be applied by code that never runs,
        # its dispatcher is still part of the program
        for n in _neg_types(ty):
            if n.label not in self.app_doms:
                self._note_dom(n.label, n.dom)

    def run(self, t: LTerm, env: dict[str, LType]) -> LType:
        if isinstance(t, LVar):
            if t.name not in env:
                raise DefunError(f"unbound variable {t.name}")
            return env[t.name]
        if isinstance(t, LStar):
            return LUnit()
        if isinstance(t, LNum):
            return LNat()
        if isinstance(t, LAdd):
            self.run(t.left, env)
            self.run(t.right, env)
            return LNat()
        if isinstance(t, LIf):
            self.run(t.cond, env)
            a = self.run(t.then, env)
            self.run(t.else_, env)
            return a
        if isinstance(t, LPair):
            return LProd(self.run(t.left, env), self.run(t.right, env))
        if isinstance(t, LLetPair):
            p = self.run(t.scrut, env)
            if not isinstance(p, LProd):
                raise DefunError("let-pair on a non-product")
            self._bind(t.x)
            self._bind(t.y)
            return self.run(t.body, {**env, t.x: p.left, t.y: p.right})
        if isinstance(t, LLam):
            self._add_site(t, env)
            return LNeg(t.vtype, Leaf(t.label))
        if isinstance(t, LFix):
            self.has_fix = True
            self._bind(t.var)
            self._add_site(t.body, {**env, t.var: t.vtype}, fix_var=t.var)
            return t.vtype
        if isinstance(t, LApp):
            f = self.run(t.fun, env)
            a = self.run(t.arg, env)
            if not isinstance(f, LNeg) or f.label != t.label:
                raise DefunError(f"application label {show_label(t.label)} does not match the function")
            self._note_dom(t.label, a)
            return LBot()
        if isinstance(t, (Coercl, Coercr)):
            self.plus_seen = True
            f = self.run(t.term, env)
            self._note_type(LNeg(f.dom, t.target))
            return LNeg(f.dom, t.target)
        raise DefunError(f"unexpected term {t}")

    def _add_site(self, lam: LLam, env: dict[str, LType], fix_var: str | None = None) -> None:
        old = self.sites.get(lam.label)
        if old is not None:
            # contracting a variable twice copies the same eta-expansion
            if old.term != lam or old.fix_var != fix_var:
                raise DefunError(f"abstraction label {lam.label} is used for two different abstractions")
            return
        # the binder order is pre-order, so register before the body
        self._bind(lam.var)
        self._note_type(lam.vtype)
        fvs = self._fvs(lam, drop=(fix_var,) if fix_var else ())
        self.sites[lam.label] = _Site(lam.label, lam.var, lam.vtype, lam.body, dict(env), fvs, fix_var, lam)
        self.run(lam.body, {**env, lam.var: lam.vtype})


def _neg_types(t: LType):
    if isinstance(t, LNeg):
        yield t
        yield from _neg_types(t.dom)
    elif isinstance(t, LProd):
        yield from _neg_types(t.left)
        yield from _neg_types(t.right)


def _tuple_expr(items: Sequence[tg.TargetExpr]) -> tg.TargetExpr:
    if not items:
        return E_UNIT
    if len(items) == 1:
        return items[0]
    return EPair(items[0], _tuple_expr(items[1:]))


def _tuple_type(items: Sequence[tg.TargetType]) -> tg.TargetType:
    if not items:
        return UNIT
    if len(items) == 1:
        return items[0]
    return Prod(items[0], _tuple_type(items[1:]))


def _unpack(expr: tg.TargetExpr, names: Sequence[str], body: tg.TargetExpr, supply: tg.NameSupply) -> tg.TargetExpr:
    """``let`` bindings giving ``names`` the components of the tuple ``expr``."""
    if not names:
        return body
    if len(names) == 1:
        return tg.subst_expr(body, names[0], expr)
    if len(names) == 2:
        return ELet(expr, names[0], names[1], body)
    rest = supply.fresh("_r")
    return ELet(expr, names[0], rest, _unpack(EVar(rest), names[1:], body, supply))


def _map_body(body, fn):
    if isinstance(body, Direct):
        return Direct(body.callee, fn(body.arg))
    return Branch(fn(body.scrutinee), body.left_var, body.left_callee, fn(body.left_arg),
                  body.right_var, body.right_callee, fn(body.right_arg))


class _Translator:
    def __init__(self, scan: _Scan, tau: TauEnv, supply: tg.NameSupply):
        self.scan = scan
        self.tau = tau
        self.supply = supply

    def closure(self, label: str, values: Mapping[str, tg.TargetExpr]) -> tg.TargetExpr:
        site = self.scan.sites[label]
        payload = _tuple_expr([values.get(x, EVar(x)) for x in site.fvs])
        if label in self.tau.folded:
            return EFold(self.tau.types[label], payload)
        return payload

    def value(self, t: LTerm, genv: Mapping[str, tg.TargetExpr]) -> tg.TargetExpr:
        if isinstance(t, LVar):
            return genv.get(t.name, EVar(t.name))
        if isinstance(t, LStar):
            return E_UNIT
        if isinstance(t, LNum):
            return ENum(t.n)
        if isinstance(t, LAdd):
            return EAdd(self.value(t.left, genv), self.value(t.right, genv))
        if isinstance(t, LPair):
            return EPair(self.value(t.left, genv), self.value(t.right, genv))
        if isinstance(t, LLetPair):
            return ELet(self.value(t.scrut, genv), t.x, t.y, self.value(t.body, genv))
        if isinstance(t, LIf):
            u, v = self.supply.fresh("_u"), self.supply.fresh("_u")
            return ECase(EIsZero(self.value(t.cond, genv)), u, self.value(t.then, genv),
                         v, self.value(t.else_, genv))
        if isinstance(t, LLam):
            return self.closure(t.label, {x: genv[x] for x in self.scan.sites[t.label].fvs if x in genv})
        if isinstance(t, LFix):
            site = self.scan.sites[t.body.label]
            return self.closure(site.label, {x: genv[x] for x in site.fvs if x in genv})
        if isinstance(t, Coercl):
            return EInl(self.value(t.term, genv), self.tau.of_label(t.target.right))
        if isinstance(t, Coercr):
            return EInr(self.value(t.term, genv), self.tau.of_label(t.target.left))
        if isinstance(t, LApp):
            raise DefunError("application in argument position: the term is not in tail form")
        raise DefunError(f"unexpected term {t}")

    def tail(self, t: LTerm, genv: Mapping[str, tg.TargetExpr]):
        if isinstance(t, LApp):
            arg = EPair(self.value(t.fun, genv), self.value(t.arg, genv))
            return Direct(show_label(t.label), arg)
        if isinstance(t, LLetPair):
            scrut = self.value(t.scrut, genv)
            inner = self.tail(t.body, genv)
            return _map_body(inner, lambda e: ELet(scrut, t.x, t.y, e))
        if isinstance(t, LIf):
            b1, b2 = self.tail(t.then, genv), self.tail(t.else_, genv)
            if not isinstance(b1, Direct) or not isinstance(b2, Direct):
                raise DefunError("nested case distinction: the term is not in tail form")
            u, v = self.supply.fresh("_u"), self.supply.fresh("_u")
            return Branch(EIsZero(self.value(t.cond, genv)), u, b1.callee, b1.arg, v, b2.callee, b2.arg)
        raise DefunError("a body of type bottom must be an application, a let or a case distinction")

    def definition(self, site: _Site) -> FunctionDef:
        w = self.supply.fresh("_w")
        c = self.supply.fresh("_c")
        genv = {}
        if site.fix_var is not None:
            genv[site.fix_var] = self.closure(site.label, {})
        body = self.tail(site.body, genv)
        payload = EUnfold(self.tau.types[site.label], EVar(c)) if site.label in self.tau.folded else EVar(c)

        def wrap(e):
            return ELet(EVar(w), c, site.var, _unpack(payload, site.fvs, e, self.supply))

        return FunctionDef(site.label, w, _map_body(body, wrap))


def _dispatcher(lt: Plus, tau: TauEnv, supply: tg.NameSupply) -> FunctionDef:
    w, f, x = supply.fresh("_w"), supply.fresh("_f"), supply.fresh("_x")
    f1, f2 = supply.fresh("_f"), supply.fresh("_f")
    scrut = ELet(EVar(w), f, x, EVar(f))
    left = ELet(EVar(w), f, x, EPair(EVar(f1), EVar(x)))
    right = ELet(EVar(w), f, x, EPair(EVar(f2), EVar(x)))
    return FunctionDef(show_label(lt), w, Branch(scrut, f1, show_label(lt.left), left,
                                                 f2, show_label(lt.right), right))


def defun(seq: LabelledSequent | LTerm, ctx: Sequence[tuple[str, LType]] = (), flatten: bool = False,
          extra_labels: Sequence[LabelTerm] = ()) -> DefunOutput:
    """``t*`` and ``D(t)`` for a labelled term (or sequent).

    ``extra_labels`` are label terms called from outside (entry ports); their
    dispatchers are generated too."""
    if isinstance(seq, LabelledSequent):
        term, ctx = seq.term, seq.ctx
        outer_types = [seq.type] + [t for _, t in seq.ctx]
        extra_labels = list(extra_labels) + list(seq.entries)
    else:
        term, outer_types = seq, [t for _, t in ctx]
    scan = _Scan(ctx)
    root_type = scan.run(term, dict(ctx))
    outer_types.append(root_type)
    for t in outer_types:
        for n in _neg_types(t):
            if n.label not in scan.app_doms:
                scan._note_dom(n.label, n.dom)
    for lt in extra_labels:
        if isinstance(lt, Plus):
            scan.plus_seen = True
    single = not scan.plus_seen and not scan.has_fix

    # closure datatypes, one equation per abstraction label
    placeholder = TauEnv({l: tg.TyVar(tau_var(l)) for l in scan.sites}, {}, [], set())
    eqs = {}
    for l, site in scan.sites.items():
        env = {**site.env, site.var: site.vtype}
        eqs[l] = _tuple_type([placeholder.of_type(env[x]) for x in site.fvs])
    tau = _closure_types(eqs, nominal_all=not (single or flatten))

    avoid = set(scan.order)
    supply = tg.NameSupply(avoid, prefix="_v")
    tr = _Translator(scan, tau, supply)
    residual = tr.value(term, {})
    defs: dict[str, FunctionDef] = {}
    arg_types: dict[str, tg.TargetType] = {}
    for l, site in scan.sites.items():
        defs[l] = tr.definition(site)
        arg_types[l] = Prod(tau.types[l], tau.of_type(site.vtype))

    def add_dispatchers(lt: LabelTerm, dom: LType):
        for p in plus_nodes(lt):
            name = show_label(p)
            if name not in defs:
                defs[name] = _dispatcher(p, tau, supply)
                arg_types[name] = Prod(tau.of_label(p), tau.of_type(dom))
        for leaf in _leaves(lt):
            arg_types.setdefault(leaf, Prod(UNIT, tau.of_type(dom)))

    for lt, dom in scan.app_doms.items():
        add_dispatchers(lt, dom)
    for lt in extra_labels:
        dom = scan.app_doms.get(lt)
        if dom is None:
            raise DefunError(f"no argument type known for port {show_label(lt)}")
        add_dispatchers(lt, dom)
    return DefunOutput(residual, defs, tau, arg_types, single)


def _leaves(lt: LabelTerm) -> list[str]:
    if isinstance(lt, Leaf):
        return [lt.name]
    return _leaves(lt.left) + _leaves(lt.right)


def defun_program(seq: LabelledSequent, flatten: bool = False) -> TargetProgram:
    """Assemble ``(x- g+, D(t), x+ g-)`` from a labelled sequent."""
    out = defun(seq, flatten=flatten)
    entries = [show_label(l) for l in seq.entries]
    exits = [show_label(l) for l in seq.exits]
    defs = {k: v for k, v in out.defs.items() if k not in exits}
    return TargetProgram(entries, defs, exits, out.arg_types, out.data_env())


def cps_defun(d: src.Derivation, flatten: bool = False, plan=None) -> TargetProgram:
    """Source derivation to target program: CPS, labelling, defunctionalization."""
    from .cps import cps_translate
    from .labelling import annotate_cps_full

    seq = annotate_cps_full(cps_translate(d), plan)
    return defun_program(seq, flatten)


def erase(p: TargetProgram) -> TargetProgram:
    """Drop every argument: ``f(x) = g(e)`` becomes ``f() = g()``."""
    defs = {}
    for name, d in p.defs.items():
        if not isinstance(d.body, Direct):
            raise DefunError(f"cannot erase the case distinction in {name}")
        defs[name] = FunctionDef(name, "_", Direct(d.body.callee, E_UNIT))
    types = {k: UNIT for k in p.labels()}
    return TargetProgram(p.entries, defs, p.exits, types)
