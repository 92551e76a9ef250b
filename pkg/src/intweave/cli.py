"""Command-line front end.

    intweave check TERM
    intweave compile TERM --emit {cps,labelled,defun,int,trace,dot,derivation}
    intweave run TERM --route {cps-defun,int,erased}
    intweave trace TERM --route ...
    intweave compare [TERM | --file F | --corpus --seed S --size N --count K]

TERM is source text; ``--file`` reads it from a file instead. Exit codes:
0 success, 1 type or compile error, 2 usage error, 3 failed comparison.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from . import compare as cmp
from . import source as src
from . import target as tg
from .cps import cps_translate
from .defun import DefunError
from .int_interp import IntError
from .labelling import LabelPlan, annotate_cps_full, show_labelled, show_ltype

EMITS = ("cps", "labelled", "defun", "int", "trace", "dot", "derivation")
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_PROPERTY = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    term: str | None = None
    path: str | None = None
    route: str = "cps-defun"
    emit: str = "defun"
    max_steps: int = cmp.MAX_STEPS
    fuel: int = 10**6
    seed: int = 0
    flatten_tau: bool = False
    style: str = "plain"
    compact: bool = False
    corpus: bool = False
    size: int = 12
    count: int = 100


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intweave", description="Compile a small higher-order language "
                                "to first-order programs along two routes and compare them.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("term", nargs="?", help="source term (or use --file)")
        sp.add_argument("--file", dest="path", help="read the source term from a file")
        sp.add_argument("--max-steps", type=int, default=cmp.MAX_STEPS, help="call limit for traces")
        sp.add_argument("--fuel", type=int, default=10**6, help="evaluation fuel of the reference evaluator")
        sp.add_argument("--flatten-tau", action="store_true",
                        help="inline non-recursive closure datatypes as tuples")

    sp = sub.add_parser("check", help="type check and print the annotated type")
    common(sp)
    sp = sub.add_parser("compile", help="print one compilation stage")
    common(sp)
    sp.add_argument("--emit", choices=EMITS, default="defun")
    sp.add_argument("--route", choices=cmp.ROUTES, default="cps-defun", help="program used by --emit trace/dot")
    sp = sub.add_parser("run", help="run a closed term of type Nat")
    common(sp)
    sp.add_argument("--route", choices=cmp.ROUTES, default="cps-defun")
    sp = sub.add_parser("trace", help="print the call trace of a closed term")
    common(sp)
    sp.add_argument("--route", choices=cmp.ROUTES, default="cps-defun")
    sp.add_argument("--style", choices=("plain", "closure", "args"), default="plain",
                    help="value layout: as is, closure and argument, or flat argument list")
    sp.add_argument("--compact", action="store_true", help="drop glue calls and renumber labels")
    sp = sub.add_parser("compare", help="check both routes against each other")
    common(sp)
    sp.add_argument("--corpus", action="store_true", help="use the generated corpus and named examples")
    sp.add_argument("--seed", type=int, default=None, help="corpus seed (default: $INTWEAVE_SEED or 0)")
    sp.add_argument("--size", type=int, default=12, help="maximal term size in the corpus")
    sp.add_argument("--count", type=int, default=100, help="number of generated terms")
    return p


def _config(ns: argparse.Namespace) -> RunConfig:
    seed = getattr(ns, "seed", None)
    if seed is None:
        env = os.environ.get("INTWEAVE_SEED")
        try:
            seed = int(env) if env else 0
        except ValueError:
            raise UsageError(f"INTWEAVE_SEED must be an integer, not {env!r}") from None
    cfg = RunConfig(ns.command, ns.term, ns.path, getattr(ns, "route", "cps-defun"), getattr(ns, "emit", "defun"),
                    ns.max_steps, ns.fuel, seed, ns.flatten_tau, getattr(ns, "style", "plain"),
                    getattr(ns, "compact", False), getattr(ns, "corpus", False), getattr(ns, "size", 12),
                    getattr(ns, "count", 100))
    if cfg.term is not None and cfg.path is not None:
        raise UsageError("give the term inline or with --file, not both")
    if cfg.term is None and cfg.path is None and not cfg.corpus:
        raise UsageError("no source term given")
    return cfg


def _source(cfg: RunConfig) -> str:
    if cfg.path is not None:
        try:
            with open(cfg.path, encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {cfg.path}: {exc.strerror}") from None
    return cfg.term


def _derive(cfg: RunConfig) -> src.Derivation:
    return src.typecheck_stl(src.parse_source(_source(cfg)))


def _closed_nat(d: src.Derivation) -> None:
    if d.ctx or d.type != src.NAT_T:
        raise cmp.CompareError(f"expected a closed term of type Nat, got {src.show_source_type(d.type)}")


def cmd_check(cfg: RunConfig, out) -> int:
    d = _derive(cfg)
    e = src.infer_subexp(d)
    print(f"type: {src.show_source_type(d.type)}", file=out)
    print(f"annotated: {src.show_subexp(e.type, simplify=True)}", file=out)
    print(f"fragment: {d.fragment}", file=out)
    for ty in cmp.recursive_annotations(e):
        print(f"recursive annotation: {tg.show_type(ty)}", file=out)
    return EXIT_OK


def _trace(cfg: RunConfig, d: src.Derivation) -> tg.CallTrace:
    _closed_nat(d)
    if cfg.compact:
        pair = cmp.compact_traces(d)
        return pair.int if cfg.route == "int" else pair.defun
    p = cmp.route_program(d, cfg.route, cfg.flatten_tau)
    return tg.run_trace(p, p.entries[0], cmp.entry_value(p), cfg.max_steps)


def cmd_compile(cfg: RunConfig, out) -> int:
    d = _derive(cfg)
    emit = cfg.emit
    if emit == "derivation":
        print(src.show_derivation(src.infer_subexp(d)), file=out)
    elif emit == "cps":
        c = cps_translate(d)
        print(f"{src.show_cps(c.term)} : {src.show_cps_type(c.type)}", file=out)
    elif emit == "labelled":
        seq = annotate_cps_full(cps_translate(d), LabelPlan(d))
        print(f"{show_labelled(seq.term)} : {show_ltype(seq.type)}", file=out)
    elif emit in ("defun", "int"):
        route = "cps-defun" if emit == "defun" else "int"
        print(tg.format_program(cmp.route_program(d, route, cfg.flatten_tau)), file=out, end="")
    elif emit == "dot":
        print(tg.format_dot(cmp.route_program(d, cfg.route, cfg.flatten_tau)), file=out, end="")
    elif emit == "trace":
        print(tg.format_trace(_trace(cfg, d), cfg.style), file=out, end="")
    return EXIT_OK


def cmd_run(cfg: RunConfig, out) -> int:
    d = _derive(cfg)
    _closed_nat(d)
    print(cmp.run_closed_nat(d, cfg.route, cfg.max_steps, cfg.flatten_tau), file=out)
    return EXIT_OK


def cmd_trace(cfg: RunConfig, out) -> int:
    d = _derive(cfg)
    print(tg.format_trace(_trace(cfg, d), cfg.style), file=out, end="")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out) -> int:
    if cfg.corpus:
        verdicts = cmp.run_corpus(cfg.seed, cfg.count, cfg.size, max_steps=cfg.max_steps)
    else:
        verdicts = [cmp.check_case("input", src.parse_source(_source(cfg)), cfg.max_steps, cfg.fuel)]
    print(cmp.format_verdicts(verdicts), file=out)
    failed = [v for v in verdicts if not v.ok]
    print(f"{len(verdicts) - len(failed)}/{len(verdicts)} cases ok", file=out)
    return EXIT_PROPERTY if failed else EXIT_OK


COMMANDS = {"check": cmd_check, "compile": cmd_compile, "run": cmd_run, "trace": cmd_trace, "compare": cmd_compare}


def main(argv: list[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _config(ns)
        return COMMANDS[cfg.command](cfg, out)
    except UsageError as exc:
        print(f"intweave: {exc}", file=err)
        return EXIT_USAGE
    except src.Diverged as exc:
        print(f"intweave: no answer: {exc}", file=err)
        return EXIT_ERROR
    except (src.SourceError, tg.TargetError, DefunError, IntError, cmp.CompareError, ValueError) as exc:
        print(f"intweave: {type(exc).__name__}: {exc}", file=err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
