"""Recursion through fix: the interaction route keeps a stack of saved
values, the defunctionalized route keeps closures.

The language has no subtraction, so the loop counts a three-bit counter down
from 5 and multiplies by repeated addition."""

from intweave import compare as cmp
from intweave import source as src
from intweave import target as tg


def main():
    term = cmp.named_terms()["factorial-5"]
    d = src.typecheck_stl(term)
    print("reference:", src.reference_eval(term))
    for route in ("cps-defun", "int"):
        p = cmp.route_program(d, route)
        trace = tg.run_trace(p, p.entries[0], cmp.entry_value(p))
        print(f"{route}: {cmp.run_closed_nat(d, route)} after {len(trace)} calls, {len(p.defs)} definitions")
    e = src.infer_subexp(d)
    for ty in cmp.recursive_annotations(e)[:3]:
        print("recursive annotation:", tg.show_type(ty))


if __name__ == "__main__":
    main()
