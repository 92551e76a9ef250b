"""The increment applied to 42, compiled along both routes.

Run with ``python walkthroughs/increment.py``."""

from intweave import compare as cmp
from intweave import source as src
from intweave import target as tg
from intweave.cps import cps_translate
from intweave.labelling import annotate_cps_full, show_labelled, show_ltype


def main():
    term = src.parse_source("(fn x: Nat => 1 + x) 42")
    d = src.typecheck_stl(term)
    print("source:", src.pretty(term), ":", src.show_source_type(d.type))

    fn = src.typecheck_stl(src.parse_source("fn x: Nat => 1 + x"))
    print("annotated type:", src.show_subexp(src.infer_subexp(fn).type, simplify=True))
    seq = annotate_cps_full(cps_translate(fn))
    print("labelled CPS:", show_labelled(seq.term))
    print("         type:", show_ltype(seq.type))

    c = cmp.compile_both(d)
    print("\n-- defunctionalized program --")
    print(tg.format_program(c.defun), end="")
    print("\n-- interaction program --")
    print(tg.format_program(c.int), end="")
    print("\nsame skeleton:", cmp.skeleton_equal(c.defun, c.int))

    pair = cmp.compact_traces(d)
    print("\ndefun trace:", " ".join(tg.format_trace(pair.defun, "closure").split()))
    print("int trace:  ", " ".join(tg.format_trace(pair.int, "args").split()))
    print("int trace simplifies defun trace:", cmp.simplifies_trace(pair.int, pair.defun))

    for route in cmp.ROUTES:
        print(f"{route}: {cmp.run_closed_nat(d, route)}")


if __name__ == "__main__":
    main()
