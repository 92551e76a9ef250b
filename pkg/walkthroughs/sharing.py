"""Contraction and recursive closure types.

A shared argument makes both routes route answers by a tag; Kierstead's term
needs a recursive annotation and mutually recursive closure datatypes."""

from intweave import compare as cmp
from intweave import source as src
from intweave import target as tg
from intweave.target import Branch


def show_dispatch(text):
    d = src.typecheck_stl(src.parse_source(text))
    c = cmp.compile_both(d)
    print(f"{text}\n  annotated: {src.show_subexp(c.annotated.type, simplify=True)}")
    for name, p in (("defun", c.defun), ("int", c.int)):
        for f in p.defs.values():
            if isinstance(f.body, Branch):
                print(f"  {name}: {tg.show_def(f)}")


def main():
    show_dispatch("fn x: Nat => x + x")

    t = cmp.NAMED_EXAMPLES["kierstead-t"]
    s = "fn f: (Nat -> Nat) -> Nat -> Nat => f (f (fn x: Nat => x))"
    d = src.typecheck_stl(src.parse_source(f"({t}) ({s})"))
    e = src.infer_subexp(d)
    print("\nKierstead t s")
    for ty in cmp.recursive_annotations(e):
        print("  recursive annotation:", tg.show_type(ty))
    for g in cmp.closure_groups(d):
        print(f"  recursive closure group of {len(g)} labels: {' '.join(g)}")

    k = src.typecheck_stl(cmp.named_terms()["kierstead"])
    print("  t s 3 =", cmp.run_closed_nat(k, "cps-defun"), "=", cmp.run_closed_nat(k, "int"))


if __name__ == "__main__":
    main()
