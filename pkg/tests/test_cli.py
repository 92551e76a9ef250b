import io

from intweave.cli import main


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_check_prints_types():
    code, out, _ = run("check", "fn x: Nat => x + x")
    assert code == 0
    assert "type: Nat -> Nat" in out
    assert "annotated: (unit + nat)·N ⊸ N" in out
    assert "fragment: stl" in out


def test_check_reports_recursive_annotations():
    code, out, _ = run("check", "(fn g: ((Nat -> Nat) -> Nat -> Nat) -> Nat -> Nat => g (fn x: Nat -> Nat => "
                       "g (fn y: Nat -> Nat => x))) (fn f: (Nat -> Nat) -> Nat -> Nat => f (f (fn x: Nat => x))) 3")
    assert code == 0 and "recursive annotation: mu" in out


def test_run_on_every_route():
    for route in ("cps-defun", "int", "erased"):
        code, out, _ = run("run", "(fn x: Nat => 1 + x) 42", "--route", route)
        assert (code, out.strip()) == (0, "43")


def test_compact_trace():
    code, out, _ = run("trace", "(fn x: Nat => 1 + x) 42", "--compact", "--route", "int", "--style", "args")
    assert code == 0
    assert out.split() == ["l0()", "l1()", "l2()", "l3(1)", "l5(1)", "l4(1,42)", "l6(43)"]


def test_compile_emits_each_stage():
    for emit in ("cps", "labelled", "defun", "int", "dot", "derivation"):
        code, out, _ = run("compile", "fn x: Nat => 1 + x", "--emit", emit)
        assert code == 0 and out.strip(), emit
    code, out, _ = run("compile", "7", "--emit", "int")
    assert "l1(_w) = l2(7)" in out


def test_compile_trace_needs_closed_nat():
    code, out, _ = run("compile", "(fn x: Nat => 1 + x) 42", "--emit", "trace")
    assert code == 0 and out.strip().splitlines()[-1].endswith("43>)")


def test_file_input(tmp_path):
    f = tmp_path / "t.src"
    f.write_text("(fn x: Nat => x + x) 21\n")
    code, out, _ = run("run", "--file", str(f))
    assert (code, out.strip()) == (0, "42")


def test_compare_single_term():
    code, out, _ = run("compare", "(fn x: Nat => x + x) 3")
    assert code == 0 and "1/1 cases ok" in out


def test_compare_corpus_uses_environment_seed(monkeypatch):
    monkeypatch.setenv("INTWEAVE_SEED", "4")
    code, out, _ = run("compare", "--corpus", "--count", "5", "--size", "8")
    assert code == 0 and "cases ok" in out


def test_usage_errors_exit_2(monkeypatch):
    assert run("run")[0] == 2
    assert run("nonsense")[0] == 2
    assert run("run", "1", "--file", "x")[0] == 2
    assert run("run", "--file", "/nonexistent/file")[0] == 2
    monkeypatch.setenv("INTWEAVE_SEED", "abc")
    assert run("compare", "--corpus")[0] == 2


def test_source_errors_exit_1():
    code, _, err = run("check", "1 +")
    assert code == 1 and "ParseError" in err
    code, _, err = run("check", "1 + ()")
    assert code == 1 and "TypeCheckError" in err
    code, _, err = run("run", "fn x: Nat => x")
    assert code == 1


def test_divergence_is_an_error():
    code, _, err = run("run", "fix[Nat] (fn y: Nat => y + 1)", "--max-steps", "500")
    assert code == 1 and err
