import pytest

from intweave import compare as cmp
from intweave import source as src

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def derive(text: str, context=()):
    return src.typecheck_stl(src.parse_source(text), context)


@pytest.fixture(scope="session")
def named():
    return cmp.named_terms()


@pytest.fixture(scope="session")
def stl_corpus():
    return cmp.generate_corpus(seed=11, count=220, max_size=12)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
