"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import pytest

from poemlab.experiments import CRITERIA, _criterion


@pytest.mark.parametrize("number,name,check", CRITERIA, ids=[f"c{n}-{name.replace(' ', '-')}" for n, name, _ in CRITERIA])
def test_criterion(number, name, check, capsys):
    result = _criterion(number, name, check)
    with capsys.disabled():
        print(f"\n[{'PASS' if result.passed else 'FAIL'}] criterion {number} ({name}): {result.detail}")
    assert result.passed, result.detail


if __name__ == "__main__":
    import sys

    from poemlab.experiments import paper_suite

    rows = paper_suite()
    for r in rows:
        print(f"[{'PASS' if r.passed else 'FAIL'}] criterion {r.number} ({r.name}): {r.detail}")
    sys.exit(0 if all(r.passed for r in rows) else 1)
