"""Acceptance criteria AC-1 .. AC-8.

The whole selftest is run twice, with 1 and with 8 worker threads; each
criterion is asserted on the first run and AC-8 additionally compares every
artifact of the two runs byte for byte.
"""
from pathlib import Path

import pytest

from bhlineage import acceptance

LINES = []


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = {}
    for threads in (1, 8):
        d = tmp_path_factory.mktemp(f"selftest_threads{threads}")
        out[threads] = (d, {r.id: r for r in acceptance.run_selftest(
            d, threads=threads, echo=lambda line: None)})
    for r in out[1][1].values():
        LINES.append(r.line())
    return out


@pytest.mark.parametrize("cid", list(acceptance.CRITERIA))
def test_criterion(runs, cid):
    res = runs[1][1][cid]
    print(res.line())
    assert res.passed, res.details
    assert res.within_budget, f"{cid} took {res.seconds:.1f}s (budget {res.budget_seconds}s)"


def test_selftest_artifacts_identical_across_threads(runs):
    (d1, _), (d8, r8) = runs[1], runs[8]
    names = sorted(p.name for p in Path(d1).iterdir())
    differing = [n for n in names
                 if not (Path(d8) / n).exists()
                 or (Path(d1) / n).read_bytes() != (Path(d8) / n).read_bytes()]
    same = not differing and names == sorted(p.name for p in Path(d8).iterdir())
    verdict = "PASS" if same else "FAIL"
    LINES.append(f"[{verdict}] AC-8 selftest artifacts byte-identical with 1 and 8 threads "
                 f"({len(names)} files)")
    assert {"selftest.json", "ac2_bins.csv"} <= set(names)
    assert same, differing
    assert all(r.passed for r in r8.values())
