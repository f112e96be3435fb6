import math
import pathlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from obstakl import classical, harness
from obstakl.harness import (CSV_HEADER, ConvergenceRecord, StudyError, StudySpec,
                             check_study, fit_rate, format_csv, parse_spec, run_study)
from obstakl.vi_solver import NonConvergenceError


def test_fit_rate_examples():
    assert fit_rate([(0.1, 0.1), (0.05, 0.05)]) == pytest.approx((1.0, 1.0))
    assert fit_rate([(0.1, 0.01), (0.05, 0.0025)])[0] == pytest.approx(2.0)
    slope, r2 = fit_rate([(0.1, 3.0), (0.05, 3.0), (0.025, 3.0)])
    assert slope == pytest.approx(0.0, abs=1e-12) and r2 == 1.0


@pytest.mark.parametrize("pairs", [[(0.1, 0.1)], [(0.1, 0.0), (0.05, 0.1)],
                                   [(-0.1, 0.1), (0.05, 0.1)], [(0.1, 1), (0.1, 2)]])
def test_fit_rate_rejects(pairs):
    with pytest.raises(ValueError):
        fit_rate(pairs)


@given(st.floats(-3, 3), st.floats(0.1, 10), st.integers(3, 8))
def test_fit_rate_recovers_power_laws(p, c, k):
    h = 2.0 ** -np.arange(1, k + 1)
    slope, r2 = fit_rate(zip(h, c * h ** p))
    assert slope == pytest.approx(p, abs=1e-9)
    if abs(p) > 1e-3:
        # R^2 is ill-conditioned for nearly constant data
        assert r2 == pytest.approx(1.0, abs=1e-9)


def test_spec_validation():
    with pytest.raises(StudyError):
        StudySpec("classical1d", [])
    with pytest.raises(StudyError):
        StudySpec("nonsense", [3])
    with pytest.raises(StudyError):
        StudySpec("classical1d", [4, 3])
    with pytest.raises(StudyError):
        StudySpec("classical1d", [3], solver="jacobi")
    with pytest.raises(StudyError):
        StudySpec("fractional-linear", [3], s=0.25, gamma=2.0)


def test_parse_spec_variants():
    text = """
[study]
problem = fractional-linear
levels = 3..5
solver = pdas
tol = 1e-12
gamma = auto

[fractional-linear]
s = 0.25
"""
    spec = parse_spec(text)
    assert spec.levels == [3, 4, 5] and spec.s == 0.25 and spec.gamma is None
    assert spec.tol == 1e-12
    assert parse_spec("[study]\nproblem=thin\nlevels=3, 4,6\n").levels == [3, 4, 6]
    assert parse_spec("[study]\nproblem=thin\nlevels=3 4\ntimings=yes\n").timings


@pytest.mark.parametrize("text", ["", "[study]\nlevels=3\n",
                                  "[study]\nproblem=thin\nlevels=3\ncolour=red\n",
                                  "[study]\nproblem=thin\nlevels=a..b\n",
                                  "[study]\nproblem=thin\n",
                                  "no section"])
def test_parse_spec_errors(text):
    with pytest.raises(StudyError):
        parse_spec(text)


def test_shipped_configs_parse():
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.ini"))
    assert len(names) == 5
    for p in root.glob("*.ini"):
        spec = harness.load_spec(str(p))
        assert spec.problem in harness.PROBLEMS


def test_record_row_format():
    rec = ConvergenceRecord(3, 0.125, 1.0, 0.5, 0.25)
    row = rec.csv_row()
    assert row.startswith("3,1.2500000000e-01,1.0000000000e+00")
    assert row.split(",")[5] == "nan"
    assert format_csv([rec]).splitlines()[0] == CSV_HEADER
    assert CSV_HEADER == "level,size,err_h1,err_l2,err_linf,fb_measure,fb_distance,kkt,seconds"


def test_classical_study_and_csv_determinism(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    results = []
    for p in paths:
        results.append(run_study(StudySpec("classical1d", list(range(3, 9)), output=str(p))))
    assert len(results[0].records) == 6
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 7
    assert lines[-1].endswith("0.0000000000e+00")        # seconds column off
    slope, r2 = results[0].rates["h1"]
    assert 0.9 <= slope <= 1.1
    names = [c[0] for c in check_study(results[0])]
    assert names[:2] == ["h1 slope", "pointwise ratio"]


def test_partial_results_flushed(tmp_path, monkeypatch):
    real = classical.solve_classical

    def flaky(bench, n, *a, **k):
        if n >= 32:
            raise NonConvergenceError("forced", 1.0, 5)
        return real(bench, n, *a, **k)

    monkeypatch.setattr(classical, "solve_classical", flaky)
    out = tmp_path / "partial.csv"
    with pytest.raises(NonConvergenceError):
        run_study(StudySpec("classical1d", [3, 4, 5, 6], output=str(out)))
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert [ln.split(",")[0] for ln in lines[1:]] == ["3", "4"]


def test_fractional_linear_study_sizes():
    res = run_study(StudySpec("fractional-linear", [3, 4], s=0.5))
    assert [r.size for r in res.records] == [7 * 8, 15 * 16]
    assert all(r.err_h1 > 0 for r in res.records)
    slope, _ = res.rates["energy"]
    assert math.isfinite(slope)
