import csv
import io

import numpy as np
import pytest

from scaleformer import bench
from scaleformer.bench import BENCH_COLUMNS, analytic_macs, run_sweep
from scaleformer.errors import ConfigError, ContractError
from scaleformer.plotting import macs_figure_svg


def test_reference_values():
    assert analytic_macs("original", 8, 8, 4) == 32768
    assert analytic_macs("dualaxis", 8, 8, 4) == 4608
    assert analytic_macs("spatial_reduction", 8, 8, 4, R=1) == analytic_macs("original", 8, 8, 4)
    assert analytic_macs("axial", 8, 8, 4) == 2 * (8 * 64 * 4 + 8 * 64 * 4)


def test_formula_terms_rectangular():
    H, W, C = 6, 10, 3
    assert analytic_macs("dualaxis", H, W, C) == H * H * C + W * W * C + H * H * W * C + H * W * W * C
    assert analytic_macs("spatial_reduction", H, W, C, R=2) == 2 * 60 * 15 * 3
    with pytest.raises(ConfigError):
        analytic_macs("spatial_reduction", 6, 10, 3, R=4)


def test_ratio_shrinks_with_size():
    rows = run_sweep([(s, s, 64) for s in (16, 32, 64)], ["dualaxis", "original"], trials=3)
    ratios = []
    for s in (16, 32, 64):
        d = next(r for r in rows if r.H == s and r.variant == "dualaxis")
        o = next(r for r in rows if r.H == s and r.variant == "original")
        ratios.append(d.measured_macs / o.measured_macs)
        expected = (s * s * 64 * 2 + 2 * s**3 * 64) / (2 * s**4 * 64)
        assert ratios[-1] == pytest.approx(expected, rel=1e-15)
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[-1] < 1 / 50


def test_sweep_measured_equals_analytic():
    rows = run_sweep([(4, 4, 8), (8, 4, 8)], ["original", "sr", "axial", "dualaxis"], trials=3, heads=2)
    assert len(rows) == 8
    for r in rows:
        assert r.measured_macs == r.analytic_macs
        assert r.measured_projection_macs == r.analytic_projection_macs
        assert r.trials == 3 and 0 < r.min_s <= r.median_s


def test_single_row():
    assert len(run_sweep([(8, 8, 4)], ["dualaxis"], trials=3)) == 1


def test_rerun_identical_counts():
    a = run_sweep([(8, 8, 4)], ["dualaxis", "axial"], trials=3)
    b = run_sweep([(8, 8, 4)], ["dualaxis", "axial"], trials=3)
    for x, y in zip(a, b):
        assert (x.measured_macs, x.params, x.measured_projection_macs) == (y.measured_macs, y.params, y.measured_projection_macs)


def test_params_differ_by_kernels():
    rows = run_sweep([(8, 8, 16)], ["original", "dualaxis"], trials=3, dw_kernel=5)
    assert rows[1].params - rows[0].params == 4 * 16 * 5


def test_trials_minimum():
    with pytest.raises(ConfigError):
        run_sweep([(8, 8, 4)], ["original"], trials=2)


def test_mismatch_is_hard_failure(monkeypatch):
    monkeypatch.setattr(bench, "analytic_macs", lambda *a, **k: 1)
    with pytest.raises(ContractError):
        run_sweep([(4, 4, 4)], ["original"], trials=3)


def test_csv_and_svg():
    rows = run_sweep([(4, 4, 4), (8, 8, 4)], ["original", "dualaxis"], trials=3)
    table = list(csv.DictReader(io.StringIO(bench.report_csv(rows))))
    assert list(table[0]) == BENCH_COLUMNS
    assert [int(t["measured_macs"]) for t in table] == [r.measured_macs for r in rows]
    svg = macs_figure_svg(rows)
    assert svg.startswith(b"<?xml") and b"<svg" in svg
    assert svg == macs_figure_svg(rows)
