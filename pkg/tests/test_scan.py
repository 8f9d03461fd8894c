import csv
import json
import math
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_phase import datasets, scan
from relu_phase.scaling import PhaseCoordinates, Regime
from relu_phase.scan import CellResult, PhaseMap, RunPlan, RunRecord, ScanGrid, SlopeFit, fit_slope

from oracles import ols_slope

DS = datasets.default_dataset()
TINY = dict(widths=(10, 100), replicates=2, base_seed=5)
PLAN = RunPlan(max_steps=2000)


def test_fit_slope_examples():
    m = np.array([1e3, 2e3, 4e3, 8e3])
    f = fit_slope(m, m**0.5)
    assert f.slope == pytest.approx(0.5, abs=1e-12) and f.residual_rms < 1e-12 and f.point_count == 4
    f = fit_slope(m, 2 * m**-0.3)
    assert f.slope == pytest.approx(-0.3, abs=1e-12) and f.intercept == pytest.approx(math.log(2), abs=1e-10)
    assert fit_slope(m, np.full(4, 7.0)).slope == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.floats(0.01, 100), min_size=3, max_size=6))
@settings(max_examples=50)
def test_fit_slope_matches_polyfit(values):
    widths = [1000 * 2**k for k in range(len(values))]
    assert fit_slope(widths, values).slope == pytest.approx(ols_slope(widths, values), abs=1e-9)


def test_fit_slope_errors():
    with pytest.raises(ValueError):
        fit_slope([10], [1.0])
    with pytest.raises(ValueError):
        fit_slope([10, 20], [1.0, 0.0])
    with pytest.raises(ValueError):
        fit_slope([10, 20], [1.0, math.nan])
    with pytest.raises(ValueError):
        fit_slope([10, 10], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit_slope([10, 20, 30], [1.0, 2.0])


def test_grid_validation():
    with pytest.raises(ValueError):
        ScanGrid((1.0, 0.5), (0.0,), (10, 100))
    with pytest.raises(ValueError):
        ScanGrid((1.0,), (), (10, 100))
    with pytest.raises(ValueError):
        ScanGrid((1.0,), (0.0,), (100,))
    with pytest.raises(ValueError):
        ScanGrid((1.0,), (0.0,), (10, 100), replicates=0)
    with pytest.warns(UserWarning, match="decade"):
        ScanGrid((1.0,), (0.0,), (100, 200))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScanGrid((1.0,), (0.0,), (100, 1000))


def test_grid_cells_and_seeds():
    g = ScanGrid((0.5, 1.0), (-0.5, 0.0), (10, 100))
    assert [(i, j) for i, j, _ in g.cells()] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert list(g.cells())[2][2] == PhaseCoordinates(0.5, 0.0)
    seeds = {g.run_seed(i, j, w, r) for i in range(2) for j in range(2) for w in g.widths for r in range(3)}
    assert len(seeds) == 24
    assert g.run_seed(1, 0, 10, 2) == ScanGrid((0.5, 1.0), (-0.5, 0.0), (10, 100)).run_seed(1, 0, 10, 2)
    assert g.run_seed(0, 0, 10, 0) != ScanGrid((0.5, 1.0), (-0.5, 0.0), (10, 100), base_seed=1).run_seed(0, 0, 10, 0)


def synthetic_map(gammas, slopes_by_row):
    grid = ScanGrid(tuple(gammas), tuple(slopes_by_row), (10, 100))
    cells = []
    for i, j, coords in grid.cells():
        s = slopes_by_row[coords.gamma_prime][i]
        fit = None if s is None else SlopeFit(s, 0.0, 0.0, 2)
        cells.append(CellResult(coords, (i, j), Regime.LINEAR, False, fits={"w": fit}))
    return PhaseMap(grid, cells)


def test_boundary_zeros_examples():
    pm = synthetic_map([0.8, 1.2], {0.0: [-0.2, 0.2]})
    [(gp, z)] = scan.boundary_zeros(pm)
    assert gp == 0.0 and z == pytest.approx(1.0)
    assert scan.boundary_zeros(synthetic_map([0.5, 1.0, 1.5], {0.0: [-0.3, -0.2, -0.1]})) == []
    pm = synthetic_map([0.5, 1.0, 1.5], {-0.5: [-0.4, 0.0, 0.5], 0.0: [-1.0, None, 1.0]})
    assert scan.boundary_zeros(pm) == [(-0.5, 1.0), (0.0, 1.0)]
    with pytest.raises(ValueError):
        scan.boundary_zeros(synthetic_map([1.0], {0.0: [0.1]}))


def rec(width, r, value, reason="RiskTolerance"):
    return RunRecord(width, r, 0, value, value, value, reason, 1, 0.0)


def test_assemble_geometric_mean_and_partial():
    grid = ScanGrid((1.0,), (0.0,), (10, 100), replicates=2)
    c = PhaseCoordinates(1.0, 0.0)
    cell = scan._assemble(grid, 0, 0, c, [rec(10, 0, 1.0), rec(10, 1, 4.0), rec(100, 0, 8.0), rec(100, 1, 2.0)])
    assert cell.means["w"] == pytest.approx([2.0, 4.0])
    assert cell.slope("w") == pytest.approx(math.log(2) / math.log(10))
    assert not cell.partial and cell.regime is Regime.CRITICAL and cell.near_critical
    cell = scan._assemble(grid, 0, 0, c, [rec(10, 0, 1.0), rec(10, 1, 4.0, "Diverged"),
                                          rec(100, 0, 8.0, "Diverged"), rec(100, 1, 2.0, "Diverged")])
    assert cell.partial and cell.widths == [10] and cell.means["w"] == [1.0]
    cell = scan._assemble(grid, 0, 0, c, [rec(10, 0, 1.0), rec(100, 0, 1.0, "Diverged")])
    assert cell.widths == [10] and math.isnan(cell.slope("w"))


def tiny_scan(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        grid = ScanGrid((0.5, 1.5), (0.0,), **TINY)
    return scan.scan(grid, DS, PLAN, **kw)


def test_scan_is_deterministic_and_parallel_safe(tmp_path):
    a = tiny_scan()
    b = tiny_scan(jobs=2)
    assert a == b
    pa = scan.write_phase_map(a, tmp_path / "a")
    pb = scan.write_phase_map(b, tmp_path / "b")
    for x, y in zip(pa, pb):
        assert open(x, "rb").read() == open(y, "rb").read()
    assert len(a.cells) == 2 and all(len(c.runs) == 4 for c in a.cells)
    assert a.cell(0.5, 0.0).regime is Regime.LINEAR and a.cell(1.5, 0.0).regime is Regime.CONDENSED


def test_scan_cache_resume(tmp_path):
    cache = tmp_path / "cache"
    first = tiny_scan(cache_dir=cache)
    files = sorted(os.listdir(cache))
    assert len(files) == 8 and all(f.endswith(".json") for f in files)
    assert tiny_scan(cache_dir=cache) == first
    # a resumed scan reads cached records instead of recomputing them
    path = cache / files[0]
    data = json.loads(path.read_text())
    data["steps"] = -1
    path.write_text(json.dumps(data))
    again = tiny_scan(cache_dir=cache)
    assert any(r.steps == -1 for c in again.cells for r in c.runs)


def test_run_key_depends_on_inputs():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = ScanGrid((1.0,), (0.0,), (10, 100))
    k = scan.run_key(g, DS, PLAN, None, 0, 0, 10, 0)
    assert k == scan.run_key(g, DS, PLAN, None, 0, 0, 10, 0)
    assert k != scan.run_key(g, DS, RunPlan(max_steps=10), None, 0, 0, 10, 0)
    assert k != scan.run_key(g, DS, PLAN, None, 0, 0, 10, 1)


def test_run_cell_rejects_mismatched_spec():
    from relu_phase.scaling import preset
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = ScanGrid((1.0,), (0.0,), (10, 100))
    with pytest.raises(ValueError):
        scan.run_cell(PhaseCoordinates(1.0, 0.0), g, DS, PLAN, spec=preset("ntk", 1))


def test_asi_needs_even_width():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = ScanGrid((0.5,), (0.0,), (11, 100))
    with pytest.raises(ValueError):
        scan.run_cell(PhaseCoordinates(0.5, 0.0), g, DS, PLAN)


def test_write_phase_map_layout(tmp_path):
    pm = tiny_scan()
    paths = scan.write_phase_map(pm, tmp_path)
    names = [os.path.basename(p) for p in paths]
    assert names == ["runs.csv", "cells.csv", "slopes.csv", "zeros.csv"]
    runs = list(csv.reader(open(paths[0])))
    assert runs[0][:5] == ["gamma", "gamma_prime", "width", "replicate", "seed"]
    assert len(runs) == 1 + 8
    zeros = list(csv.reader(open(paths[3])))
    assert zeros[0] == ["block", "gamma_prime", "gamma_zero"] and len(zeros) >= 4
