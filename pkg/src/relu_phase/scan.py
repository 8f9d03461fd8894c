"""Width sweeps over a (gamma, gamma') grid and log-log slope fits.

Every run is keyed by (cell indices, width, replicate) and seeded by
mix_seed(base_seed, i_gamma, i_gamma', width, replicate), so results do not
depend on scheduling and adding replicates leaves existing runs untouched.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, rng
from .datasets import Dataset
from .dynamics import FlowConfig, StopReason, default_initial_step, integrate, simulate_original
from .network import InitConfig, empirical_risk, init_params
from .scaling import (PhaseCoordinates, Regime, ScalingSpec, boundary_distance, classify_regime,
                      phase_coordinates, realize)

DEFAULT_WIDTHS = (1000, 2000, 4000, 8000)
FULL_SCALE_WIDTHS = (1000, 5000, 10000, 20000, 40000)
NEAR_CRITICAL = 0.15
BLOCKS = ("w", "theta", "a")


@dataclass(frozen=True)
class ScanGrid:
    gamma_values: tuple
    gamma_prime_values: tuple
    widths: tuple = DEFAULT_WIDTHS
    replicates: int = 3
    base_seed: int = 0

    def __post_init__(self):
        g = tuple(float(v) for v in self.gamma_values)
        gp = tuple(float(v) for v in self.gamma_prime_values)
        w = tuple(int(v) for v in self.widths)
        object.__setattr__(self, "gamma_values", g)
        object.__setattr__(self, "gamma_prime_values", gp)
        object.__setattr__(self, "widths", w)
        for name, vals in (("gamma_values", g), ("gamma_prime_values", gp), ("widths", w)):
            if not vals:
                raise ValueError(f"{name} is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if len(w) < 2 or w[0] < 2:
            raise ValueError("need at least two widths, all >= 2")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if w[-1] < 10 * w[0]:
            warnings.warn(f"widths {w[0]}..{w[-1]} span less than a decade; slopes will be noisy", stacklevel=2)

    def cells(self):
        """(i_gamma, i_gamma', coords) in row-major order (gamma' rows, gamma columns)."""
        for j, gp in enumerate(self.gamma_prime_values):
            for i, g in enumerate(self.gamma_values):
                yield i, j, PhaseCoordinates(g, gp)

    def run_seed(self, i: int, j: int, width: int, replicate: int) -> int:
        return rng.mix_seed(self.base_seed, i, j, width, replicate)


@dataclass(frozen=True)
class RunPlan:
    """Per-run flow settings; the step and risk threshold depend on the draw.

    initial_step=None picks dynamics.default_initial_step for each run and the
    run stops once the risk falls to relative_tolerance * R(0).
    """

    initial_step: float | None = None
    max_time: float = math.inf
    relative_tolerance: float = 1e-6
    max_steps: int = 200_000
    record_stride: int = 1
    stall_time: float | None = None
    stall_progress: float = 1e-3

    def flow_for(self, params0, kappa, kappa_prime, dataset: Dataset) -> FlowConfig:
        h0 = self.initial_step or default_initial_step(params0, kappa, kappa_prime, dataset)
        r0 = empirical_risk(params0, kappa, dataset)
        return FlowConfig(h0, self.max_time, r0 * self.relative_tolerance, self.record_stride, self.max_steps,
                          stall_time=self.stall_time, stall_progress=self.stall_progress)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual_rms: float
    point_count: int


def fit_slope(widths, values) -> SlopeFit:
    """Least-squares line through (log width, log value)."""
    x = np.log(np.asarray(widths, dtype=np.float64))
    v = np.asarray(values, dtype=np.float64)
    if x.shape != v.shape or x.ndim != 1:
        raise ValueError("widths and values must be 1-d of equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.any(~(v > 0)):
        raise ValueError("values must be positive")
    y = np.log(v)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("widths must not all be equal")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    return SlopeFit(slope, intercept, float(math.sqrt(resid @ resid / x.size)), int(x.size))


@dataclass
class RunRecord:
    width: int
    replicate: int
    seed: int
    sup_rd_w: float
    sup_rd_theta: float
    sup_rd_a: float
    stop_reason: str
    steps: int
    final_loss: float

    @property
    def diverged(self) -> bool:
        return self.stop_reason == StopReason.DIVERGED.value


@dataclass
class CellResult:
    coords: PhaseCoordinates
    index: tuple
    regime: Regime
    near_critical: bool
    runs: list = field(default_factory=list)
    widths: list = field(default_factory=list)
    means: dict = field(default_factory=dict)  # block -> per-width geometric means
    fits: dict = field(default_factory=dict)  # block -> SlopeFit or None
    partial: bool = False

    def slope(self, block: str = "w") -> float:
        fit = self.fits.get(block)
        return fit.slope if fit is not None else float("nan")


@dataclass
class PhaseMap:
    grid: ScanGrid
    cells: list

    def cell(self, gamma: float, gamma_prime: float) -> CellResult:
        for c in self.cells:
            if c.coords.gamma == gamma and c.coords.gamma_prime == gamma_prime:
                return c
        raise KeyError((gamma, gamma_prime))

    def row(self, j: int) -> list:
        return sorted((c for c in self.cells if c.index[1] == j), key=lambda c: c.index[0])


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _plan_key(plan) -> dict:
    return {"plan": type(plan).__name__, **{k: repr(v) for k, v in asdict(plan).items()}}


def _spec_key(spec: ScalingSpec | None):
    return None if spec is None else repr(spec)


def run_key(grid: ScanGrid, dataset: Dataset, plan, spec, i, j, width, replicate) -> str:
    """Content address of one run: everything that determines its result."""
    payload = {
        "version": __version__,
        "grid": [grid.gamma_values, grid.gamma_prime_values, grid.widths, grid.base_seed],
        "dataset": dataset.fingerprint(),
        "flow": _plan_key(plan),
        "spec": _spec_key(spec),
        "cell": [i, j],
        "width": width,
        "replicate": replicate,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def _single_run(coords: PhaseCoordinates, width: int, seed: int, dataset: Dataset, plan, spec) -> RunRecord:
    use_asi = coords.gamma <= 0.5
    if use_asi and width % 2:
        raise ValueError(f"ASI needs an even width, got {width}")
    base = width // 2 if use_asi else width
    if spec is None:
        kappa, kappa_prime = realize(coords, width)
        p0 = init_params(InitConfig(base, dataset.d, seed, use_asi))
        flow = plan if isinstance(plan, FlowConfig) else plan.flow_for(p0, kappa, kappa_prime, dataset)
        res = integrate(p0, kappa, kappa_prime, dataset, flow)
    else:
        if isinstance(plan, FlowConfig):
            flow = plan
        else:
            p0 = init_params(InitConfig(base, dataset.d, seed, use_asi))
            kappa = spec.beta1(width) * spec.beta2(width) / spec.alpha(width)
            kappa_prime = spec.beta1(width) / spec.beta2(width)
            flow = plan.flow_for(p0, kappa, kappa_prime, dataset)
        res = simulate_original(spec, width, dataset, flow, seed, use_asi=use_asi)
    return RunRecord(width, 0, seed, res.sup_rd_w, res.sup_rd_theta, res.sup_rd_a,
                     res.stop_reason.value, res.steps, res.final_loss)


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(1)


def _work(task):
    key, coords, width, replicate, seed, dataset, plan, spec, cache_dir = task
    if cache_dir is not None:
        path = os.path.join(cache_dir, key + ".json")
        if os.path.exists(path):
            with open(path) as f:
                return key, RunRecord(**json.load(f))
    rec = _single_run(coords, width, seed, dataset, plan, spec)
    rec.replicate = replicate
    if cache_dir is not None:
        atomic_write_text(path, json.dumps(asdict(rec), sort_keys=True))
    return key, rec


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _tasks(grid, dataset, plan, spec, cells, cache_dir):
    for i, j, coords in cells:
        if spec is not None:
            got = phase_coordinates(spec)
            if abs(got.gamma - coords.gamma) > 1e-12 or abs(got.gamma_prime - coords.gamma_prime) > 1e-12:
                raise ValueError(f"spec has coordinates {got}, cell is {coords}")
        for width in grid.widths:
            for r in range(grid.replicates):
                key = run_key(grid, dataset, plan, spec, i, j, width, r)
                yield (key, coords, width, r, grid.run_seed(i, j, width, r), dataset, plan, spec, cache_dir)


def _execute(tasks, jobs: int) -> dict:
    if jobs <= 1 or len(tasks) <= 1:
        return dict(_work(t) for t in tasks)
    with ProcessPoolExecutor(max_workers=jobs, initializer=_limit_threads) as pool:
        return dict(pool.map(_work, tasks, chunksize=1))


def _assemble(grid: ScanGrid, i: int, j: int, coords: PhaseCoordinates, records: list) -> CellResult:
    cell = CellResult(coords, (i, j), classify_regime(coords), boundary_distance(coords) < NEAR_CRITICAL)
    cell.runs = sorted(records, key=lambda r: (r.width, r.replicate))
    cell.partial = sum(r.diverged for r in records) * 2 > len(records)
    cell.means = {b: [] for b in BLOCKS}
    for width in grid.widths:
        ok = [r for r in cell.runs if r.width == width and not r.diverged]
        vals = {b: [getattr(r, f"sup_rd_{b}") for r in ok] for b in BLOCKS}
        if not ok or any(not all(v > 0 and math.isfinite(v) for v in vals[b]) for b in BLOCKS):
            continue
        cell.widths.append(width)
        for b in BLOCKS:
            cell.means[b].append(float(np.exp(np.mean(np.log(vals[b])))))
    for b in BLOCKS:
        cell.fits[b] = fit_slope(cell.widths, cell.means[b]) if len(cell.widths) >= 2 else None
    return cell


def run_cell(coords: PhaseCoordinates, grid: ScanGrid, dataset: Dataset, flow=None, index=(0, 0),
             spec: ScalingSpec | None = None, jobs: int = 1, cache_dir=None) -> CellResult:
    """Sweep one cell over grid.widths x replicates and fit S_w, S_theta, S_a.

    `flow` is a RunPlan (default) or a fixed FlowConfig. With `spec`, runs go
    through the unnormalized model with those coefficients instead.
    """
    plan = RunPlan() if flow is None else flow
    i, j = index
    results = _execute(list(_tasks(grid, dataset, plan, spec, [(i, j, coords)], cache_dir)), jobs)
    return _assemble(grid, i, j, coords, list(results.values()))


def scan(grid: ScanGrid, dataset: Dataset, flow=None, jobs: int = 1, cache_dir=None) -> PhaseMap:
    plan = RunPlan() if flow is None else flow
    cells = list(grid.cells())
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
    tasks = list(_tasks(grid, dataset, plan, None, cells, cache_dir))
    results = _execute(tasks, jobs)
    out = []
    for i, j, coords in cells:
        recs = [results[t[0]] for t in tasks if t[1] == coords]
        out.append(_assemble(grid, i, j, coords, recs))
    return PhaseMap(grid, out)


def boundary_zeros(phase_map: PhaseMap, block: str = "w") -> list:
    """(gamma', gamma) pairs where the fitted slope changes sign along a gamma' row."""
    if len(phase_map.grid.gamma_values) < 2:
        raise ValueError("need at least two gamma values per row")
    zeros = []
    for j, gp in enumerate(phase_map.grid.gamma_prime_values):
        row = [(c.coords.gamma, c.slope(block)) for c in phase_map.row(j)]
        row = [(g, s) for g, s in row if math.isfinite(s)]
        for (g0, s0), (g1, s1) in zip(row, row[1:]):
            if s0 == 0.0:
                zeros.append((gp, g0))
            elif s0 * s1 < 0:
                zeros.append((gp, g0 + (g1 - g0) * s0 / (s0 - s1)))
        if row and row[-1][1] == 0.0:
            zeros.append((gp, row[-1][0]))
    return zeros


def write_phase_map(phase_map: PhaseMap, out_dir) -> list:
    """Write runs.csv, cells.csv (per cell-width), slopes.csv and zeros.csv; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("runs.csv", "cells.csv", "slopes.csv", "zeros.csv")}

    def emit(path, header, rows):
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)

    runs, cells, slopes = [], [], []
    for c in phase_map.cells:
        g, gp = _fmt(c.coords.gamma), _fmt(c.coords.gamma_prime)
        for r in c.runs:
            runs.append([g, gp, r.width, r.replicate, r.seed, _fmt(r.sup_rd_w), _fmt(r.sup_rd_theta),
                         _fmt(r.sup_rd_a), r.stop_reason, r.steps, _fmt(r.final_loss)])
        for k, width in enumerate(c.widths):
            cells.append([g, gp, width] + [_fmt(c.means[b][k]) for b in BLOCKS])
        row = [g, gp, c.regime.value, int(c.near_critical), int(c.partial)]
        for b in BLOCKS:
            fit = c.fits.get(b)
            row += ["", ""] if fit is None else [_fmt(fit.slope), _fmt(fit.residual_rms)]
        slopes.append(row)
    emit(paths["runs.csv"], ["gamma", "gamma_prime", "width", "replicate", "seed", "sup_rd_w", "sup_rd_theta",
                             "sup_rd_a", "stop_reason", "steps", "final_loss"], runs)
    emit(paths["cells.csv"], ["gamma", "gamma_prime", "width", "rd_w", "rd_theta", "rd_a"], cells)
    emit(paths["slopes.csv"], ["gamma", "gamma_prime", "regime", "near_critical", "partial", "S_w", "S_w_rms",
                               "S_theta", "S_theta_rms", "S_a", "S_a_rms"], slopes)
    zero_rows = []
    for b in BLOCKS:
        found = boundary_zeros(phase_map, b) if len(phase_map.grid.gamma_values) >= 2 else []
        for gp in phase_map.grid.gamma_prime_values:
            hits = [z for p, z in found if p == gp]
            zero_rows += [[b, _fmt(gp), _fmt(z)] for z in hits] or [[b, _fmt(gp), ""]]
    emit(paths["zeros.csv"], ["block", "gamma_prime", "gamma_zero"], zero_rows)
    return list(paths.values())
