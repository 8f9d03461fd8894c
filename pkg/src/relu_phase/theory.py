"""Finite-width checks of the provable statements about the normalized model.

Each check returns a BoundReport comparing an empirical quantity with its
theoretical value. High-probability statements are meant to be evaluated as
pass rates over seeds, not per seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .dynamics import FlowConfig, RunResult, balancedness_residual, default_initial_step, integrate
from .kernels import decay_rate, gram_limit_closed, linear_rate
from .network import InitConfig, NetworkParams, empirical_risk, init_params
from .scaling import PhaseCoordinates, Regime, classify_regime, realize

DECAY_TOLERANCE = 0.05
RD_CONSTANT = 10.0
NEURON_SLACK = 1e-3


@dataclass
class BoundReport:
    bound_name: str
    theoretical_value: float
    empirical_value: float
    satisfied: bool
    context: dict = field(default_factory=dict)
    hard: bool = False  # exact consequences of the flow, as opposed to high-probability statements


def _context(params: NetworkParams | None = None, **extra) -> dict:
    ctx = {}
    if params is not None:
        ctx.update(m=params.m, d=params.d, seed=params.seed)
    ctx.update(extra)
    return ctx


def initial_param_bound(m: int, d: int, delta: float) -> float:
    """sqrt(2 log(2 m (d+1) / delta)): whp bound on every |a_k|, |w_kj| at init."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * math.log(2.0 * m * (d + 1) / delta))


def check_initial_param_bound(params0: NetworkParams, delta: float) -> BoundReport:
    bound = initial_param_bound(params0.m, params0.d, delta)
    emp = max(float(np.max(np.abs(params0.a), initial=0.0)), float(np.max(np.abs(params0.W), initial=0.0)))
    return BoundReport("initial_param_bound", bound, emp, emp <= bound, _context(params0, delta=delta))


def norm_sandwiches(m: int, d: int) -> dict:
    """(low, high) endpoints for ||theta||, ||theta_w||, ||theta_a|| at init."""
    return {
        "theta": (math.sqrt(m * (d + 1) / 2), math.sqrt(3 * m * (d + 1) / 2)),
        "theta_w": (math.sqrt(m * d / 2), math.sqrt(3 * m * d / 2)),
        "theta_a": (math.sqrt(m / 2), math.sqrt(3 * m / 2)),
    }


def check_initial_norms(params0: NetworkParams) -> BoundReport:
    """All three norm sandwiches; the reported values are those of theta itself."""
    bounds = norm_sandwiches(params0.m, params0.d)
    norms = {
        "theta": float(np.linalg.norm(params0.theta())),
        "theta_w": float(np.linalg.norm(params0.W)),
        "theta_a": float(np.linalg.norm(params0.a)),
    }
    ok = all(lo <= norms[k] <= hi for k, (lo, hi) in bounds.items())
    ctx = _context(params0, norms=norms, bounds=bounds)
    return BoundReport("initial_norms", bounds["theta"][1], norms["theta"], ok, ctx)


def check_decay_bound(run: RunResult, rate: float, tol: float = DECAY_TOLERANCE) -> BoundReport:
    """loss(t) <= (1 + tol) exp(-rate t) loss(0) at every recorded t.

    The empirical value is the worst ratio loss(t) / (exp(-rate t) loss(0)).
    """
    t = run.trajectory.times
    loss = run.trajectory.losses
    ctx = dict(m=run.final_params.m, kappa=run.kappa, kappa_prime=run.kappa_prime, rate=rate, tol=tol,
               seed=run.initial_params.seed)
    if loss[0] == 0.0:
        return BoundReport("decay_bound", 1.0 + tol, 0.0, True, ctx)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(loss) + rate * t - math.log(loss[0])
    top = float(np.max(log_ratio))
    worst = math.exp(top) if top < 709.0 else math.inf
    return BoundReport("decay_bound", 1.0 + tol, worst, bool(np.all(log_ratio <= math.log1p(tol))), ctx)


def rd_bound(m: int, kappa: float, kappa_prime: float, coords: PhaseCoordinates) -> float | None:
    """Predicted scale of sup RD(theta_w) in the linear regime, or None outside it.

    log m / (m kappa) when gamma < 1; kappa' log m / (m kappa) when
    gamma' > gamma - 1; the smaller one when both apply.
    """
    cands = []
    if coords.gamma < 1:
        cands.append(math.log(m) / (m * kappa))
    if coords.gamma_prime > coords.gamma - 1:
        cands.append(kappa_prime * math.log(m) / (m * kappa))
    return min(cands) if cands else None


def check_rd_bounds(run: RunResult, m: int, kappa: float, kappa_prime: float, coords: PhaseCoordinates,
                    constant: float = RD_CONSTANT, wider: tuple | None = None) -> BoundReport:
    """sup RD(theta_w) against its linear-regime scale.

    `wider` = (run, m, kappa, kappa') at a larger width. In the linear regime
    the ratio sup_rd_w / bound must stay below `constant` and shrink at the
    larger width; outside it sup_rd_w must grow with width instead.
    """
    ctx = dict(m=m, kappa=kappa, kappa_prime=kappa_prime, gamma=coords.gamma, gamma_prime=coords.gamma_prime,
               seed=run.initial_params.seed, sup_rd_w=run.sup_rd_w)
    bound = rd_bound(m, kappa, kappa_prime, coords)
    if bound is None:
        ok = wider is not None and wider[0].sup_rd_w > run.sup_rd_w
        if wider is not None:
            ctx["wider_sup_rd_w"] = wider[0].sup_rd_w
            ctx["wider_m"] = wider[1]
        return BoundReport("rd_growth", float("nan"), run.sup_rd_w, ok, ctx)
    ratio = run.sup_rd_w / bound
    ok = ratio <= constant
    if wider is not None:
        wrun, wm, wk, wkp = wider
        wratio = wrun.sup_rd_w / rd_bound(wm, wk, wkp, coords)
        ctx["wider_ratio"] = wratio
        ctx["wider_m"] = wm
        ok = ok and wratio < ratio
    return BoundReport("rd_bound", constant, ratio, ok, ctx)


def neuron_excess(a, W, a0, kappa_prime) -> float:
    """max_k |a_k| - |w_k| / kappa' - |a_k0|; nonpositive when the bound holds."""
    return float(np.max(np.abs(a) - np.linalg.norm(W, axis=1) / kappa_prime - np.abs(a0)))


def check_neuron_bound(run: RunResult, kappa_prime: float, slack: float = NEURON_SLACK) -> BoundReport:
    """|a_k| <= |w_k| / kappa' + |a_k0| + slack at every snapshot.

    Falls back to the initial and final states when the run kept no snapshots.
    """
    a0 = run.initial_params.a
    states = [(s.a, s.W) for s in run.trajectory.snapshots]
    if not states:
        states = [(a0, run.initial_params.W), (run.final_params.a, run.final_params.W)]
    worst = max(neuron_excess(a, W, a0, kappa_prime) for a, W in states)
    resid = balancedness_residual(run.final_params, run.initial_params, kappa_prime)
    ctx = dict(m=run.final_params.m, kappa_prime=kappa_prime, snapshots=len(states),
               balancedness_residual=resid, seed=run.initial_params.seed)
    return BoundReport("neuron_bound", slack, worst, worst <= slack, ctx, hard=True)


def asi_initial_risk(dataset: Dataset) -> BoundReport:
    """With ASI the initial output vanishes, so R(0) = (1/2n) sum y_i^2 <= 1/2 for targets in [0, 1]."""
    r0 = float(dataset.y @ dataset.y) / (2 * dataset.n)
    return BoundReport("asi_initial_risk", 0.5, r0, r0 <= 0.5, dict(n=dataset.n, d=dataset.d))


def width_precondition() -> str:
    """Width requirement of the linear-regime statement; C0 and C_psi,d are unknown absolute constants."""
    return "m >= 16 n^2 d^2 C_psi,d^2 / (C0 lambda^2) * log(4 n^2 / delta)"


def pass_rate(reports) -> float:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    return sum(r.satisfied for r in reports) / len(reports)


def verify(coords: PhaseCoordinates, m: int, dataset: Dataset, seed: int, delta: float = 0.05,
           max_steps: int = 200_000, relative_tolerance: float = 1e-6) -> list[BoundReport]:
    """All five checks for one cell: init bound, init norms, decay, RD and neuron bound.

    The RD check compares widths m and 2m. ASI is used when gamma <= 1/2
    (m must then be even); the init checks look at the unmirrored draw.
    """
    use_asi = coords.gamma <= 0.5
    if use_asi and m % 2:
        raise ValueError("ASI needs an even width")
    lam = gram_limit_closed(dataset).lam

    def run_at(width, snapshots):
        kappa, kappa_prime = realize(coords, width)
        base = width // 2 if use_asi else width
        raw = init_params(InitConfig(base, dataset.d, seed))
        p0 = init_params(InitConfig(base, dataset.d, seed, use_asi))
        h0 = default_initial_step(p0, kappa, kappa_prime, dataset)
        r0 = empirical_risk(p0, kappa, dataset)
        cfg = FlowConfig(h0, math.inf, r0 * relative_tolerance, max_steps=max_steps,
                         snapshot_stride=100 if snapshots else 0)
        return raw, integrate(p0, kappa, kappa_prime, dataset, cfg), kappa, kappa_prime

    raw, run, kappa, kappa_prime = run_at(m, True)
    _, wide, wk, wkp = run_at(2 * m, False)
    rate = linear_rate(m, kappa, dataset.n, lam)
    reports = [
        check_initial_param_bound(raw, delta),
        check_initial_norms(raw),
        check_decay_bound(run, rate),
        check_rd_bounds(run, m, kappa, kappa_prime, coords, wider=(wide, 2 * m, wk, wkp)),
        check_neuron_bound(run, kappa_prime),
    ]
    for r in reports:
        r.context.setdefault("kappa", kappa)
        r.context.setdefault("kappa_prime", kappa_prime)
        r.context.setdefault("n", dataset.n)
        r.context["regime"] = classify_regime(coords).value
    return reports


def reports_to_csv(path, reports) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bound", "theoretical", "empirical", "satisfied", "hard", "m", "kappa", "kappa_prime", "seed"])
        for r in reports:
            c = r.context
            w.writerow([r.bound_name, format(r.theoretical_value, ".17g"), format(r.empirical_value, ".17g"),
                        int(r.satisfied), int(r.hard), c.get("m", ""), format(c.get("kappa", float("nan")), ".17g"),
                        format(c.get("kappa_prime", float("nan")), ".17g"), c.get("seed", "")])


def format_reports(reports) -> str:
    lines = [f"{'bound':<20} {'theory':>12} {'empirical':>12}  result"]
    for r in reports:
        lines.append(f"{r.bound_name:<20} {r.theoretical_value:>12.5g} {r.empirical_value:>12.5g}  "
                     f"{'ok' if r.satisfied else 'FAIL'}{' (hard)' if r.hard else ''}")
    return "\n".join(lines)
