"""Gradient-flow integration and deviation-from-initialization metrics."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .datasets import Dataset
from .kernels import decay_rate, gram_finite, min_eigenvalue
from .network import InitConfig, NetworkParams, gradient_from_residuals, init_params, residuals
from .scaling import ScalingSpec

STEP_DOUBLE_AFTER = 10
STEP_CAP_DOUBLINGS = 10
STEP_FLOOR_HALVINGS = 40
# attempts in a row whose loss change is at rounding level before a run counts as stalled
STALL_ATTEMPTS = 200
STALL_RTOL = 1e-13
# default stall horizon, in steps of the default cap
STALL_WINDOW = 2000


class Block(str, Enum):
    W = "W"
    A = "A"
    THETA = "Theta"


class StopReason(str, Enum):
    RISK_TOLERANCE = "RiskTolerance"
    MAX_TIME = "MaxTime"
    MAX_STEPS = "MaxSteps"
    DIVERGED = "Diverged"
    STALLED = "Stalled"


@dataclass(frozen=True)
class FlowConfig:
    """Euler settings; all times are in normalized units.

    adaptive=False turns off the monotone-acceptance rule and takes
    `initial_step`-sized steps unconditionally. max_step defaults to
    initial_step * 2**10. A run stops as Stalled once the loss has dropped by
    less than the fraction `stall_progress` over the last `stall_time` units
    of time (default: 2000 steps at the default cap; inf disables this), or
    when the loss change of many consecutive attempts is at rounding level.
    """

    initial_step: float
    max_time: float
    risk_tolerance: float = 0.0
    record_stride: int = 1
    max_steps: int = 1_000_000
    adaptive: bool = True
    max_step: float | None = None
    snapshot_stride: int = 0
    stall_time: float | None = None
    stall_progress: float = 1e-3

    def __post_init__(self):
        if not (self.initial_step > 0 and self.initial_step < self.max_time):
            raise ValueError("need 0 < initial_step < max_time")
        if self.risk_tolerance < 0:
            raise ValueError("risk_tolerance must be >= 0")
        if self.record_stride < 1 or self.max_steps < 1:
            raise ValueError("record_stride and max_steps must be positive")
        if (self.stall_time is not None and not self.stall_time > 0) or not 0 <= self.stall_progress < 1:
            raise ValueError("need stall_time > 0 and 0 <= stall_progress < 1")
        if self.max_step is not None and self.max_step < self.initial_step:
            raise ValueError("max_step must be >= initial_step")

    @property
    def step_cap(self) -> float:
        return self.max_step if self.max_step is not None else self.initial_step * 2.0**STEP_CAP_DOUBLINGS

    @property
    def stall_horizon(self) -> float:
        if self.stall_time is not None:
            return self.stall_time
        return STALL_WINDOW * self.initial_step * 2.0**STEP_CAP_DOUBLINGS


@dataclass
class Snapshot:
    t: float
    a: np.ndarray
    W: np.ndarray


@dataclass
class Trajectory:
    times: np.ndarray
    losses: np.ndarray
    rd_w: np.ndarray
    rd_theta: np.ndarray
    rd_a: np.ndarray
    alpha_max: np.ndarray
    omega_max: np.ndarray
    snapshots: list[Snapshot] = field(default_factory=list)

    COLUMNS = ("t", "loss", "rd_w", "rd_theta", "rd_a", "alpha_max", "omega_max")

    def to_csv(self, path) -> None:
        cols = [self.times, self.losses, self.rd_w, self.rd_theta, self.rd_a, self.alpha_max, self.omega_max]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.COLUMNS)
            for row in zip(*cols):
                w.writerow([format(float(v), ".17g") for v in row])


@dataclass
class RunResult:
    initial_params: NetworkParams
    final_params: NetworkParams
    trajectory: Trajectory
    sup_rd_w: float
    sup_rd_theta: float
    sup_rd_a: float
    stop_reason: StopReason
    kappa: float
    kappa_prime: float
    steps: int = 0
    rejected: int = 0

    @property
    def final_time(self) -> float:
        return float(self.trajectory.times[-1])

    @property
    def final_loss(self) -> float:
        return float(self.trajectory.losses[-1])

    def final_rd(self, block: Block | str) -> float:
        return relative_deviation(self.final_params, self.initial_params, block)


def _block(params: NetworkParams, block: Block) -> np.ndarray:
    if block is Block.W:
        return params.W.ravel()
    if block is Block.A:
        return params.a
    return params.theta()


def relative_deviation(current: NetworkParams, initial: NetworkParams, block: Block | str) -> float:
    """||block(current) - block(initial)|| / ||block(initial)||."""
    block = Block(block)
    if current.a.shape != initial.a.shape or current.W.shape != initial.W.shape:
        raise ValueError("parameter shapes differ")
    b0 = _block(initial, block)
    norm0 = float(np.linalg.norm(b0))
    if norm0 == 0.0:
        raise ValueError(f"initial {block.value} block has zero norm")
    return float(np.linalg.norm(_block(current, block) - b0)) / norm0


def _sup(values: np.ndarray) -> float:
    """Largest non-NaN entry, or NaN when there is none."""
    finite = values[~np.isnan(values)]
    return float(np.max(finite)) if finite.size else float("nan")


def balancedness_residual(current: NetworkParams, initial: NetworkParams, kappa_prime: float) -> float:
    """max_k | kappa'^2 (a_k^2 - a_k0^2) - (|w_k|^2 - |w_k0|^2) |, zero along the exact flow."""
    da2 = current.a**2 - initial.a**2
    dw2 = np.einsum("kd,kd->k", current.W, current.W) - np.einsum("kd,kd->k", initial.W, initial.W)
    return float(np.max(np.abs(kappa_prime**2 * da2 - dw2)))


def balancedness_scale(params: NetworkParams) -> float:
    """Normalizer max_k(|w_k|^2 + 1) for reporting the residual."""
    return float(np.max(np.einsum("kd,kd->k", params.W, params.W))) + 1.0


def slide_along_kinks(dW, a, e, pre, X, k_eff, kp_eff, h):
    """Project dW so no neuron is pushed across a kink it should slide on.

    A pair (k, i) slides when a step of size h would carry w_k . x_i across
    zero while the one-sided flow on the far side points back; the two
    one-sided velocities differ only along x_i, so removing the x_i
    component from dW_k gives the sliding velocity. dW is modified in place;
    returns the (n, m) mask of sliding pairs, or None when nothing slides.
    """
    pdot = X @ dW.T  # (n, m) rate of change of pre-activations
    pos = pre > 0.0
    crossing = pos ^ (pre + h * pdot > 0.0)
    if not crossing.any():
        return None
    i, k = np.nonzero(crossing)
    n = X.shape[0]
    jump = (k_eff * kp_eff / n) * e[i] * a[k] * np.einsum("id,id->i", X[i], X[i])
    p = pos[i, k]
    far = np.where(p, pdot[i, k] + jump, pdot[i, k] - jump)
    keep = np.where(p, far > 0.0, far < 0.0)
    if not keep.any():
        return None
    sliding = np.zeros_like(crossing)
    sliding[i[keep], k[keep]] = True
    count = sliding.sum(axis=0)
    single = np.flatnonzero(count == 1)
    if single.size:
        x = X[np.argmax(sliding[:, single], axis=0)]  # (s, d)
        coef = np.einsum("sd,sd->s", x, dW[single]) / np.einsum("sd,sd->s", x, x)
        dW[single] -= coef[:, None] * x
    for k in np.flatnonzero(count > 1):
        rows = X[sliding[:, k]]
        c, *_ = np.linalg.lstsq(rows.T, dW[k], rcond=None)
        dW[k] -= rows.T @ c
    return sliding


def snap_to_kinks(W, X, sliding) -> None:
    """Put every sliding neuron exactly on its kink planes w_k . x_i = 0.

    Without this a neuron would slide at the small offset it had when the
    crossing was detected, and the balancedness identity would drift.
    """
    count = sliding.sum(axis=0)
    single = np.flatnonzero(count == 1)
    if single.size:
        x = X[np.argmax(sliding[:, single], axis=0)]
        coef = np.einsum("sd,sd->s", x, W[single]) / np.einsum("sd,sd->s", x, x)
        W[single] -= coef[:, None] * x
    for k in np.flatnonzero(count > 1):
        rows = X[sliding[:, k]]
        # minimal change making rows @ W[k] = 0
        c = np.linalg.lstsq(rows @ rows.T, rows @ W[k], rcond=None)[0]
        W[k] -= rows.T @ c


class _Recorder:
    def __init__(self, a0, W0, stride, snapshot_stride):
        self.a0, self.W0 = a0, W0
        self.na0 = float(np.linalg.norm(a0))
        self.nw0 = float(np.linalg.norm(W0))
        self.nt0 = math.hypot(self.na0, self.nw0)
        self.stride = stride
        self.snapshot_stride = snapshot_stride
        self.rows: list[tuple] = []
        self.snapshots: list[Snapshot] = []
        self.alpha_max = float(np.max(np.abs(a0))) if a0.size else 0.0
        self.omega_max = float(np.max(np.abs(W0))) if W0.size else 0.0

    def update_maxima(self, a, W):
        self.alpha_max = max(self.alpha_max, float(np.max(np.abs(a))))
        self.omega_max = max(self.omega_max, float(np.max(np.abs(W))))

    def record(self, t, loss, a, W):
        with np.errstate(invalid="ignore", over="ignore"):  # a non-finite start still gets one record
            da = float(np.linalg.norm(a - self.a0))
            dw = float(np.linalg.norm(W - self.W0))
        rd_a = da / self.na0 if self.na0 > 0 else float("nan")
        rd_w = dw / self.nw0 if self.nw0 > 0 else float("nan")
        rd_t = math.hypot(da, dw) / self.nt0 if self.nt0 > 0 else float("nan")
        self.rows.append((t, loss, rd_w, rd_t, rd_a, self.alpha_max, self.omega_max))

    def snapshot(self, t, a, W):
        self.snapshots.append(Snapshot(t, a.copy(), W.copy()))

    def trajectory(self) -> Trajectory:
        cols = np.array(self.rows, dtype=np.float64).reshape(-1, 7).T
        return Trajectory(*cols, snapshots=self.snapshots)


def _euler(a, W, k_eff, kp_eff, dataset, config, time_scale=1.0, a_scale=1.0, w_scale=1.0):
    """Shared Euler loop.

    (a, W) evolve under the flow with output scale k_eff and mobility kp_eff;
    each normalized step h is applied as h * time_scale, and monitored
    quantities are reported on (a / a_scale, W / w_scale).
    """
    X, y, n = dataset.X, dataset.y, dataset.n

    def evaluate(a_, W_):
        pre = X @ W_.T
        e = k_eff * (np.maximum(pre, 0.0) @ a_) - y
        return pre, e, float(e @ e) / (2 * n)

    def norm_view(a_, W_):
        if a_scale == 1.0 and w_scale == 1.0:
            return a_, W_
        return a_ / a_scale, W_ / w_scale

    a0n, W0n = norm_view(a.copy(), W.copy())
    rec = _Recorder(a0n.copy(), W0n.copy(), config.record_stride, config.snapshot_stride)
    pre, e, loss = evaluate(a, W)
    t = 0.0
    rec.record(t, loss, a0n, W0n)
    if config.snapshot_stride:
        rec.snapshot(t, a0n, W0n)

    h = config.initial_step
    h_cap = config.step_cap
    h_floor = config.initial_step * 2.0**-STEP_FLOOR_HALVINGS
    steps = rejected = streak = slid = flat = 0
    since_record = 0
    horizon = config.stall_horizon
    history = deque([(0.0, loss)]) if math.isfinite(horizon) else None
    g = None
    reason = None
    if not math.isfinite(loss):
        reason = StopReason.DIVERGED

    while reason is None:
        if loss <= config.risk_tolerance:
            reason = StopReason.RISK_TOLERANCE
            break
        if t >= config.max_time:
            reason = StopReason.MAX_TIME
            break
        if steps >= config.max_steps:
            reason = StopReason.MAX_STEPS
            break
        if g is None:
            g = gradient_from_residuals(a, k_eff, kp_eff, X, pre, e)
            if not (np.all(np.isfinite(g.da)) and np.all(np.isfinite(g.dW))):
                reason = StopReason.DIVERGED
                break
        hs = h * time_scale
        dW = g.dW.copy()
        sliding = slide_along_kinks(dW, a, e, pre, X, k_eff, kp_eff, hs)
        a_try = a + hs * g.da
        W_try = W + hs * dW
        if sliding is not None:
            slid += 1
            snap_to_kinks(W_try, X, sliding)
        with np.errstate(over="ignore", invalid="ignore"):
            pre_try, e_try, loss_try = evaluate(a_try, W_try)
        if abs(loss_try - loss) <= STALL_RTOL * loss:
            flat += 1
            if flat >= STALL_ATTEMPTS:
                reason = StopReason.STALLED
                break
        else:
            flat = 0
        if config.adaptive:
            if not (loss_try <= loss):  # also rejects NaN
                rejected += 1
                streak = 0
                h *= 0.5
                if h < h_floor:
                    reason = StopReason.DIVERGED
                continue
        elif not math.isfinite(loss_try):
            reason = StopReason.DIVERGED
            break
        a, W, pre, e, loss = a_try, W_try, pre_try, e_try, loss_try
        g = None
        t += h
        steps += 1
        an, Wn = norm_view(a, W)
        rec.update_maxima(an, Wn)
        since_record += 1
        at_end = loss <= config.risk_tolerance or t >= config.max_time or steps >= config.max_steps
        if since_record >= config.record_stride or at_end:
            rec.record(t, loss, an, Wn)
            since_record = 0
        if config.snapshot_stride and (steps % config.snapshot_stride == 0 or at_end):
            rec.snapshot(t, an, Wn)
        if history is not None:
            # reference: the latest record at least `horizon` before t
            while len(history) > 1 and history[1][0] <= t - horizon:
                history.popleft()
            if history[0][0] <= t - horizon and loss > (1.0 - config.stall_progress) * history[0][1]:
                reason = StopReason.STALLED
            history.append((t, loss))
        if config.adaptive:
            streak += 1
            if streak >= STEP_DOUBLE_AFTER:
                h = min(2.0 * h, h_cap)
                streak = 0

    if since_record:
        an, Wn = norm_view(a, W)
        rec.record(t, loss, an, Wn)
    if config.snapshot_stride and rec.snapshots[-1].t != t:
        an, Wn = norm_view(a, W)
        rec.snapshot(t, an, Wn)
    an, Wn = norm_view(a, W)
    return a0n, W0n, an.copy(), Wn.copy(), rec.trajectory(), reason, steps, rejected


def _result(params0, a0n, W0n, a, W, traj, reason, steps, rejected, kappa, kappa_prime) -> RunResult:
    init = NetworkParams(a0n, W0n, params0.seed)
    final = NetworkParams(a, W, params0.seed)
    return RunResult(
        initial_params=init,
        final_params=final,
        trajectory=traj,
        sup_rd_w=_sup(traj.rd_w),
        sup_rd_theta=_sup(traj.rd_theta),
        sup_rd_a=_sup(traj.rd_a),
        stop_reason=reason,
        kappa=kappa,
        kappa_prime=kappa_prime,
        steps=steps,
        rejected=rejected,
    )


def integrate(params0: NetworkParams, kappa: float, kappa_prime: float, dataset: Dataset, config: FlowConfig) -> RunResult:
    """Explicit Euler for d(a, W)/dt = -M_{kappa'} grad R on the normalized model."""
    if not (kappa > 0 and kappa_prime > 0):
        raise ValueError("kappa and kappa_prime must be positive")
    if params0.d != dataset.d:
        raise ValueError(f"network dimension {params0.d} != dataset dimension {dataset.d}")
    out = _euler(params0.a.copy(), params0.W.copy(), kappa, kappa_prime, dataset, config)
    return _result(params0, *out, kappa, kappa_prime)


def simulate_original(spec: ScalingSpec, m: int, dataset: Dataset, config: FlowConfig, seed: int,
                      use_asi: bool = False) -> RunResult:
    """Plain gradient flow on the unnormalized model, reported in normalized variables.

    Raw parameters are the normalized seed-`seed` draw scaled by (beta1, beta2);
    a normalized step h is taken as the original-time step beta1*beta2*h.
    """
    base = m // 2 if use_asi else m
    p0 = init_params(InitConfig(base, dataset.d, seed, use_asi))
    b1, b2 = spec.beta1(p0.m), spec.beta2(p0.m)
    a_raw, W_raw = p0.a * b1, p0.W * b2
    k_orig = 1.0 / spec.alpha(p0.m)
    out = _euler(a_raw, W_raw, k_orig, 1.0, dataset, config, time_scale=b1 * b2, a_scale=b1, w_scale=b2)
    kappa = b1 * b2 * k_orig
    return _result(p0, *out, kappa, b1 / b2)


def rate_scale(params: NetworkParams, kappa: float, kappa_prime: float, dataset: Dataset) -> float:
    """Fastest relevant rate at the starting point.

    The larger of the linearized decay rate (m kappa^2/n)(lam_a/kappa' + kappa' lam_w),
    from the finite Gram eigenvalues, and the a-w coupling curvature
    kappa * max|e_i| * max|x_i| that drives escape from small outputs.
    """
    fg = gram_finite(params, kappa, kappa_prime, dataset)
    scale = kappa**2 / kappa_prime
    lam_a = max(min_eigenvalue(fg.G_a) / scale, 0.0) if scale > 0 else 0.0
    scale_w = kappa**2 * kappa_prime
    lam_w = max(min_eigenvalue(fg.G_w) / scale_w, 0.0) if scale_w > 0 else 0.0
    linear = decay_rate(params.m, kappa, kappa_prime, dataset.n, lam_a, lam_w) if (lam_a or lam_w) else 0.0
    e = np.abs(residuals(params, kappa, dataset))
    coupling = kappa * float(np.max(e)) * float(np.max(np.linalg.norm(dataset.X, axis=1)))
    return max(linear, coupling)


def default_initial_step(params: NetworkParams, kappa: float, kappa_prime: float, dataset: Dataset,
                         resolution: float = 0.1) -> float:
    r = rate_scale(params, kappa, kappa_prime, dataset)
    if not r > 0:
        return 1.0
    return resolution / r


def default_risk_tolerance(initial_loss: float, n: int, theory_mode: bool = False) -> float:
    if theory_mode:
        return max(initial_loss * 1e-6, 1.0 / (32 * n))
    return initial_loss * 1e-6
