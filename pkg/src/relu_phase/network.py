"""Two-layer ReLU network in normalized form.

    f(x) = kappa * sum_k a_k relu(w_k . x)

trained by the mobility-weighted gradient flow
    da/dt = -(1/kappa') dR/da,    dW/dt = -kappa' dR/dW,
with R = (1/2n) sum_i (f(x_i) - y_i)^2.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .datasets import Dataset
from .scaling import ScalingSpec

SNAPSHOT_MAGIC = b"RPNP"
SNAPSHOT_VERSION = 1


@dataclass(eq=False)
class NetworkParams:
    a: np.ndarray
    W: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.a.shape[0]:
            raise ValueError(f"shape mismatch: a {self.a.shape}, W {self.W.shape}")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.a.copy(), self.W.copy(), self.seed)

    def theta(self) -> np.ndarray:
        return np.concatenate([self.a, self.W.ravel()])


@dataclass
class GradientPair:
    da: np.ndarray
    dW: np.ndarray


@dataclass(frozen=True)
class InitConfig:
    m: int
    d: int
    seed: int
    use_asi: bool = False

    def __post_init__(self):
        if self.m < 1 or self.d < 2:
            raise ValueError(f"need m >= 1 and d >= 2, got m={self.m}, d={self.d}")


def init_params(config: InitConfig) -> NetworkParams:
    """Standard-normal a (first m draws) and W (next m*d draws, row-major).

    With use_asi the m drawn neurons are mirrored, giving width 2m.
    """
    z = rng.standard_normal(config.seed, config.m * (config.d + 1))
    p = NetworkParams(z[: config.m].copy(), z[config.m:].reshape(config.m, config.d).copy(), config.seed)
    return apply_asi(p) if config.use_asi else p


def apply_asi(params: NetworkParams) -> NetworkParams:
    """Append (-a_k, w_k) for every neuron; the output becomes identically zero."""
    a = np.concatenate([params.a, -params.a])
    W = np.concatenate([params.W, params.W], axis=0)
    return NetworkParams(a, W, params.seed)


def _check_dim(params: NetworkParams, X: np.ndarray) -> None:
    if X.shape[-1] != params.d:
        raise ValueError(f"input dimension {X.shape[-1]} != network dimension {params.d}")


def forward_batch(params: NetworkParams, kappa: float, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(params, X)
    act = np.maximum(X @ params.W.T, 0.0)
    return kappa * (act @ params.a)


def forward(params: NetworkParams, kappa: float, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector; use forward_batch")
    return float(forward_batch(params, kappa, x[None, :])[0])


def rescale_original(spec: ScalingSpec, m: int, raw: NetworkParams) -> NetworkParams:
    """Original-model parameters -> normalized ones (a / beta1, W / beta2)."""
    return NetworkParams(raw.a / spec.beta1(m), raw.W / spec.beta2(m), raw.seed)


def to_original(spec: ScalingSpec, m: int, params: NetworkParams) -> NetworkParams:
    return NetworkParams(params.a * spec.beta1(m), params.W * spec.beta2(m), params.seed)


def forward_original_batch(spec: ScalingSpec, m: int, raw: NetworkParams, X) -> np.ndarray:
    return forward_batch(raw, 1.0 / spec.alpha(m), X)


def forward_original(spec: ScalingSpec, m: int, raw: NetworkParams, x) -> float:
    """(1/alpha(m)) sum_k a_k relu(w_k . x) on unnormalized parameters."""
    return forward(raw, 1.0 / spec.alpha(m), x)


def residuals(params: NetworkParams, kappa: float, dataset: Dataset) -> np.ndarray:
    return forward_batch(params, kappa, dataset.X) - dataset.y


def empirical_risk(params: NetworkParams, kappa: float, dataset: Dataset) -> float:
    e = residuals(params, kappa, dataset)
    return float(e @ e) / (2 * dataset.n)


def gradient_from_residuals(a, kappa, kappa_prime, X, pre, e) -> GradientPair:
    n = X.shape[0]
    act = np.maximum(pre, 0.0)
    on = (pre > 0.0).astype(np.float64)  # relu'(0) := 0
    da = -(kappa / (kappa_prime * n)) * (e @ act)
    dW = (-(kappa * kappa_prime / n) * a)[:, None] * (on.T @ (e[:, None] * X))
    return GradientPair(da, dW)


def gradient(params: NetworkParams, kappa: float, kappa_prime: float, dataset: Dataset) -> GradientPair:
    """Time derivatives (da/dt, dW/dt) of the mobility-weighted flow."""
    if kappa_prime <= 0:
        raise ValueError("kappa_prime must be positive")
    _check_dim(params, dataset.X)
    pre = dataset.X @ params.W.T
    e = kappa * (np.maximum(pre, 0.0) @ params.a) - dataset.y
    return gradient_from_residuals(params.a, kappa, kappa_prime, dataset.X, pre, e)


def original_gradient(spec: ScalingSpec, m: int, raw: NetworkParams, dataset: Dataset) -> GradientPair:
    """-grad R of the original model (plain gradient flow, unit mobility)."""
    return gradient(raw, 1.0 / spec.alpha(m), 1.0, dataset)


# snapshot I/O: magic, u32 version, i64 m, i64 d, u64 seed, f64 kappa, f64 kappa',
# then a (m doubles) and W (m*d doubles, row-major); everything little-endian.
_HEADER = struct.Struct("<4sIqqQdd")


def save_snapshot(path, params: NetworkParams, kappa: float, kappa_prime: float) -> None:
    seed = 0 if params.seed is None else params.seed & rng.MASK64
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, params.m, params.d, seed, kappa, kappa_prime))
        f.write(params.a.astype("<f8").tobytes())
        f.write(params.W.astype("<f8").tobytes())


def load_snapshot(path) -> tuple[NetworkParams, float, float]:
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, version, m, d, seed, kappa, kappa_prime = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: not a version-{SNAPSHOT_VERSION} snapshot")
        body = np.frombuffer(f.read(), dtype="<f8")
    if body.size != m * (d + 1):
        raise ValueError(f"{path}: expected {m * (d + 1)} values, found {body.size}")
    return NetworkParams(body[:m].copy(), body[m:].reshape(m, d).copy(), seed), kappa, kappa_prime


def params_to_csv(path, params: NetworkParams) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "a"] + [f"w{j + 1}" for j in range(params.d)])
        for k in range(params.m):
            w.writerow([k, repr(float(params.a[k]))] + [repr(float(v)) for v in params.W[k]])
