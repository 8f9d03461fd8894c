"""Limiting kernels, finite-width Gram matrices and their spectra.

    K_a[i, j] = E_w relu(w.x_i) relu(w.x_j)
    K_w[i, j] = E_(a,w) a^2 relu'(w.x_i) relu'(w.x_j) x_i.x_j
with a ~ N(0, 1), w ~ N(0, I). Both have arc-cosine closed forms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .datasets import Dataset
from .network import NetworkParams

MC_CHUNK = 1 << 16


@dataclass
class GramPair:
    K_a: np.ndarray
    K_w: np.ndarray
    lambda_a: float
    lambda_w: float
    se_a: np.ndarray | None = None
    se_w: np.ndarray | None = None

    @property
    def lam(self) -> float:
        return min(self.lambda_a, self.lambda_w)


@dataclass
class FiniteGram:
    G_a: np.ndarray
    G_w: np.ndarray
    kappa: float
    kappa_prime: float
    m: int

    @property
    def G(self) -> np.ndarray:
        return self.G_a + self.G_w

    def normalized_a(self) -> np.ndarray:
        """(kappa'/kappa^2) G_a, which concentrates on K_a."""
        return self.G_a * (self.kappa_prime / self.kappa**2)

    def normalized_w(self) -> np.ndarray:
        return self.G_w / (self.kappa**2 * self.kappa_prime)


def _angles(X: np.ndarray):
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("closed-form kernels need nonzero inputs")
    dots = X @ X.T
    cos = np.clip(dots / np.outer(norms, norms), -1.0, 1.0)
    theta = np.arccos(cos)
    np.fill_diagonal(theta, 0.0)
    return norms, dots, theta


def kernel_a_closed(X: np.ndarray) -> np.ndarray:
    norms, _, theta = _angles(X)
    K = np.outer(norms, norms) / (2 * np.pi) * (np.sin(theta) + (np.pi - theta) * np.cos(theta))
    return (K + K.T) / 2


def kernel_w_closed(X: np.ndarray) -> np.ndarray:
    _, dots, theta = _angles(X)
    K = dots * (np.pi - theta) / (2 * np.pi)
    return (K + K.T) / 2


def gram_limit_closed(dataset: Dataset) -> GramPair:
    K_a = kernel_a_closed(dataset.X)
    K_w = kernel_w_closed(dataset.X)
    return GramPair(K_a, K_w, min_eigenvalue(K_a), min_eigenvalue(K_w))


def gram_limit_mc(dataset: Dataset, sample_count: int, seed: int) -> GramPair:
    """Monte Carlo kernel estimates with per-entry standard errors.

    Samples are drawn in fixed-size chunks, chunk c seeded by mix_seed(seed, c),
    and accumulated in chunk order.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    X = dataset.X
    n, d = X.shape
    dots = X @ X.T
    s1a = np.zeros((n, n))
    s2a = np.zeros((n, n))
    s1w = np.zeros((n, n))
    s2w = np.zeros((n, n))
    done = 0
    chunk = 0
    while done < sample_count:
        size = min(MC_CHUNK, sample_count - done)
        z = rng.standard_normal(rng.mix_seed(seed, chunk), size * (d + 1))
        a = z[:size]
        w = z[size:].reshape(size, d)
        pre = w @ X.T  # (size, n)
        act = np.maximum(pre, 0.0)
        on = (pre > 0).astype(np.float64)
        # per-sample outer products, (size, n, n)
        fa = act[:, :, None] * act[:, None, :]
        fw = (a**2)[:, None, None] * on[:, :, None] * on[:, None, :] * dots
        s1a += fa.sum(axis=0)
        s2a += (fa**2).sum(axis=0)
        s1w += fw.sum(axis=0)
        s2w += (fw**2).sum(axis=0)
        done += size
        chunk += 1
    N = float(sample_count)
    K_a = s1a / N
    K_w = s1w / N
    denom = max(N - 1.0, 1.0)
    var_a = np.maximum(s2a / N - K_a**2, 0.0) * N / denom
    var_w = np.maximum(s2w / N - K_w**2, 0.0) * N / denom
    return GramPair(K_a, K_w, min_eigenvalue(K_a), min_eigenvalue(K_w),
                    se_a=np.sqrt(var_a / N), se_w=np.sqrt(var_w / N))


def gram_finite(params: NetworkParams, kappa: float, kappa_prime: float, dataset: Dataset) -> FiniteGram:
    X = dataset.X
    if X.shape[1] != params.d:
        raise ValueError(f"input dimension {X.shape[1]} != network dimension {params.d}")
    m = params.m
    pre = X @ params.W.T  # (n, m)
    act = np.maximum(pre, 0.0)
    on = (pre > 0).astype(np.float64)
    G_a = (kappa**2 / (kappa_prime * m)) * (act @ act.T)
    G_w = (kappa**2 * kappa_prime / m) * (((on * params.a**2) @ on.T) * (X @ X.T))
    return FiniteGram((G_a + G_a.T) / 2, (G_w + G_w.T) / 2, kappa, kappa_prime, m)


def jacobi_eigenvalues(matrix, rtol: float = 1e-10, max_sweeps: int = 100) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    A = np.array(matrix, dtype=np.float64, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and float(np.max(np.abs(A - A.T))) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    A = (A + A.T) / 2
    n = A.shape[0]
    if n == 1:
        return A.diagonal().copy()
    fro = float(np.linalg.norm(A))
    if fro == 0.0:
        return np.zeros(n)
    # off-diagonal mass below this makes every eigenvalue accurate to rtol * ||A||_F
    target = (rtol * fro) ** 2
    upper = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = 2.0 * float(np.sum(A[upper] ** 2))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = A[q, p] = 0.0
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.sort(A.diagonal())


def min_eigenvalue(matrix) -> float:
    return float(jacobi_eigenvalues(matrix)[0])


def decay_rate(m: int, kappa: float, kappa_prime: float, n: int, lambda_a: float, lambda_w: float) -> float:
    """(m kappa^2 / n) (lambda_a / kappa' + kappa' lambda_w)."""
    return m * kappa**2 / n * (lambda_a / kappa_prime + kappa_prime * lambda_w)


def linear_rate(m: int, kappa: float, n: int, lam: float) -> float:
    """2 m kappa^2 lambda / n, the rate in the linear-regime loss bound."""
    return 2.0 * m * kappa**2 * lam / n


def matrix_to_csv(path, M: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"c{j + 1}" for j in range(M.shape[1])])
        for row in M:
            w.writerow([format(float(v), ".17g") for v in row])
