"""Neuron features and condensation summaries.

Each neuron is split into an amplitude A_k = |a_k| ||w_k|| and a unit
orientation w_k / ||w_k||. Condensation shows up as most amplitude sitting on
a few orientations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .network import NetworkParams

HISTOGRAM_BINS = 64
DEFAULT_AMPLITUDE_FRACTION = 0.1
DEFAULT_COSINE_TOLERANCE = 0.05


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    amplitude: np.ndarray  # (m,)
    orientation: np.ndarray  # (m, d); rows of inactive neurons are left as zero
    inactive: np.ndarray  # (m,) bool, True where ||w_k|| = 0

    @property
    def m(self) -> int:
        return self.amplitude.shape[0]

    @property
    def d(self) -> int:
        return self.orientation.shape[1]


@dataclass(frozen=True)
class CondensationSummary:
    active_count: int
    cluster_count: int
    angular_entropy: float
    amplitude_threshold: float
    cosine_tolerance: float


def extract_features(params: NetworkParams) -> FeatureCloud:
    norms = np.linalg.norm(params.W, axis=1)
    inactive = norms == 0.0
    orient = np.zeros_like(params.W)
    live = ~inactive
    orient[live] = params.W[live] / norms[live, None]
    return FeatureCloud(np.abs(params.a) * norms, orient, inactive)


def angles_1d(orientation: np.ndarray) -> np.ndarray:
    """Row-wise angle to the first axis, in [-pi, pi)."""
    orientation = np.atleast_2d(np.asarray(orientation, dtype=np.float64))
    if orientation.shape[1] != 2:
        raise ValueError(f"angles need 2-d orientations, got d={orientation.shape[1]}")
    ang = np.arctan2(orientation[:, 1], orientation[:, 0])
    return np.where(ang >= np.pi, -np.pi, ang)


def angle_1d(orientation) -> float:
    v = np.asarray(orientation, dtype=np.float64)
    if v.shape != (2,):
        raise ValueError(f"angle_1d needs a 2-vector, got shape {v.shape}")
    return float(angles_1d(v[None, :])[0])


def default_reference(d: int) -> np.ndarray:
    return np.full(d, 1.0 / math.sqrt(d))


def project(cloud: FeatureCloud, reference=None) -> np.ndarray:
    """(m, 2) array of (A_k, w_hat_k . p); p defaults to ones / sqrt(d)."""
    p = default_reference(cloud.d) if reference is None else np.asarray(reference, dtype=np.float64)
    if p.shape != (cloud.d,):
        raise ValueError(f"reference has shape {p.shape}, expected ({cloud.d},)")
    if abs(float(np.linalg.norm(p)) - 1.0) > 1e-9:
        raise ValueError("reference must be a unit vector")
    return np.column_stack([cloud.amplitude, cloud.orientation @ p])


def _entropy(mass: np.ndarray) -> float:
    mass = mass[mass > 0]
    p = mass / mass.sum()
    return float(max(0.0, -np.sum(p * np.log(p))))


def greedy_clusters(orient: np.ndarray, amp: np.ndarray, cosine_tolerance: float) -> np.ndarray:
    """Cluster labels for neurons taken in the given order.

    A neuron joins the centroid of highest cosine similarity if it reaches
    1 - cosine_tolerance and opens a new cluster otherwise; centroids are
    amplitude-weighted means, renormalized after every join.
    """
    cut = 1.0 - cosine_tolerance
    sums = np.zeros((0, orient.shape[1]))
    cents = np.zeros((0, orient.shape[1]))
    labels = np.empty(orient.shape[0], dtype=np.int64)
    for i, (v, A) in enumerate(zip(orient, amp)):
        if cents.shape[0]:
            sims = cents @ v
            best = int(np.argmax(sims))
            if sims[best] >= cut:
                sums[best] += A * v
                nrm = np.linalg.norm(sums[best])
                cents[best] = sums[best] / nrm if nrm > 0 else v
                labels[i] = best
                continue
        labels[i] = cents.shape[0]
        sums = np.vstack([sums, A * v])
        cents = np.vstack([cents, v])
    return labels


def condensation_summary(cloud: FeatureCloud, amplitude_fraction: float = DEFAULT_AMPLITUDE_FRACTION,
                         cosine_tolerance: float = DEFAULT_COSINE_TOLERANCE) -> CondensationSummary:
    if not 0 < amplitude_fraction < 1:
        raise ValueError("amplitude_fraction must lie in (0, 1)")
    if not 0 < cosine_tolerance < 1:
        raise ValueError("cosine_tolerance must lie in (0, 1)")
    if cloud.m == 0:
        raise ValueError("empty feature cloud")
    top = float(np.max(cloud.amplitude))
    if not top > 0:
        raise ValueError("no active neurons: every amplitude is zero")
    threshold = amplitude_fraction * top
    idx = np.flatnonzero(cloud.amplitude >= threshold)
    # decreasing amplitude, ties broken by neuron index
    idx = idx[np.argsort(-cloud.amplitude[idx], kind="stable")]
    amp = cloud.amplitude[idx]
    orient = cloud.orientation[idx]
    labels = greedy_clusters(orient, amp, cosine_tolerance)
    count = int(labels.max()) + 1
    if cloud.d == 2:
        ang = angles_1d(orient)
        bins = np.floor((ang + np.pi) / (2 * np.pi) * HISTOGRAM_BINS).astype(np.int64)
        mass = np.bincount(np.clip(bins, 0, HISTOGRAM_BINS - 1), weights=amp, minlength=HISTOGRAM_BINS)
    else:
        mass = np.bincount(labels, weights=amp, minlength=count)
    return CondensationSummary(int(idx.size), count, _entropy(mass), threshold, cosine_tolerance)


def scatter_to_csv(path, clouds: dict[str, FeatureCloud], reference=None) -> None:
    """Rows (tag, k, A, angle) for d=2 or (tag, k, A, I) otherwise; inactive neurons skipped."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        first = True
        for tag, cloud in clouds.items():
            if first:
                w.writerow(["tag", "k", "A", "angle" if cloud.d == 2 else "I"])
                first = False
            coord = angles_1d(cloud.orientation) if cloud.d == 2 else project(cloud, reference)[:, 1]
            for k in np.flatnonzero(~cloud.inactive):
                w.writerow([tag, int(k), format(float(cloud.amplitude[k]), ".17g"), format(float(coord[k]), ".17g")])
