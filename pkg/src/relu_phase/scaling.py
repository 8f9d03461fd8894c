"""Initialization scalings as power laws in the width m.

A two-layer network (1/alpha) * sum_k a_k relu(w_k . x) with a_k ~ N(0, beta1^2)
and w_k ~ N(0, beta2^2 I) is characterized, after rescaling, by

    kappa  = beta1 * beta2 / alpha     (energetic scale)
    kappa' = beta1 / beta2             (dynamical scale)

and its phase coordinates gamma = -exponent(kappa), gamma' = -exponent(kappa').
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


@dataclass(frozen=True)
class PowerLaw:
    """value(m) = coeff * m ** exponent."""

    coeff: float
    exponent: float

    def __post_init__(self):
        if not (self.coeff > 0 and math.isfinite(self.coeff)):
            raise ValueError(f"PowerLaw coefficient must be positive, got {self.coeff}")
        if not math.isfinite(self.exponent):
            raise ValueError(f"PowerLaw exponent must be finite, got {self.exponent}")

    def __call__(self, m: float) -> float:
        return self.coeff * float(m) ** self.exponent

    def __mul__(self, other: "PowerLaw") -> "PowerLaw":
        return PowerLaw(self.coeff * other.coeff, self.exponent + other.exponent)

    def __truediv__(self, other: "PowerLaw") -> "PowerLaw":
        return PowerLaw(self.coeff / other.coeff, self.exponent - other.exponent)


ONE = PowerLaw(1.0, 0.0)


@dataclass(frozen=True)
class ScalingSpec:
    alpha: PowerLaw
    beta1: PowerLaw
    beta2: PowerLaw


@dataclass(frozen=True)
class PhaseCoordinates:
    gamma: float
    gamma_prime: float


class Regime(str, Enum):
    LINEAR = "Linear"
    CRITICAL = "Critical"
    CONDENSED = "Condensed"


def kappa(spec: ScalingSpec) -> PowerLaw:
    return spec.beta1 * spec.beta2 / spec.alpha


def kappa_prime(spec: ScalingSpec) -> PowerLaw:
    return spec.beta1 / spec.beta2


def phase_coordinates(spec: ScalingSpec) -> PhaseCoordinates:
    # 0.0 + ... keeps -0.0 out of printed tables
    return PhaseCoordinates(0.0 - kappa(spec).exponent, 0.0 - kappa_prime(spec).exponent)


def classify_regime(coords: PhaseCoordinates) -> Regime:
    g, gp = coords.gamma, coords.gamma_prime
    if not (math.isfinite(g) and math.isfinite(gp)):
        raise ValueError("phase coordinates must be finite")
    if g < 1 or gp > g - 1:
        return Regime.LINEAR
    if g > 1 and gp < g - 1:
        return Regime.CONDENSED
    return Regime.CRITICAL


def boundary_distance(coords: PhaseCoordinates) -> float:
    """Euclidean distance from (gamma, gamma') to the critical set."""
    g, gp = coords.gamma, coords.gamma_prime
    # ray 1: gamma = 1, gamma' <= 0
    d1 = abs(g - 1) if gp <= 0 else math.hypot(g - 1, gp)
    # ray 2: gamma' = gamma - 1, gamma' >= 0, i.e. points (1 + s, s) for s >= 0
    s = max(0.0, (g - 1 + gp) / 2)
    d2 = math.hypot(g - 1 - s, gp - s)
    return min(d1, d2)


PRESETS = ("LeCun", "He", "Xavier", "NTK", "MeanField", "EEtAl")

_ALIASES = {p.lower(): p for p in PRESETS}
_ALIASES.update({"mean-field": "MeanField", "mean_field": "MeanField", "e-et-al": "EEtAl", "eetal": "EEtAl"})


def canonical_preset_name(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset(name: str, dim: int, beta_exponent: float | None = None) -> ScalingSpec:
    """Named initialization schemes.

    `dim` is the input dimension d entering the LeCun/He input-weight scale.
    Xavier's sqrt(2/(m+1)), sqrt(2/(m+d)) are replaced by their leading power
    law sqrt(2) m^(-1/2); EEtAl uses beta1 = m^(-beta_exponent), beta2 = alpha = 1.
    """
    name = canonical_preset_name(name)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if name == "LeCun":
        return ScalingSpec(ONE, PowerLaw(1.0, -0.5), PowerLaw(math.sqrt(1.0 / dim), 0.0))
    if name == "He":
        return ScalingSpec(ONE, PowerLaw(math.sqrt(2.0), -0.5), PowerLaw(math.sqrt(2.0 / dim), 0.0))
    if name == "Xavier":
        lead = PowerLaw(math.sqrt(2.0), -0.5)
        return ScalingSpec(ONE, lead, lead)
    if name == "NTK":
        return ScalingSpec(PowerLaw(1.0, 0.5), ONE, ONE)
    if name == "MeanField":
        return ScalingSpec(PowerLaw(1.0, 1.0), ONE, ONE)
    if beta_exponent is None:
        raise ValueError("EEtAl preset needs beta_exponent (beta = m^-b)")
    return ScalingSpec(ONE, PowerLaw(1.0, -float(beta_exponent)), ONE)


def realize(coords: PhaseCoordinates, m: int) -> tuple[float, float]:
    """Unit-coefficient (kappa, kappa') at width m."""
    if m < 1:
        raise ValueError("width must be >= 1")
    return float(m) ** -coords.gamma, float(m) ** -coords.gamma_prime


def spec_for(coords: PhaseCoordinates, beta1: PowerLaw = ONE, beta2: PowerLaw | None = None) -> ScalingSpec:
    """A ScalingSpec with the given beta's hitting `coords` exactly.

    beta2 defaults to beta1 * m^gamma' so that kappa' = m^-gamma'; alpha is
    then solved from kappa = m^-gamma.
    """
    if beta2 is None:
        beta2 = beta1 * PowerLaw(1.0, coords.gamma_prime)
    alpha = beta1 * beta2 / PowerLaw(1.0, -coords.gamma)
    spec = ScalingSpec(alpha, beta1, beta2)
    got = phase_coordinates(spec)
    if abs(got.gamma_prime - coords.gamma_prime) > 1e-12:
        raise ValueError(f"beta1/beta2 give gamma'={got.gamma_prime}, wanted {coords.gamma_prime}")
    return spec
