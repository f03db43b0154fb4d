"""Generalization bounds for posteriors over a finite policy set.

Given an empirical cost ``C_S`` over ``N`` training environments and a KL
divergence between posterior and prior, two high-probability upper bounds on
the expected cost in novel environments are available:

    C_PAC  = C_S + sqrt(R)
    C_QPAC = (sqrt(C_S + R) + sqrt(R))**2

with the shared regularizer

    R = (KL(p || p0) + ln(2 sqrt(N) / delta)) / (2 N).

The quadratic bound is the tighter of the two exactly when its value is at
most 1/4, which is what the selector uses.  All logarithms are natural, all
probabilities double precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

SIMPLEX_ATOL = 1e-9

PAC = "PAC"
QPAC = "QPAC"

DEFAULT_SELECTION_NOTE = (
    "C_PAC and C_QPAC are both reported from a single evaluation at "
    "confidence delta; a stricter accounting would budget delta/2 per bound."
)


class InfiniteDivergenceError(ValueError):
    """Posterior puts mass where the prior has none, so KL(p||p0) = +inf."""


def _validated_simplex(values, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D probability vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(v < -SIMPLEX_ATOL) or np.any(v > 1.0 + SIMPLEX_ATOL):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    total = float(v.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {SIMPLEX_ATOL}")
    v = np.clip(v, 0.0, None)
    v = v / v.sum()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class DiscretePosterior:
    """Probability vector over m sampled policies.

    Entries are clipped to [0, 1] and renormalized on construction; inputs
    further than 1e-9 from the simplex are rejected.
    """

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _validated_simplex(self.p, "posterior"))

    @property
    def m(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class DiscretePrior:
    """Prior over the same m policies; uniform in normal use."""

    p0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", _validated_simplex(self.p0, "prior"))

    @classmethod
    def uniform(cls, m: int) -> "DiscretePrior":
        if m < 1:
            raise ValueError("m must be >= 1")
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return self.p0.size


@dataclass(frozen=True)
class BoundInputs:
    """Validated scalar inputs shared by both bound shapes."""

    N: int
    delta: float
    C_S: float
    kl: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly in (0, 1)")
        if not 0.0 <= self.C_S <= 1.0:
            raise ValueError("C_S must lie in [0, 1]")
        if not (math.isfinite(self.kl) and self.kl >= 0.0):
            raise ValueError("kl must be finite and >= 0")


def _probs(x) -> np.ndarray:
    if isinstance(x, DiscretePosterior):
        return x.p
    if isinstance(x, DiscretePrior):
        return x.p0
    return np.asarray(x, dtype=float)


def kl_divergence(p, p0) -> float:
    """KL(p || p0) in nats, with the 0 ln 0 = 0 convention.

    Raises InfiniteDivergenceError if p assigns mass outside the support
    of p0.
    """
    pv = _probs(p)
    qv = _probs(p0)
    if pv.shape != qv.shape:
        raise ValueError(f"dimension mismatch: {pv.shape} vs {qv.shape}")
    mask = pv > 0.0
    if np.any(qv[mask] == 0.0):
        raise InfiniteDivergenceError("posterior mass outside prior support")
    return float(np.sum(pv[mask] * np.log(pv[mask] / qv[mask])))


def regularizer_R(kl: float, n_envs: int, delta: float) -> float:
    """(kl + ln(2 sqrt(N) / delta)) / (2 N)."""
    if n_envs < 1:
        raise ValueError("N must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly in (0, 1)")
    if not (math.isfinite(kl) and kl >= 0.0):
        raise ValueError("kl must be finite and >= 0")
    return (kl + math.log(2.0 * math.sqrt(n_envs) / delta)) / (2.0 * n_envs)


def empirical_cost(costs, p) -> float:
    """Posterior-weighted mean training cost.

    ``costs`` is either an (m, N) matrix of per-policy, per-environment
    rollout costs or a length-m vector of per-policy means.
    """
    c = np.asarray(getattr(costs, "values", costs), dtype=float)
    pv = _probs(p)
    if c.ndim == 2:
        c = c.mean(axis=1)
    if c.shape != pv.shape:
        raise ValueError(f"dimension mismatch: {c.shape} costs vs {pv.shape} posterior")
    if np.any(c < 0.0) or np.any(c > 1.0):
        raise ValueError("costs must lie in [0, 1]")
    return float(c @ pv)


def c_pac(c_s: float, r: float) -> float:
    """Additive bound C_S + sqrt(R)."""
    if not 0.0 <= c_s <= 1.0:
        raise ValueError("C_S must lie in [0, 1]")
    if r < 0.0:
        raise ValueError("R must be >= 0")
    return c_s + math.sqrt(r)


def c_qpac(c_s: float, r: float) -> float:
    """Quadratic bound (sqrt(C_S + R) + sqrt(R))**2.

    Expands to C_S + 2R + 2 sqrt(C_S R + R^2), which is the form the
    posterior optimizer works with.
    """
    if not 0.0 <= c_s <= 1.0:
        raise ValueError("C_S must lie in [0, 1]")
    if r < 0.0:
        raise ValueError("R must be >= 0")
    return (math.sqrt(c_s + r) + math.sqrt(r)) ** 2


@dataclass(frozen=True)
class Certificate:
    """Bound report for one posterior on one training set.

    ``selected_value`` is min(C_PAC, C_QPAC); ``selected_bound`` is QPAC
    exactly when C_QPAC <= 1/4 (ties go to QPAC, where the two bounds
    coincide anyway).
    """

    C_S: float
    kl: float
    R: float
    C_PAC: float
    C_QPAC: float
    selected_bound: str
    selected_value: float
    delta: float
    N: int
    m: int | None = None
    bound_selection_note: str = DEFAULT_SELECTION_NOTE

    def __post_init__(self):
        if self.selected_bound not in (PAC, QPAC):
            raise ValueError(f"unknown bound tag {self.selected_bound!r}")
        if self.selected_value != min(self.C_PAC, self.C_QPAC):
            raise ValueError("selected_value must equal min(C_PAC, C_QPAC)")
        expected = QPAC if self.C_QPAC <= 0.25 else PAC
        if self.selected_bound != expected:
            raise ValueError("selected_bound inconsistent with the 1/4 rule")

    def to_dict(self) -> dict:
        return {
            "C_S": self.C_S,
            "kl": self.kl,
            "R": self.R,
            "C_PAC": self.C_PAC,
            "C_QPAC": self.C_QPAC,
            "selected_bound": self.selected_bound,
            "selected_value": self.selected_value,
            "delta": self.delta,
            "N": self.N,
            "m": self.m,
            "bound_selection_note": self.bound_selection_note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def guarantee_sentence(self) -> str:
        """Plain-language reading of the certificate.

        A vacuous bound (selected_value >= 1) renders as 0.00% success.
        """
        success = max(0.0, 1.0 - self.selected_value)
        return (
            f"success on {100.0 * success:.2f}% of unseen environments "
            f"on average with probability {1.0 - self.delta:g}"
        )


def select_bound(c_s: float, kl: float, n_envs: int, delta: float,
                 m: int | None = None) -> Certificate:
    """Evaluate both bounds and pick per the 1/4 crossover rule."""
    BoundInputs(N=n_envs, delta=delta, C_S=c_s, kl=kl)
    r = regularizer_R(kl, n_envs, delta)
    pac = c_pac(c_s, r)
    qpac = c_qpac(c_s, r)
    selected = QPAC if qpac <= 0.25 else PAC
    return Certificate(
        C_S=c_s,
        kl=kl,
        R=r,
        C_PAC=pac,
        C_QPAC=qpac,
        selected_bound=selected,
        selected_value=min(pac, qpac),
        delta=delta,
        N=n_envs,
        m=m,
    )
