"""Bound minimization over the simplex of sampled policies.

The quadratic bound restricted to a target empirical cost ``C_hat`` splits
into two one-dimensional problems.  First, the KL-closest posterior to the
prior among all p with ``C @ p = C_hat`` is an exponentially tilted
reweighting

    p_i  proportional to  p0_i * exp(-theta * C_i),

with the scalar tilt ``theta`` found by bisection (the tilted mean cost is
strictly decreasing in theta).  Second, for that posterior the epigraph
variable ``lambda`` in

    tau = C_hat + 2 R + 2 lambda,     lambda^2 >= C_hat * R + R^2

is optimal at the feasibility boundary, where tau collapses back to the
closed form (sqrt(C_hat + R) + sqrt(R))**2.  A grid over C_hat in
[C_min, C_max] plus one refinement pass around the winner then minimizes
either bound shape.  A slower mode that bisects lambda against the explicit
feasibility program is kept for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bounds import (
    DiscretePosterior,
    DiscretePrior,
    c_pac,
    c_qpac,
    kl_divergence,
    regularizer_R,
)

# Absolute slack for lambda^2 >= C_hat*R + R^2 so that the closed-form
# boundary value itself tests feasible despite rounding.
FEASIBILITY_ATOL = 1e-15

# Tolerance for C_hat just outside [C_min, C_max] from upstream rounding.
BOUNDARY_ATOL = 1e-12

OBJECTIVE_QPAC = "qpac"
OBJECTIVE_PAC = "pac"


@dataclass(frozen=True)
class RepInstance:
    """One optimization instance: per-policy mean costs, prior, data size."""

    C: np.ndarray
    p0: DiscretePrior
    N: int
    delta: float

    def __post_init__(self):
        c = np.asarray(self.C, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("C must be a non-empty 1-D cost vector")
        if np.any(c < 0.0) or np.any(c > 1.0) or not np.all(np.isfinite(c)):
            raise ValueError("cost entries must lie in [0, 1]")
        if c.size != self.p0.m:
            raise ValueError("cost vector and prior dimension mismatch")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly in (0, 1)")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "C", c)

    @property
    def c_min(self) -> float:
        return float(self.C.min())

    @property
    def c_max(self) -> float:
        return float(self.C.max())

    def to_dict(self) -> dict:
        return {
            "C": [float(c) for c in self.C],
            "p0": [float(p) for p in self.p0.p0],
            "N": self.N,
            "delta": self.delta,
        }


@dataclass(frozen=True)
class RepParams:
    """Fixed (C_hat, lambda) pair for the feasibility program."""

    C_hat: float
    lam: float

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class RepSolution:
    p_star: DiscretePosterior
    tau_star: float
    C_hat_star: float
    lambda_star: float
    theta_star: float
    objective: str

    def to_dict(self) -> dict:
        theta = self.theta_star
        return {
            "p_star": [float(x) for x in self.p_star.p],
            "tau_star": self.tau_star,
            "C_hat_star": self.C_hat_star,
            "lambda_star": self.lambda_star,
            "theta_star": theta if math.isfinite(theta) else None,
            "objective": self.objective,
        }


def i_project(C, p0, c_hat: float, tol: float = 1e-10,
              max_iter: int = 200) -> tuple[DiscretePosterior, float, float]:
    """KL projection of the prior onto the slice ``C @ p = c_hat``.

    Returns (posterior, kl, theta).  At the boundary targets c_hat = C_min
    (resp. C_max) the projection degenerates to the prior conditioned on the
    argmin (resp. argmax) entries of C, reported with theta = +/-inf.
    """
    cv = np.asarray(C, dtype=float)
    p0v = p0.p0 if isinstance(p0, DiscretePrior) else np.asarray(p0, dtype=float)
    if cv.shape != p0v.shape:
        raise ValueError("cost vector and prior dimension mismatch")

    support = p0v > 0.0
    cs = cv[support]
    ps = p0v[support]
    c_lo = float(cs.min())
    c_hi = float(cs.max())
    if c_hat < c_lo - BOUNDARY_ATOL or c_hat > c_hi + BOUNDARY_ATOL:
        raise ValueError(
            f"target cost {c_hat!r} outside the attainable range [{c_lo}, {c_hi}]"
        )
    c_hat = min(max(c_hat, c_lo), c_hi)

    def assemble(weights_on_support: np.ndarray, theta: float):
        full = np.zeros_like(p0v)
        full[support] = weights_on_support / weights_on_support.sum()
        post = DiscretePosterior(full)
        return post, kl_divergence(post, DiscretePrior(p0v)), theta

    if c_hi - c_lo == 0.0:
        return assemble(ps.copy(), 0.0)
    if c_hat == c_lo:
        # Limit of the tilted family as theta -> +inf: prior mass on the argmin ties.
        return assemble(np.where(cs == c_lo, ps, 0.0), math.inf)
    if c_hat == c_hi:
        return assemble(np.where(cs == c_hi, ps, 0.0), -math.inf)

    log_ps = np.log(ps)

    def tilted(theta: float):
        logw = log_ps - theta * cs
        logw -= logw.max()
        w = np.exp(logw)
        w_sum = w.sum()
        return w, float((w @ cs) / w_sum)

    # Tilted mean cost decreases from c_hi to c_lo; expand the bracket until
    # it straddles the target.
    theta0 = 50.0 / (c_hi - c_lo)
    lo, hi = -theta0, theta0
    for _ in range(200):
        if tilted(lo)[1] >= c_hat:
            break
        lo *= 2.0
    for _ in range(200):
        if tilted(hi)[1] <= c_hat:
            break
        hi *= 2.0

    w_mid, mean_mid = tilted(0.5 * (lo + hi))
    theta_mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        if abs(mean_mid - c_hat) <= tol:
            break
        if mean_mid > c_hat:
            lo = theta_mid
        else:
            hi = theta_mid
        theta_mid = 0.5 * (lo + hi)
        w_mid, mean_mid = tilted(theta_mid)
    return assemble(w_mid, theta_mid)


def solve_rep_fixed(inst: RepInstance, params: RepParams) -> float:
    """Value of the feasibility program at fixed (C_hat, lambda).

    Returns tau = C_hat + 2R + 2*lambda when lambda^2 >= C_hat*R + R^2 at
    the minimal-KL posterior, and math.inf when infeasible.
    """
    _, kl, _ = i_project(inst.C, inst.p0, params.C_hat)
    r = regularizer_R(kl, inst.N, inst.delta)
    if params.lam * params.lam < params.C_hat * r + r * r - FEASIBILITY_ATOL:
        return math.inf
    return params.C_hat + 2.0 * r + 2.0 * params.lam


def prop2_intervals(inst: RepInstance, gamma: float, c_hat: float | None = None):
    """Search intervals for (C_hat, lambda) containing the optimum.

    ``gamma`` must be at least the prior's quadratic bound.  Passing a
    specific ``c_hat`` tightens the lambda interval by substituting it for
    C_min.  A degenerate interval (lambda_min >= lambda_max) means the grid
    point cannot beat gamma and should be skipped.
    """
    r0 = regularizer_R(0.0, inst.N, inst.delta)
    prior_qpac = c_qpac(float(inst.C @ inst.p0.p0), r0)
    if gamma < prior_qpac - 1e-12:
        raise ValueError("gamma must be at least the prior's quadratic bound")
    c_ref = inst.c_min if c_hat is None else c_hat
    lam_min = math.sqrt(c_ref * r0 + r0 * r0)
    lam_max = (gamma - c_ref) / 2.0 - r0
    return (inst.c_min, inst.c_max), (lam_min, lam_max)


class _Candidate(NamedTuple):
    tau: float
    c_hat: float
    lam: float
    theta: float
    p: DiscretePosterior
    kl: float


def _prior_candidate(inst: RepInstance, objective: str) -> _Candidate:
    r0 = regularizer_R(0.0, inst.N, inst.delta)
    c0 = float(inst.C @ inst.p0.p0)
    p0_as_posterior = DiscretePosterior(inst.p0.p0)
    if objective == OBJECTIVE_QPAC:
        tau = c_qpac(c0, r0)
        lam = math.sqrt(c0 * r0 + r0 * r0)
    else:
        tau = c_pac(c0, r0)
        lam = 0.0
    return _Candidate(tau, c0, lam, 0.0, p0_as_posterior, 0.0)


def _evaluate_closed_form(inst: RepInstance, c_hat: float, objective: str) -> _Candidate:
    p, kl, theta = i_project(inst.C, inst.p0, c_hat)
    r = regularizer_R(kl, inst.N, inst.delta)
    if objective == OBJECTIVE_QPAC:
        lam = math.sqrt(c_hat * r + r * r)
        tau = c_hat + 2.0 * r + 2.0 * lam
    else:
        lam = 0.0
        tau = c_hat + math.sqrt(r)
    return _Candidate(tau, c_hat, lam, theta, p, kl)


def _evaluate_bisection(inst: RepInstance, c_hat: float, gamma: float,
                        lam_tol: float = 1e-8) -> _Candidate | None:
    """Fidelity mode: locate the smallest feasible lambda by bisection.

    Mirrors the grid-plus-bisection search shape instead of the closed form;
    returns None where the tightened lambda interval is degenerate or the
    program is infeasible throughout it.
    """
    _, (lam_lo, lam_hi) = prop2_intervals(inst, gamma, c_hat=c_hat)
    if lam_lo >= lam_hi:
        return None
    if not math.isfinite(solve_rep_fixed(inst, RepParams(c_hat, lam_hi))):
        return None
    if math.isfinite(solve_rep_fixed(inst, RepParams(c_hat, lam_lo))):
        lam = lam_lo
    else:
        lo, hi = lam_lo, lam_hi
        while hi - lo > lam_tol:
            mid = 0.5 * (lo + hi)
            if math.isfinite(solve_rep_fixed(inst, RepParams(c_hat, mid))):
                hi = mid
            else:
                lo = mid
        lam = hi
    tau = solve_rep_fixed(inst, RepParams(c_hat, lam))
    p, kl, theta = i_project(inst.C, inst.p0, c_hat)
    return _Candidate(tau, c_hat, lam, theta, p, kl)


def _grid_minimize(inst: RepInstance, K: int, refine_points: int,
                   evaluate) -> _Candidate:
    # Index-ordered strict argmin: the result is independent of evaluation
    # order, so grid points may be computed in parallel.
    best = None
    best_idx = None

    def consider(idx, cand):
        nonlocal best, best_idx
        if cand is None:
            return
        if best is None or cand.tau < best.tau or (cand.tau == best.tau and idx < best_idx):
            best, best_idx = cand, idx

    c_lo, c_hi = inst.c_min, inst.c_max
    grid = np.linspace(c_lo, c_hi, K)
    for i, c in enumerate(grid):
        consider((0, i), evaluate(float(c)))
    if best is not None and refine_points > 1 and K > 1:
        h = (c_hi - c_lo) / (K - 1)
        fine = np.linspace(max(c_lo, best.c_hat - h), min(c_hi, best.c_hat + h),
                           refine_points)
        for i, c in enumerate(fine):
            consider((1, i), evaluate(float(c)))
    return best


def _optimize(inst: RepInstance, K: int, refine_points: int, objective: str,
              lambda_search: str) -> RepSolution:
    if K < 2:
        raise ValueError("K must be >= 2")
    prior = _prior_candidate(inst, objective)
    best = prior
    if inst.c_max - inst.c_min > 0.0:
        if lambda_search == "bisection" and objective == OBJECTIVE_QPAC:
            gamma = c_qpac(float(inst.C @ inst.p0.p0),
                           regularizer_R(0.0, inst.N, inst.delta))
            evaluate = lambda c: _evaluate_bisection(inst, c, gamma)
        else:
            evaluate = lambda c: _evaluate_closed_form(inst, c, objective)
        grid_best = _grid_minimize(inst, K, refine_points, evaluate)
        if grid_best is not None and grid_best.tau < best.tau:
            best = grid_best
    return RepSolution(
        p_star=best.p,
        tau_star=best.tau,
        C_hat_star=best.c_hat,
        lambda_star=best.lam,
        theta_star=best.theta,
        objective=objective,
    )


def optimize_qpac(inst: RepInstance, K: int = 200, refine_points: int = 50,
                  lambda_search: str = "closed-form") -> RepSolution:
    """Minimize the quadratic bound over the simplex via the C_hat grid.

    Initialized with the prior, so tau_star never exceeds the prior's bound.
    """
    return _optimize(inst, K, refine_points, OBJECTIVE_QPAC, lambda_search)


def optimize_pac(inst: RepInstance, K: int = 200, refine_points: int = 50) -> RepSolution:
    """Same grid scheme for the additive bound C_hat + sqrt(R)."""
    return _optimize(inst, K, refine_points, OBJECTIVE_PAC, "closed-form")
