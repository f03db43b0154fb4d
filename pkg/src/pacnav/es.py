"""Evolutionary-strategies training of the Gaussian search distribution.

The prior over policy weights is a diagonal Gaussian N(mu, diag(sigma^2)).
Its empirical-cost gradient on one environment is estimated from antithetic
pairs: with eps_1..eps_mhat ~ N(0, I) and cost evaluations at both
mu + sigma*eps and mu - sigma*eps,

    grad_mu    ~= (1 / 2 mhat) * sum_i (C_i+ - C_i-) * eps_i / sigma
    grad_sigma ~= (1 / 2 mhat) * sum_i (C_i+ + C_i-) * (eps_i^2 - 1) / sigma

so a cost function that is constant over the pair contributes exactly zero
to grad_mu.  Updates run through Adam in (mu, log sigma^2) coordinates,
which keeps sigma positive; the sigma gradient is converted by the chain
rule d/dlog sigma^2 = (sigma / 2) d/dsigma.

When the smoothed training cost plateaus after having improved at least
once, raw costs are swapped for rank-based utilities (negated, since the
shaping assigns the best sample the largest utility while the optimizer
descends) until progress resumes.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-6
GRAD_CLIP = 10.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SMOOTH_WINDOW = 5
IMPROVE_TOL = 1e-3

MODE_ES = "es"
MODE_UTILITY = "utility"

_LOG_SIGMA_SQ_FLOOR = 2.0 * math.log(SIGMA_FLOOR)


@dataclass
class GaussianPolicyDistribution:
    """Diagonal Gaussian over flat weight vectors, variance kept in log form."""

    mu: np.ndarray
    log_sigma_sq: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.log_sigma_sq = np.asarray(self.log_sigma_sq, dtype=float)
        if self.mu.ndim != 1 or self.mu.shape != self.log_sigma_sq.shape:
            raise ValueError("mu and log_sigma_sq must be 1-D and equal length")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mu must be finite")
        if np.any(np.isnan(self.log_sigma_sq)) or np.any(self.log_sigma_sq == np.inf):
            raise ValueError("log_sigma_sq must not be NaN or +inf")

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_sigma_sq)

    @classmethod
    def initial(cls, d: int, mean: float = 0.0, variance: float = 4.0):
        return cls(mu=np.full(d, mean), log_sigma_sq=np.full(d, math.log(variance)))

    def copy(self) -> "GaussianPolicyDistribution":
        return GaussianPolicyDistribution(self.mu.copy(), self.log_sigma_sq.copy())


@dataclass(frozen=True)
class EsConfig:
    m_hat: int = 16
    batch: int = 16
    lr_mu: float = 1.0
    lr_logvar: float = 0.01
    iters: int = 200
    stall_window: int = 10
    seed: int = 0
    init_variance: float = 4.0

    def __post_init__(self):
        if self.m_hat < 1:
            raise ValueError("m_hat must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr_mu <= 0.0 or self.lr_logvar <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.stall_window < 1:
            raise ValueError("stall_window must be >= 1")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.init_variance <= 0.0:
            raise ValueError("init_variance must be positive")


@dataclass(frozen=True)
class EsGradient:
    grad_mu: np.ndarray
    grad_sigma: np.ndarray

    def __post_init__(self):
        gm = np.asarray(self.grad_mu, dtype=float)
        gs = np.asarray(self.grad_sigma, dtype=float)
        if gm.shape != gs.shape or gm.ndim != 1:
            raise ValueError("gradient components must be 1-D and equal length")
        if not (np.all(np.isfinite(gm)) and np.all(np.isfinite(gs))):
            raise ValueError("non-finite gradient is a training fault")
        object.__setattr__(self, "grad_mu", gm)
        object.__setattr__(self, "grad_sigma", gs)


def _antithetic_costs(dist, cost_fn, m_hat, rng):
    eps = rng.standard_normal((m_hat, dist.d))
    sigma = dist.sigma
    cost_plus = np.empty(m_hat)
    cost_minus = np.empty(m_hat)
    for i in range(m_hat):
        step = sigma * eps[i]
        cost_plus[i] = cost_fn(dist.mu + step)
        cost_minus[i] = cost_fn(dist.mu - step)
    return eps, cost_plus, cost_minus


def _gradient_from_costs(dist, eps, cost_plus, cost_minus, shape_costs=None):
    if shape_costs is not None:
        shaped = np.asarray(shape_costs(np.concatenate([cost_plus, cost_minus])))
        cost_plus, cost_minus = shaped[:eps.shape[0]], shaped[eps.shape[0]:]
    sigma = dist.sigma
    two_m = 2.0 * eps.shape[0]
    grad_mu = ((cost_plus - cost_minus) @ eps) / two_m / sigma
    grad_sigma = ((cost_plus + cost_minus) @ (eps * eps - 1.0)) / two_m / sigma
    return EsGradient(grad_mu=grad_mu, grad_sigma=grad_sigma)


def es_grad_env(dist: GaussianPolicyDistribution, cost_fn, m_hat: int,
                rng: np.random.Generator, shape_costs=None) -> EsGradient:
    """Antithetic gradient estimate on one environment.

    ``cost_fn`` maps a weight vector to a cost in [0, 1] (for the planning
    task this is a simulator rollout; tests use analytic surrogates).
    ``shape_costs``, when given, transforms the 2*m_hat raw costs before
    they enter the estimator.
    """
    if m_hat < 1:
        raise ValueError("m_hat must be >= 1")
    eps, cp, cm = _antithetic_costs(dist, cost_fn, m_hat, rng)
    return _gradient_from_costs(dist, eps, cp, cm, shape_costs)


def aggregate_gradients(per_env: list[EsGradient], n_hat: int) -> EsGradient:
    """Elementwise sum in list order divided by n_hat."""
    if not per_env:
        raise ValueError("no gradients to aggregate")
    if n_hat < 1:
        raise ValueError("n_hat must be >= 1")
    gm = per_env[0].grad_mu.copy()
    gs = per_env[0].grad_sigma.copy()
    for g in per_env[1:]:
        if g.grad_mu.shape != gm.shape:
            raise ValueError("gradient dimension mismatch")
        gm += g.grad_mu
        gs += g.grad_sigma
    return EsGradient(grad_mu=gm / n_hat, grad_sigma=gs / n_hat)


def utility_transform(costs) -> np.ndarray:
    """Rank-based shaping of a cost vector (2*m_hat entries).

    Costs are ranked ascending (lower is better); rank k receives
    max(0, ln(m_hat + 1) - ln k), the utilities are normalized to sum one
    and centered by their mean 1/(2*m_hat).  Tied costs share the mean
    utility of their rank span, so the output depends on the ranks only and
    a fully tied input maps to the zero vector.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("costs must be a non-empty 1-D vector")
    n = c.size
    half = n / 2.0
    raw = np.maximum(0.0, np.log(half + 1.0) - np.log(np.arange(1, n + 1)))
    raw /= raw.sum()
    order = np.argsort(c, kind="stable")
    shaped = np.empty(n)
    sorted_costs = c[order]
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and sorted_costs[stop] == sorted_costs[start]:
            stop += 1
        shaped[order[start:stop]] = raw[start:stop].mean()
        start = stop
    return shaped - shaped.mean()


@dataclass
class AdamState:
    m_mu: np.ndarray
    v_mu: np.ndarray
    m_logvar: np.ndarray
    v_logvar: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d: int) -> "AdamState":
        return cls(np.zeros(d), np.zeros(d), np.zeros(d), np.zeros(d), 0)


def adam_step(state: AdamState, dist: GaussianPolicyDistribution,
              grad: EsGradient, lr_mu: float, lr_logvar: float) -> GaussianPolicyDistribution:
    """One Adam update; mutates ``state`` and returns the new distribution.

    Raw gradients are clipped elementwise to +/-GRAD_CLIP (the 1/sigma
    factor in the estimators blows up for tiny sigma), the sigma gradient
    is converted to log-variance coordinates, and the resulting sigma is
    floored at SIGMA_FLOOR.
    """
    g_mu = np.clip(grad.grad_mu, -GRAD_CLIP, GRAD_CLIP)
    g_sigma = np.clip(grad.grad_sigma, -GRAD_CLIP, GRAD_CLIP)
    g_logvar = 0.5 * dist.sigma * g_sigma

    state.t += 1
    t = state.t
    state.m_mu = ADAM_BETA1 * state.m_mu + (1.0 - ADAM_BETA1) * g_mu
    state.v_mu = ADAM_BETA2 * state.v_mu + (1.0 - ADAM_BETA2) * g_mu * g_mu
    state.m_logvar = ADAM_BETA1 * state.m_logvar + (1.0 - ADAM_BETA1) * g_logvar
    state.v_logvar = ADAM_BETA2 * state.v_logvar + (1.0 - ADAM_BETA2) * g_logvar * g_logvar

    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    mu = dist.mu - lr_mu * (state.m_mu / bc1) / (np.sqrt(state.v_mu / bc2) + ADAM_EPS)
    logvar = dist.log_sigma_sq - lr_logvar * (state.m_logvar / bc1) / (
        np.sqrt(state.v_logvar / bc2) + ADAM_EPS)
    logvar = np.maximum(logvar, _LOG_SIGMA_SQ_FLOOR)
    return GaussianPolicyDistribution(mu=mu, log_sigma_sq=logvar)


@dataclass
class TrainingLogRow:
    iteration: int
    empirical_cost: float
    mode: str
    wall_time_s: float

    def as_tuple(self):
        return (self.iteration, self.empirical_cost, self.mode, self.wall_time_s)


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "empirical_cost", "mode", "wall_time_s"])
        for row in rows:
            writer.writerow(row.as_tuple())


def save_checkpoint(path, dist, adam, iteration, base_seed, mode,
                    best_smoothed, stall, has_improved, recent_costs) -> None:
    payload = {
        "spec_version": "1",
        "mu": [float(v) for v in dist.mu],
        "log_sigma_sq": [float(v) for v in dist.log_sigma_sq],
        "adam": {
            "m_mu": [float(v) for v in adam.m_mu],
            "v_mu": [float(v) for v in adam.v_mu],
            "m_logvar": [float(v) for v in adam.m_logvar],
            "v_logvar": [float(v) for v in adam.v_logvar],
            "t": adam.t,
        },
        "iteration": iteration,
        "base_seed": base_seed,
        "mode": mode,
        "best_smoothed": best_smoothed,
        "stall": stall,
        "has_improved": has_improved,
        "recent_costs": list(recent_costs),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        data = json.load(fh)
    dist = GaussianPolicyDistribution(
        mu=np.asarray(data["mu"], dtype=float),
        log_sigma_sq=np.asarray(data["log_sigma_sq"], dtype=float),
    )
    adam = AdamState(
        m_mu=np.asarray(data["adam"]["m_mu"], dtype=float),
        v_mu=np.asarray(data["adam"]["v_mu"], dtype=float),
        m_logvar=np.asarray(data["adam"]["m_logvar"], dtype=float),
        v_logvar=np.asarray(data["adam"]["v_logvar"], dtype=float),
        t=int(data["adam"]["t"]),
    )
    return dist, adam, data


def _grad_stream(base_seed: int, iteration: int, env_index: int) -> np.random.Generator:
    # Streams keyed by (seed, iteration, env index): worker scheduling and
    # resume points cannot change the sampled perturbations.
    return np.random.default_rng(
        np.random.SeedSequence([int(base_seed), 1, int(iteration), int(env_index)]))


def _minibatch_ids(config: EsConfig, iteration: int, n_envs: int, sweep: bool):
    if sweep:
        start = (iteration * config.batch) % n_envs
        return [(start + j) % n_envs for j in range(config.batch)]
    rng = np.random.default_rng(
        np.random.SeedSequence([int(config.seed), 0, int(iteration)]))
    return [int(e) for e in rng.integers(0, n_envs, size=config.batch)]


def train_prior(config: EsConfig, env_cost_fn, n_envs: int,
                init: GaussianPolicyDistribution, workers: int = 1,
                checkpoint_path=None, resume: bool = False,
                sweep: bool = False, checkpoint_every: int = 25):
    """Minimize mean rollout cost over the prior environment pool.

    ``env_cost_fn(env_index)`` returns the cost function for environment
    ``env_index`` in [0, n_envs).  Each iteration draws a minibatch of
    environment indices (or sweeps the pool in order when ``sweep``),
    estimates per-environment gradients on a worker pool, averages them in
    index order, and applies one Adam step.

    Mode switching: the iteration cost is smoothed over a 5-iteration
    window; once the smoothed cost has improved at least once and then
    fails to improve by IMPROVE_TOL for ``stall_window`` iterations, the
    estimator switches to shaped utilities, reverting on the next
    improvement.  A run whose cost never improves (a constant-cost pool)
    stays in plain ES.

    Returns (distribution, log_rows).
    """
    if n_envs < 1:
        raise ValueError("n_envs must be >= 1")
    dist = init.copy()
    adam = AdamState.zeros(dist.d)
    start_iter = 0
    mode = MODE_ES
    best_smoothed = None
    stall = 0
    has_improved = False
    recent = deque(maxlen=SMOOTH_WINDOW)

    if resume and checkpoint_path is not None:
        dist, adam, data = load_checkpoint(checkpoint_path)
        start_iter = int(data["iteration"])
        mode = data["mode"]
        best_smoothed = data["best_smoothed"]
        stall = int(data["stall"])
        has_improved = bool(data["has_improved"])
        recent = deque(data["recent_costs"], maxlen=SMOOTH_WINDOW)
        if int(data["base_seed"]) != config.seed:
            raise ValueError("checkpoint seed disagrees with config seed")

    log_rows: list[TrainingLogRow] = []
    t_start = time.monotonic()

    def shaped(cost_vec):
        # Shaping assigns the best sample the most positive utility; the
        # descent direction needs the opposite ordering, hence the negation.
        return -utility_transform(cost_vec)

    for it in range(start_iter, config.iters):
        ids = _minibatch_ids(config, it, n_envs, sweep)
        mode_used = mode
        shape_costs = shaped if mode_used == MODE_UTILITY else None

        def one_env(env_index):
            rng = _grad_stream(config.seed, it, env_index)
            cost_fn = env_cost_fn(env_index)
            eps, cp, cm = _antithetic_costs(dist, cost_fn, config.m_hat, rng)
            grad = _gradient_from_costs(dist, eps, cp, cm, shape_costs)
            return grad, float(np.concatenate([cp, cm]).mean())

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one_env, ids))
        else:
            results = [one_env(e) for e in ids]

        grad = aggregate_gradients([g for g, _ in results], len(ids))
        iter_cost = float(np.mean([c for _, c in results]))
        dist = adam_step(adam, dist, grad, config.lr_mu, config.lr_logvar)

        recent.append(iter_cost)
        smoothed = float(np.mean(recent))
        if best_smoothed is None:
            best_smoothed = smoothed
        elif smoothed < best_smoothed - IMPROVE_TOL:
            best_smoothed = smoothed
            has_improved = True
            stall = 0
            mode = MODE_ES
        else:
            stall += 1
            if has_improved and mode == MODE_ES and stall >= config.stall_window:
                mode = MODE_UTILITY
                stall = 0

        log_rows.append(TrainingLogRow(
            iteration=it,
            empirical_cost=iter_cost,
            mode=mode_used,
            wall_time_s=time.monotonic() - t_start,
        ))
        if checkpoint_path is not None and (
                (it + 1) % checkpoint_every == 0 or it + 1 == config.iters):
            save_checkpoint(checkpoint_path, dist, adam, it + 1, config.seed,
                            mode, best_smoothed, stall, has_improved, recent)

    if checkpoint_path is not None and config.iters == start_iter:
        save_checkpoint(checkpoint_path, dist, adam, start_iter, config.seed,
                        mode, best_smoothed, stall, has_improved, recent)
    return dist, log_rows
