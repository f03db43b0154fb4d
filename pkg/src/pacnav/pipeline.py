"""End-to-end orchestration: prior training, cost matrices, certification.

Stages are pure functions of a PipelineConfig, so rerunning any stage with
the same config reproduces its artifacts byte for byte.  The cost matrix is
persisted in a compact binary format (magic "PBCM") because it dominates
wall time and must reload bit-exactly; everything else is JSON carrying a
spec_version field.
"""

from __future__ import annotations

import configparser
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bounds import Certificate, DiscretePosterior, DiscretePrior, kl_divergence, select_bound
from .es import EsConfig, GaussianPolicyDistribution, load_checkpoint, train_prior
from .policy import PlanningPolicy, PolicyArchitecture
from .repopt import RepInstance, RepSolution, optimize_pac, optimize_qpac
from .sim import EnvConfig, PrimitiveConfig, SensorConfig, SimConfig, generate_environment, rollout

SPEC_VERSION = "1"

COST_MATRIX_MAGIC = b"PBCM"
COST_MATRIX_VERSION = 1


class ConfigError(Exception):
    """Invalid or inconsistent pipeline configuration (exit code 2)."""


class StageError(Exception):
    """A pipeline stage failed (exit code 3)."""


@dataclass(frozen=True)
class CostMatrix:
    """m x N rollout costs: row = policy, column = training environment."""

    values: np.ndarray
    policy_ids: tuple[int, ...]
    env_seeds: tuple[int, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if v.shape != (len(self.policy_ids), len(self.env_seeds)):
            raise ValueError("cost matrix shape disagrees with ids/seeds")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("cost entries must lie in [0, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "policy_ids", tuple(int(i) for i in self.policy_ids))
        object.__setattr__(self, "env_seeds", tuple(int(s) for s in self.env_seeds))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_envs(self) -> int:
        return self.values.shape[1]

    def row_means(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def save(self, path) -> None:
        path = Path(path)
        m, n = self.values.shape
        header = COST_MATRIX_MAGIC + struct.pack("<III", COST_MATRIX_VERSION, m, n)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        sidecar = {
            "spec_version": SPEC_VERSION,
            "policy_ids": list(self.policy_ids),
            "env_seeds": list(self.env_seeds),
        }
        _write_json(_sidecar_path(path), sidecar)

    @classmethod
    def load(cls, path) -> "CostMatrix":
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != COST_MATRIX_MAGIC:
                raise StageError(f"{path}: bad magic {magic!r}")
            version, m, n = struct.unpack("<III", fh.read(12))
            if version != COST_MATRIX_VERSION:
                raise StageError(f"{path}: unsupported version {version}")
            data = np.frombuffer(fh.read(8 * m * n), dtype="<f8").reshape(m, n)
        with open(_sidecar_path(path)) as fh:
            sidecar = json.load(fh)
        return cls(values=data, policy_ids=tuple(sidecar["policy_ids"]),
                   env_seeds=tuple(sidecar["env_seeds"]))


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


@dataclass(frozen=True)
class SeedPlan:
    """Base seeds; each data role owns a contiguous, non-overlapping range."""

    prior_data: int = 0
    pac_data: int = 1_000_000
    eval_data: int = 2 ** 32
    policy_sampling: int = 7


@dataclass(frozen=True)
class PipelineConfig:
    seeds: SeedPlan = field(default_factory=SeedPlan)
    n_prior_envs: int = 200
    n_train_envs: int = 500
    n_eval_envs: int = 2000
    n_policies: int = 50
    delta: float = 0.01
    grid_points: int = 200
    es: EsConfig = field(default_factory=EsConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    arch: PolicyArchitecture = field(default_factory=PolicyArchitecture)

    def __post_init__(self):
        if min(self.n_prior_envs, self.n_train_envs, self.n_eval_envs, self.n_policies) < 1:
            raise ConfigError("environment and policy counts must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie strictly in (0, 1)")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        if self.arch.n_ray != self.sim.sensor.n_ray:
            raise ConfigError("policy input size and sensor ray count disagree")
        if self.arch.n_primitives != self.sim.primitives.count:
            raise ConfigError("policy output size and primitive count disagree")
        ranges = {
            "prior_data": (self.seeds.prior_data, self.seeds.prior_data + self.n_prior_envs),
            "pac_data": (self.seeds.pac_data, self.seeds.pac_data + self.n_train_envs),
            "eval_data": (self.seeds.eval_data, self.seeds.eval_data + self.n_eval_envs),
        }
        names = list(ranges)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                lo_a, hi_a = ranges[a]
                lo_b, hi_b = ranges[b]
                if lo_a < hi_b and lo_b < hi_a:
                    raise ConfigError(f"seed spaces {a} and {b} overlap")

    def pac_env_seeds(self) -> list[int]:
        return [self.seeds.pac_data + i for i in range(self.n_train_envs)]


def shift_config(cfg: PipelineConfig, trial: int) -> PipelineConfig:
    """Config for one replication: fresh data seeds, same distributions."""
    stride = max(10_000, cfg.n_prior_envs, cfg.n_train_envs, cfg.n_eval_envs)
    seeds = SeedPlan(
        prior_data=cfg.seeds.prior_data + trial * stride,
        pac_data=cfg.seeds.pac_data + trial * stride,
        eval_data=cfg.seeds.eval_data + trial * stride,
        policy_sampling=cfg.seeds.policy_sampling + trial,
    )
    return replace(cfg, seeds=seeds, es=replace(cfg.es, seed=cfg.es.seed + trial))


def make_policy(cfg: PipelineConfig) -> PlanningPolicy:
    return PlanningPolicy(cfg.arch, cfg.sim.library, cfg.sim.sensor.fov_rad)


def sample_policy_set(prior: GaussianPolicyDistribution, m: int, seed: int) -> np.ndarray:
    """m i.i.d. draws w = mu + sigma * eps from a stream keyed by the seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    eps = rng.standard_normal((m, prior.d))
    return prior.mu[None, :] + prior.sigma[None, :] * eps


def _eval_env_chunk(args):
    weights, seeds, sim, arch = args
    policy = PlanningPolicy(arch, sim.library, sim.sensor.fov_rad)
    block = np.empty((weights.shape[0], len(seeds)))
    for j, seed in enumerate(seeds):
        try:
            env = generate_environment(seed, sim.env)
        except Exception as exc:
            raise StageError(f"environment seed {seed}: {exc}") from exc
        for i in range(weights.shape[0]):
            try:
                block[i, j], _ = rollout(policy, weights[i], env, sim)
            except Exception as exc:
                raise StageError(
                    f"policy {i}, environment seed {seed}: {exc}") from exc
    return block


def build_cost_matrix(policies, env_seeds, sim: SimConfig,
                      arch: PolicyArchitecture, workers: int = 1) -> CostMatrix:
    """Rollout cost of every policy on every seeded environment.

    Work is split into contiguous environment chunks; each (policy, env)
    cell is an independent pure rollout written to its own slot, so the
    result is identical for any worker count.
    """
    weights = np.asarray(policies, dtype=float)
    if weights.ndim != 2 or weights.shape[0] < 1:
        raise ValueError("policies must be a non-empty (m, d) array")
    seeds = [int(s) for s in env_seeds]
    if not seeds:
        raise ValueError("env_seeds must be non-empty")
    values = np.empty((weights.shape[0], len(seeds)))
    if workers <= 1:
        values[:, :] = _eval_env_chunk((weights, seeds, sim, arch))
    else:
        chunk_bounds = np.array_split(np.arange(len(seeds)), min(workers * 4, len(seeds)))
        tasks = [(weights, [seeds[i] for i in idx], sim, arch)
                 for idx in chunk_bounds if len(idx)]
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                blocks = list(pool.map(_eval_env_chunk, tasks))
        except StageError:
            raise
        except Exception as exc:
            raise StageError(f"cost-matrix evaluation failed: {exc}") from exc
        col = 0
        for block in blocks:
            values[:, col:col + block.shape[1]] = block
            col += block.shape[1]
    return CostMatrix(values=values, policy_ids=tuple(range(weights.shape[0])),
                      env_seeds=tuple(seeds))


def prior_env_cost_fn(cfg: PipelineConfig, policy: PlanningPolicy):
    """Cost-function factory over the prior environment pool."""
    base = cfg.seeds.prior_data

    def factory(env_index: int):
        env = generate_environment(base + env_index, cfg.sim.env)

        def cost(w):
            return rollout(policy, w, env, cfg.sim)[0]

        return cost

    return factory


def train_prior_stage(cfg: PipelineConfig, workers: int = 1,
                      checkpoint_path=None, resume: bool = False):
    policy = make_policy(cfg)
    init = GaussianPolicyDistribution.initial(cfg.arch.d,
                                              variance=cfg.es.init_variance)
    return train_prior(cfg.es, prior_env_cost_fn(cfg, policy), cfg.n_prior_envs,
                       init, workers=workers, checkpoint_path=checkpoint_path,
                       resume=resume)


@dataclass(frozen=True)
class CertifyResult:
    certificate: Certificate
    solution: RepSolution
    solution_qpac: RepSolution
    solution_pac: RepSolution
    posterior: DiscretePosterior
    policies: np.ndarray
    cost_matrix: CostMatrix


def _certificate_for(posterior: DiscretePosterior, prior: DiscretePrior,
                     row_means: np.ndarray, n_envs: int, delta: float) -> Certificate:
    c_s = float(row_means @ posterior.p)
    kl = kl_divergence(posterior, prior)
    return select_bound(c_s, kl, n_envs, delta, m=posterior.m)


def certify_core(cfg: PipelineConfig, prior: GaussianPolicyDistribution,
                 workers: int = 1, cost_matrix: CostMatrix | None = None,
                 policies: np.ndarray | None = None) -> CertifyResult:
    """Sample policies, evaluate costs, optimize both bound shapes, select.

    Both optimized posteriors are certified and the one with the smaller
    selected bound wins, ties to the quadratic-bound solution.
    """
    if policies is None:
        policies = sample_policy_set(prior, cfg.n_policies, cfg.seeds.policy_sampling)
    if cost_matrix is None:
        cost_matrix = build_cost_matrix(policies, cfg.pac_env_seeds(), cfg.sim,
                                        cfg.arch, workers=workers)
    row_means = cost_matrix.row_means()
    p0 = DiscretePrior.uniform(cfg.n_policies)
    inst = RepInstance(C=row_means, p0=p0, N=cfg.n_train_envs, delta=cfg.delta)
    sol_qpac = optimize_qpac(inst, K=cfg.grid_points)
    sol_pac = optimize_pac(inst, K=cfg.grid_points)
    cert_qpac = _certificate_for(sol_qpac.p_star, p0, row_means,
                                 cfg.n_train_envs, cfg.delta)
    cert_pac = _certificate_for(sol_pac.p_star, p0, row_means,
                                cfg.n_train_envs, cfg.delta)
    if cert_qpac.selected_value <= cert_pac.selected_value:
        certificate, solution = cert_qpac, sol_qpac
    else:
        certificate, solution = cert_pac, sol_pac
    return CertifyResult(
        certificate=certificate,
        solution=solution,
        solution_qpac=sol_qpac,
        solution_pac=sol_pac,
        posterior=solution.p_star,
        policies=policies,
        cost_matrix=cost_matrix,
    )


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def certificate_document(result: CertifyResult) -> dict:
    return {
        "spec_version": SPEC_VERSION,
        "certificate": result.certificate.to_dict(),
        "solution": result.solution.to_dict(),
        "guarantee": result.certificate.guarantee_sentence(),
    }


def certify(cfg: PipelineConfig, out_dir, workers: int = 1) -> CertifyResult:
    """File-based certify stage.

    Requires a trained prior checkpoint in ``out_dir``; reuses policies and
    cost-matrix artifacts when present so the expensive stages are
    independently rerunnable.  Writes certificate.json and posterior.json.
    """
    out = Path(out_dir)
    ckpt = out / "prior_checkpoint.json"
    if not ckpt.exists():
        raise StageError(f"certify: missing prior checkpoint {ckpt}")
    prior, _, _ = load_checkpoint(ckpt)
    if prior.d != cfg.arch.d:
        raise StageError("certify: prior dimension disagrees with architecture")

    policies_path = out / "policies.json"
    if policies_path.exists():
        policies = load_policies(policies_path, cfg.arch)
    else:
        policies = sample_policy_set(prior, cfg.n_policies, cfg.seeds.policy_sampling)
        save_policies(policies_path, policies, cfg.arch, cfg.seeds.policy_sampling)

    matrix_path = out / "cost_matrix.pbcm"
    if matrix_path.exists():
        cost_matrix = CostMatrix.load(matrix_path)
        if cost_matrix.m != cfg.n_policies or cost_matrix.n_envs != cfg.n_train_envs:
            raise StageError("certify: cached cost matrix shape disagrees with config")
    else:
        cost_matrix = build_cost_matrix(policies, cfg.pac_env_seeds(), cfg.sim,
                                        cfg.arch, workers=workers)
        cost_matrix.save(matrix_path)

    result = certify_core(cfg, prior, workers=workers,
                          cost_matrix=cost_matrix, policies=policies)
    _write_json(out / "certificate.json", certificate_document(result))
    _write_json(out / "posterior.json", {
        "spec_version": SPEC_VERSION,
        "p": [float(x) for x in result.posterior.p],
        "policy_ids": list(cost_matrix.policy_ids),
    })
    return result


def save_policies(path, policies, arch: PolicyArchitecture, seed: int) -> None:
    _write_json(path, {
        "spec_version": SPEC_VERSION,
        "arch": arch.to_dict(),
        "sampling_seed": int(seed),
        "weights": [[float(v) for v in row] for row in np.asarray(policies)],
    })


def load_policies(path, arch: PolicyArchitecture) -> np.ndarray:
    with open(path) as fh:
        data = json.load(fh)
    stored = PolicyArchitecture.from_dict(data["arch"])
    if stored != arch:
        raise StageError(f"{path}: stored architecture disagrees with config")
    return np.asarray(data["weights"], dtype=float)


def _eval_true_cost_chunk(args):
    weights, picks, seeds, sim, arch = args
    policy = PlanningPolicy(arch, sim.library, sim.sensor.fov_rad)
    costs = np.empty(len(seeds))
    for k, (pick, seed) in enumerate(zip(picks, seeds)):
        env = generate_environment(seed, sim.env)
        costs[k], _ = rollout(policy, weights[pick], env, sim)
    return costs


def estimate_true_cost(cfg: PipelineConfig, posterior: DiscretePosterior,
                       policies, eval_seed: int, n_eval: int,
                       workers: int = 1) -> tuple[float, float]:
    """Held-out estimate matching sim.estimate_true_cost, chunk-parallel.

    Environment i uses seed eval_seed + i and the policy-index stream is
    keyed by eval_seed, so the estimate is identical for any worker count.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    weights = np.asarray(policies, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([int(eval_seed), 3]))
    picks = rng.choice(posterior.m, size=n_eval, p=posterior.p)
    seeds = [eval_seed + i for i in range(n_eval)]
    if workers <= 1:
        costs = _eval_true_cost_chunk((weights, picks, seeds, cfg.sim, cfg.arch))
    else:
        idx_chunks = np.array_split(np.arange(n_eval), min(workers * 4, n_eval))
        tasks = [(weights, picks[idx], [seeds[i] for i in idx], cfg.sim, cfg.arch)
                 for idx in idx_chunks if len(idx)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_eval_true_cost_chunk, tasks))
        costs = np.concatenate(parts)
    mean = float(costs.mean())
    se = float(costs.std(ddof=1) / math.sqrt(n_eval)) if n_eval > 1 else 0.0
    return mean, se


def check_certificate(bound_value: float, estimate: float, se: float) -> dict:
    """A certificate is violated when the bound undercuts the estimate by
    more than two Monte-Carlo standard errors."""
    return {
        "bound": float(bound_value),
        "estimate": float(estimate),
        "se": float(se),
        "gap": float(bound_value - estimate),
        "violation": bool(bound_value < estimate - 2.0 * se),
    }


def run_trial(cfg: PipelineConfig, workers: int = 1) -> dict:
    """One full replication: train prior, certify, evaluate held out."""
    prior, _ = train_prior_stage(cfg, workers=workers)
    result = certify_core(cfg, prior, workers=workers)
    estimate, se = estimate_true_cost(cfg, result.posterior, result.policies,
                                      cfg.seeds.eval_data, cfg.n_eval_envs,
                                      workers=workers)
    row = check_certificate(result.certificate.selected_value, estimate, se)
    row.update({
        "selected_bound": result.certificate.selected_bound,
        "C_S": result.certificate.C_S,
        "kl": result.certificate.kl,
        "prior_qpac_bound": _prior_bound(result, "qpac"),
        "prior_pac_bound": _prior_bound(result, "pac"),
    })
    return row


def _prior_bound(result: CertifyResult, which: str) -> float:
    from .bounds import c_pac, c_qpac, regularizer_R

    c0 = float(result.cost_matrix.row_means().mean())
    r0 = regularizer_R(0.0, result.cost_matrix.n_envs,
                       result.certificate.delta)
    return c_qpac(c0, r0) if which == "qpac" else c_pac(c0, r0)


def validate(cfg: PipelineConfig, trials: int, workers: int = 1) -> dict:
    """Repeated end-to-end replications with fresh data seeds per trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for k in range(trials):
        row = run_trial(shift_config(cfg, k), workers=workers)
        row["trial"] = k
        rows.append(row)
    return {
        "spec_version": SPEC_VERSION,
        "delta": cfg.delta,
        "trials": trials,
        "n_violations": sum(1 for r in rows if r["violation"]),
        "rows": rows,
    }


# ---------------------------------------------------------------------------
# Config file parsing (key = value sections)

def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    try:
        return _config_from_parser(parser)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _config_from_parser(parser: configparser.ConfigParser) -> PipelineConfig:
    def get(section, key, cast, default):
        if parser.has_option(section, key):
            return cast(parser.get(section, key))
        return default

    seeds = SeedPlan(
        prior_data=get("seeds", "prior_data", int, SeedPlan.prior_data),
        pac_data=get("seeds", "pac_data", int, SeedPlan.pac_data),
        eval_data=get("seeds", "eval_data", int, SeedPlan.eval_data),
        policy_sampling=get("seeds", "policy_sampling", int, SeedPlan.policy_sampling),
    )
    es_defaults = EsConfig()
    es = EsConfig(
        m_hat=get("es", "m_hat", int, es_defaults.m_hat),
        batch=get("es", "batch", int, es_defaults.batch),
        lr_mu=get("es", "lr_mu", float, es_defaults.lr_mu),
        lr_logvar=get("es", "lr_logvar", float, es_defaults.lr_logvar),
        iters=get("es", "iters", int, es_defaults.iters),
        stall_window=get("es", "stall_window", int, es_defaults.stall_window),
        seed=get("es", "seed", int, es_defaults.seed),
        init_variance=get("es", "init_variance", float, es_defaults.init_variance),
    )
    envd = EnvConfig()
    env = EnvConfig(
        corridor_width=get("sim", "corridor_width", float, envd.corridor_width),
        corridor_length=get("sim", "corridor_length", float, envd.corridor_length),
        n_obstacles=get("sim", "n_obstacles", int, envd.n_obstacles),
        radius_min=get("sim", "radius_min", float, envd.radius_min),
        radius_max=get("sim", "radius_max", float, envd.radius_max),
        obstacle_y_min=get("sim", "obstacle_y_min", float, envd.obstacle_y_min),
        obstacle_y_max=get("sim", "obstacle_y_max", float, envd.obstacle_y_max),
        goal_y=get("sim", "goal_y", float, envd.goal_y),
        start_clearance=get("sim", "start_clearance", float, envd.start_clearance),
    )
    sensord = SensorConfig()
    sensor = SensorConfig(
        n_ray=get("sensor", "n_ray", int, sensord.n_ray),
        fov_rad=math.radians(get("sensor", "fov_deg", float,
                                 math.degrees(sensord.fov_rad))),
        max_range=get("sensor", "max_range", float, sensord.max_range),
    )
    primd = PrimitiveConfig()
    prims = PrimitiveConfig(
        count=get("primitives", "count", int, primd.count),
        lateral_span=get("primitives", "lateral_span", float, primd.lateral_span),
        forward_advance=get("primitives", "forward_advance", float, primd.forward_advance),
    )
    simd = SimConfig()
    sim = SimConfig(
        env=env, sensor=sensor, primitives=prims,
        robot_radius=get("sim", "robot_radius", float, simd.robot_radius),
        arc_step=get("sim", "arc_step", float, simd.arc_step),
        horizon=get("sim", "horizon", int, simd.horizon),
    )
    hidden_raw = get("policy", "hidden", str, None)
    hidden = tuple(int(h) for h in hidden_raw.split(",")) if hidden_raw else (24,)
    arch = PolicyArchitecture(n_ray=sensor.n_ray, hidden=hidden,
                              n_primitives=prims.count)
    return PipelineConfig(
        seeds=seeds,
        n_prior_envs=get("pipeline", "n_prior_envs", int, 200),
        n_train_envs=get("pipeline", "n_train_envs", int, 500),
        n_eval_envs=get("pipeline", "n_eval_envs", int, 2000),
        n_policies=get("pipeline", "n_policies", int, 50),
        delta=get("pipeline", "delta", float, 0.01),
        grid_points=get("pipeline", "grid_points", int, 200),
        es=es,
        sim=sim,
        arch=arch,
    )


def apply_seed_offset(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    """The --seed flag: replays the whole pipeline on shifted data seeds."""
    if seed == 0:
        return cfg
    return shift_config(cfg, seed)


# ---------------------------------------------------------------------------
# Plot-data exports

def export_learning_curve(log_path, out_path) -> int:
    """Project (iteration, empirical_cost, mode) out of a training log."""
    import csv as _csv

    with open(log_path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or not {"iteration", "empirical_cost", "mode"} \
                <= set(reader.fieldnames):
            raise StageError(f"{log_path}: not a training log")
        rows = [(r["iteration"], r["empirical_cost"], r["mode"]) for r in reader]
    with open(out_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["iteration", "empirical_cost", "mode"])
        writer.writerows(rows)
    return len(rows)


def export_bound_curve(certificate_paths, out_path) -> int:
    """Tabulate certificates (typically across N) for bound-vs-N plots."""
    import csv as _csv

    rows = []
    for path in certificate_paths:
        with open(path) as fh:
            doc = json.load(fh)
        cert = doc.get("certificate")
        if cert is None:
            raise StageError(f"{path}: not a certificate document")
        rows.append((cert["N"], cert["C_S"], cert["C_PAC"], cert["C_QPAC"],
                     cert["selected_bound"], cert["selected_value"]))
    rows.sort(key=lambda r: r[0])
    with open(out_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["N", "C_S", "C_PAC", "C_QPAC", "selected_bound",
                         "selected_value"])
        writer.writerows(rows)
    return len(rows)


def export_trace(trace, out_path) -> int:
    import csv as _csv

    from .sim import trace_to_csv_rows

    rows = trace_to_csv_rows(trace)
    with open(out_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t", "x", "y", "heading", "primitive_id"])
        writer.writerows(rows)
    return len(rows)
