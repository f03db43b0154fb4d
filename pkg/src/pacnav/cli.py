"""Command-line pipeline driver.

Exit codes: 0 success, 2 configuration error, 3 stage fault.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .es import write_training_log
from .pipeline import ConfigError, StageError


def _add_common(sub):
    sub.add_argument("--config", required=False, default=None,
                     help="pipeline config file (key = value sections)")
    sub.add_argument("--seed", type=int, default=0,
                     help="offset applied to every data seed space")
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--out", default=".", help="artifact directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacnav")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train-prior", help="train the Gaussian prior with ES")
    _add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")

    for name in ("sample-policies", "eval-costs", "certify"):
        _add_common(subs.add_parser(name))

    p = subs.add_parser("validate", help="repeated end-to-end bound checks")
    _add_common(p)
    p.add_argument("--trials", type=int, default=20)

    p = subs.add_parser("export", help="tidy plot-data exports")
    p.add_argument("--what", choices=["learning-curve", "bound-curve", "trace"],
                   required=True)
    p.add_argument("--inputs", nargs="+", required=True,
                   help="training log, certificate files, or a policies.json")
    p.add_argument("--out-file", required=True)
    p.add_argument("--config", default=None,
                   help="simulator config for trace export")
    p.add_argument("--env-seed", type=int, default=0,
                   help="environment seed for trace export")
    p.add_argument("--policy-index", type=int, default=0,
                   help="row of policies.json to roll out")
    return parser


def _load(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    return pipeline.apply_seed_offset(cfg, args.seed)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, RuntimeError, OSError, json.JSONDecodeError) as exc:
        print(f"stage fault: {exc}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    if args.command == "export":
        if args.what == "learning-curve":
            if len(args.inputs) != 1:
                raise ConfigError("learning-curve export takes one training log")
            n = pipeline.export_learning_curve(args.inputs[0], args.out_file)
        elif args.what == "bound-curve":
            n = pipeline.export_bound_curve(args.inputs, args.out_file)
        else:
            if len(args.inputs) != 1:
                raise ConfigError("trace export takes one policies.json")
            n = _export_trace(args)
        print(f"wrote {n} rows to {args.out_file}")
        return 0

    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "train-prior":
        ckpt = out / "prior_checkpoint.json"
        if args.resume and not ckpt.exists():
            raise StageError(f"--resume given but {ckpt} does not exist")
        dist, log_rows = pipeline.train_prior_stage(
            cfg, workers=args.workers, checkpoint_path=ckpt, resume=args.resume)
        write_training_log(log_rows, out / "training_log.csv")
        final = log_rows[-1].empirical_cost if log_rows else float("nan")
        print(f"prior trained: d={dist.d}, final iteration cost {final:.4f}")
        print(f"checkpoint: {ckpt}")
        return 0

    if args.command == "sample-policies":
        ckpt = out / "prior_checkpoint.json"
        if not ckpt.exists():
            raise StageError(f"missing prior checkpoint {ckpt}")
        from .es import load_checkpoint

        prior, _, _ = load_checkpoint(ckpt)
        policies = pipeline.sample_policy_set(prior, cfg.n_policies,
                                              cfg.seeds.policy_sampling)
        pipeline.save_policies(out / "policies.json", policies, cfg.arch,
                               cfg.seeds.policy_sampling)
        print(f"sampled {cfg.n_policies} policies into {out / 'policies.json'}")
        return 0

    if args.command == "eval-costs":
        policies = pipeline.load_policies(out / "policies.json", cfg.arch)
        matrix = pipeline.build_cost_matrix(policies, cfg.pac_env_seeds(),
                                            cfg.sim, cfg.arch, workers=args.workers)
        matrix.save(out / "cost_matrix.pbcm")
        print(f"cost matrix {matrix.m}x{matrix.n_envs} written")
        return 0

    if args.command == "certify":
        result = pipeline.certify(cfg, out, workers=args.workers)
        cert = result.certificate
        print(f"selected {cert.selected_bound} bound: {cert.selected_value:.4f}")
        print(cert.guarantee_sentence())
        return 0

    if args.command == "validate":
        report = pipeline.validate(cfg, trials=args.trials, workers=args.workers)
        path = out / "validation.json"
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"{report['n_violations']} of {report['trials']} trials violated "
              f"(delta {report['delta']:g}); report: {path}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def _export_trace(args) -> int:
    from .sim import generate_environment, rollout

    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    policies = pipeline.load_policies(args.inputs[0], cfg.arch)
    if not 0 <= args.policy_index < policies.shape[0]:
        raise ConfigError(f"policy index {args.policy_index} out of range")
    env = generate_environment(args.env_seed, cfg.sim.env)
    _, trace = rollout(pipeline.make_policy(cfg), policies[args.policy_index],
                       env, cfg.sim)
    return pipeline.export_trace(trace, args.out_file)


if __name__ == "__main__":
    sys.exit(main())
