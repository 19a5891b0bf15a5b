"""Command-line entry point: ``pfrlab <subcommand>``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import SchemaMismatch, load_checkpoint
from .config import ConfigError, RunConfig, defaults_yaml, load_config
from .env import Action
from .metrics import BASELINES, evaluate, robustness_probe, score_batch
from .policy import NetRolloutPolicy
from .trainers.loop import build_net, train
from .trainers.rollout import EnvPool
from .trajlog import write_log

OUTPUT_ROOT_ENV = "PFRLAB_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def output_dir(args, cfg: RunConfig, default_name: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.master_seed={args.seed}")
    return load_config(args.config, overrides)


def _deterministic(args) -> None:
    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _report_csv(path: Path, rep) -> None:
    cols = ["episodes", "mean_return", "csa", "wsa", "nsa", "pfr_accuracy", "rfr_accuracy"]
    d = rep.to_dict()
    vals = ["" if d[c] is None else repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in cols]
    path.write_text(",".join(cols) + "\n" + ",".join(vals) + "\n")


def _policy_for(name: str, cfg: RunConfig):
    env_cfg = cfg.env_config()
    if name in BASELINES:
        return BASELINES[name](), None
    try:
        net, meta = load_checkpoint(name, env_cfg.schema().hash)
    except FileNotFoundError:
        raise UsageError(f"policy must be one of {sorted(BASELINES)} or a checkpoint path; {name!r} not found")
    return NetRolloutPolicy(net), meta


def cmd_simulate(args) -> int:
    cfg = _config(args)
    env_cfg = cfg.env_config()
    policy, _ = _policy_for(args.policy, cfg)
    seed = cfg.run.master_seed
    ss = np.random.SeedSequence(seed, spawn_key=(5,))
    seeds = [int(x) for x in ss.generate_state(args.episodes, dtype=np.uint64) % (2**63)]
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(6,)))
    trajs = EnvPool(env_cfg, args.episodes).run(policy, seeds, rng, greedy=not args.stochastic)
    rep = score_batch(trajs)
    out = output_dir(args, cfg, f"simulate-{Path(args.policy).stem}-seed{seed}")
    write_log(out / "trajectories.jsonl", trajs)
    _dump(out / "report.json", rep.to_dict())
    _report_csv(out / "report.csv", rep)
    print(_summary(rep))
    print(f"wrote {out}")
    return EXIT_OK


def _summary(rep) -> str:
    def f(x):
        return "n/a" if x is None else f"{x:.3f}"
    return (f"episodes={rep.episodes} mean_return={f(rep.mean_return)} CSA={f(rep.csa)} WSA={f(rep.wsa)} "
            f"NSA={f(rep.nsa)} PFR={f(rep.pfr_accuracy)} RFR={f(rep.rfr_accuracy)}")


def run_manifest(cfg: RunConfig) -> dict:
    env_cfg = cfg.env_config()
    net = build_net(cfg.agent, env_cfg)
    return {"pfrlab_version": __version__, "python": platform.python_version(), "torch": torch.__version__,
            "numpy": np.__version__, "config": cfg.to_dict(), "schema_hash": env_cfg.schema().hash,
            "architecture": net.spec.to_dict(), "parameter_count": net.spec.parameter_count(),
            "layer_shapes": [[n, list(s)] for n, s in net.spec.layer_shapes()]}


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.iterations is not None:
        cfg.run.iterations = args.iterations
    out = output_dir(args, cfg, f"train-{cfg.agent.kind}-{cfg.agent.architecture}-seed{cfg.run.master_seed}")

    def progress(row):
        if row["phase"] != "train" and not args.quiet:
            print(f"[{row['phase']} @ {row['iteration']}] CSA={row['csa']} WSA={row['wsa']} "
                  f"PFR={row['pfr_accuracy']} return={row['mean_return']}", flush=True)

    res = train(cfg.env_config(), cfg.agent, cfg.run_settings(), out_dir=out, resume=args.resume,
                manifest=run_manifest(cfg), progress=progress)
    print(f"trained {res.iterations_done} iterations{' (target met)' if res.stopped_early else ''}; wrote {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    env_cfg = cfg.env_config()
    net, meta = load_checkpoint(args.checkpoint, env_cfg.schema().hash)
    policy = NetRolloutPolicy(net)
    seed = cfg.run.master_seed
    if args.robustness is not None:
        rep = robustness_probe(policy, env_cfg, args.robustness, args.episodes, schema_hash=meta["schema_hash"],
                               greedy=not args.stochastic)
    else:
        rep = evaluate(policy, env_cfg, args.episodes, seed=seed, greedy=not args.stochastic,
                       schema_hash=meta["schema_hash"])
    out = output_dir(args, cfg, f"evaluate-{Path(args.checkpoint).stem}-seed{seed}")
    _dump(out / "report.json", {**rep.to_dict(), "checkpoint": str(args.checkpoint),
                                "robustness_seed": args.robustness})
    _report_csv(out / "report.csv", rep)
    print(_summary(rep))
    return EXIT_OK


def describe_observation_text(cfg: RunConfig) -> str:
    schema = cfg.env_config().schema()
    lay = schema.layout()
    lines = [f"observation schema {schema.hash} (version {lay['version']}), width {schema.width}"]
    lines.append(f"  per-VNF block ({len(lay['per_vnf'])} features) x {schema.n_vnfs} VNFs:")
    for i, name in enumerate(lay["per_vnf"]):
        lines.append(f"    [{i}] {name}")
    lines.append(f"  tail: {lay['tail']}")
    lines.append(f"  age: {lay['age_encoding']}")
    lines.append(f"  backlog: {lay['backlog_encoding']}")
    return "\n".join(lines)


def describe_text(cfg: RunConfig) -> str:
    env_cfg = cfg.env_config()
    net = build_net(cfg.agent, env_cfg)
    spec = net.spec
    lines = [describe_observation_text(cfg), ""]
    lines.append(f"action space: {env_cfg.n_vnfs} heads x {len(Action)} kinds "
                 f"({', '.join(f'{a.value}={a.name}' for a in Action)})")
    lines.append("")
    lines.append(f"network: {cfg.agent.kind} / {cfg.agent.architecture}, {spec.parameter_count()} parameters")
    for name, shape in spec.layer_shapes():
        lines.append(f"  {name:<24} {'x'.join(str(s) for s in shape)}")
    return "\n".join(lines)


def cmd_describe(args) -> int:
    print(describe_text(_config(args)))
    return EXIT_OK


def cmd_describe_observation(args) -> int:
    print(describe_observation_text(_config(args)))
    return EXIT_OK


def cmd_print_defaults(args) -> int:
    sys.stdout.write(defaults_yaml())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfrlab", description="Proactive failure recovery laboratory for stateful VNFs.")
    p.add_argument("--version", action="version", version=f"pfrlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        sp.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. run.iterations=10")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides run.master_seed)")
        if out:
            sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<run name>)")
            sp.add_argument("--deterministic", action="store_true", help="single-threaded, deterministic kernels")

    sp = sub.add_parser("simulate", help="run a baseline or checkpoint policy and log trajectories")
    common(sp)
    sp.add_argument("--policy", default="random", help="random | oracle | reactive | path to checkpoint")
    sp.add_argument("--episodes", type=int, default=50)
    sp.add_argument("--stochastic", action="store_true", help="sample actions instead of the greedy mode")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train an agent; writes checkpoints and metric CSVs")
    common(sp)
    sp.add_argument("--iterations", type=int, help="override run.iterations")
    sp.add_argument("--resume", action="store_true", help="continue from the state saved in the output directory")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    common(sp)
    sp.add_argument("checkpoint")
    sp.add_argument("--episodes", type=int, default=50)
    sp.add_argument("--robustness", type=int, metavar="SEED", help="evaluate on a fresh substrate drawn from SEED")
    sp.add_argument("--stochastic", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("describe", help="observation layout, action encoding and network shapes")
    common(sp, seed=False, out=False)
    sp.set_defaults(func=cmd_describe)

    sp = sub.add_parser("describe-observation", help="observation layout only")
    common(sp, seed=False, out=False)
    sp.set_defaults(func=cmd_describe_observation)

    sp = sub.add_parser("print-defaults", help="print the default configuration as YAML")
    sp.set_defaults(func=cmd_print_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("simulate", "train", "evaluate"):
        if args.command != "train" and getattr(args, "episodes", 1) < 1:
            print("error: --episodes must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _deterministic(args)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"  checkpoint schema: {exc.stored}\n  environment schema: {exc.expected}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; rerun with --resume to continue", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
