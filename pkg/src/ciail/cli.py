"""Command-line entry points.

Subcommands: train-expert, collect-demos, imitate, sweep, evaluate, report.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import Config, load_config
from .demos import load_demos, save_demos
from .errors import CiailError, ConfigError
from .expert import collect_demos, gen_expert, load_expert, save_expert
from .report import report_runs, report_summary
from .rollout import eval_returns, normalized_return, random_baseline_return
from .sweep import run_seeds, sweep
from .trainer import CiailTrainer


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config.default()
    overrides = {}
    if getattr(args, "env", None):
        overrides["env.id"] = args.env
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return cfg.with_overrides(overrides) if overrides else cfg


def _expert_path(out: Path, setting: int) -> Path:
    return out / f"expert_e{setting}.bin"


def cmd_train_expert(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = (range(cfg["env.n_settings"]) if args.setting is None
                else [args.setting])
    for e in settings:
        spec = cfg.env_spec(setting_id=e, spur_source="expert")
        policy, stats = gen_expert(
            spec, args.seed, budget_rounds=cfg["expert.rounds"],
            episodes_per_round=cfg["expert.episodes_per_round"],
            ppo_cfg=cfg.expert_ppo_config(), hidden=tuple(cfg["policy.hidden"]),
            eval_every=cfg["expert.eval_every"],
            eval_episodes=cfg["expert.eval_episodes"],
            plateau_patience=cfg["expert.plateau_patience"],
            min_improvement=cfg["expert.min_improvement"],
        )
        save_expert(_expert_path(out, e), policy)
        with open(out / f"expert_e{e}.json", "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
    cfg.save(out / "config.resolved")
    return 0


def cmd_collect_demos(args) -> int:
    cfg = _load_cfg(args)
    experts_dir = Path(args.experts)
    spec_base = cfg.env_spec()
    policies = {}
    expert_eval = {}
    for e in range(cfg["env.n_settings"]):
        path = _expert_path(experts_dir, e)
        if not path.exists():
            raise ConfigError(f"missing expert checkpoint {path}")
        spec = cfg.env_spec(setting_id=e, spur_source="expert")
        policies[e] = load_expert(path, spec, tuple(cfg["policy.hidden"]))
        stats_path = experts_dir / f"expert_e{e}.json"
        if stats_path.exists():
            stats = json.loads(stats_path.read_text(encoding="utf-8"))
            expert_eval[str(e)] = {
                "best_norm": stats.get("best_norm"),
                "final_return": (stats["evals"][-1]["return_mean"]
                                 if stats.get("evals") else None),
                "final_return_std": (stats["evals"][-1]["return_std"]
                                     if stats.get("evals") else None),
            }
    n_traj = args.n_traj if args.n_traj is not None else cfg["demo.n_traj"]
    demos = collect_demos(policies, spec_base, n_traj, args.seed,
                          expert_eval=expert_eval)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_demos(out, demos)
    ref = demos.header["expert_reference"]
    print(f"wrote {out}: {len(demos.trajectories)} trajectories, "
          f"expert reference {ref['mean']:.3f}±{ref['std']:.3f}")
    return 0


def cmd_imitate(args) -> int:
    cfg = _load_cfg(args)
    demos = load_demos(args.demos)
    out = Path(args.out)
    seeds = [args.seed] if args.seed is not None else list(cfg["seeds"])
    for seed in seeds:
        trainer = CiailTrainer(cfg, demos, seed)
        trainer.train(out_dir=out / f"seed_{seed}", quiet=args.quiet)
        info = trainer.run_info()
        final = info["final_eval_norm"]
        print(f"seed {seed}: final normalized return "
              f"{'n/a' if final is None else f'{final:.4f}'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    demos = load_demos(args.demos)
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else list(cfg["seeds"]))
    cells = sweep(cfg, demos, seeds, args.out, quiet=args.quiet)
    failed = [k for k, v in cells.items() if v.get("failed")]
    print(f"sweep complete: {len(cells) - len(failed)}/{len(cells)} cells ok; "
          f"summary at {Path(args.out) / 'summary.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.env_spec()
    arrays = nn.load_checkpoint(args.checkpoint)
    pi_arrays = {k: v for k, v in arrays.items() if k.startswith("pi.")}
    if not pi_arrays:
        raise ConfigError(f"{args.checkpoint}: no policy parameters found")
    from .expert import build_policy

    policy = build_policy(spec, tuple(cfg["policy.hidden"]),
                          np.random.default_rng(0))
    policy.mlp.load_arrays(pi_arrays)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    rets = eval_returns(policy, spec, args.episodes, rng)
    r_rand = random_baseline_return(spec, np.random.default_rng(
        np.random.SeedSequence(entropy=args.seed, spawn_key=(1,))))
    norm = normalized_return(float(rets.mean()), r_rand)
    print(f"ground-truth return: {rets.mean():.4f}±{rets.std():.4f} "
          f"over {args.episodes} episodes (normalized {norm:.4f})")
    return 0


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.inputs]
    texts = []
    for path in paths:
        first = path.read_text(encoding="utf-8").splitlines()[:1]
        if first and first[0].startswith("n_updates,"):
            texts.append(report_summary(path, expert_reference=args.expert_ref))
        else:
            texts.append(report_runs([path], out_dir=args.out,
                                     expert_reference=args.expert_ref))
    text = "\n".join(texts)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ciail",
        description="Causally invariant adversarial imitation learning lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=str, default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--env", type=str, default=None,
                       choices=["move_point", "point_mass", "spur_point"])
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        if out_required:
            p.add_argument("--out", type=str, required=True)

    p = sub.add_parser("train-expert", help="train expert policies on the "
                                            "shaped per-setting reward")
    common(p)
    p.add_argument("--setting", type=int, default=None,
                   help="single setting index (default: all)")
    p.set_defaults(func=cmd_train_expert, seed=0)

    p = sub.add_parser("collect-demos", help="record expert demonstrations")
    common(p)
    p.add_argument("--experts", type=str, required=True,
                   help="directory with expert_e<k>.bin checkpoints")
    p.add_argument("--n-traj", type=int, default=None)
    p.set_defaults(func=cmd_collect_demos, seed=0)

    p = sub.add_parser("imitate", help="run adversarial imitation training")
    common(p)
    p.add_argument("--demos", type=str, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_imitate)

    p = sub.add_parser("sweep", help="regularization-strength x update-count grid")
    common(p)
    p.add_argument("--demos", type=str, required=True)
    p.add_argument("--seeds", type=str, default=None, help="comma-separated")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="evaluate a policy checkpoint")
    common(p, out_required=False)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.set_defaults(func=cmd_evaluate, seed=0)

    p = sub.add_parser("report", help="render tables and learning curves")
    p.add_argument("inputs", nargs="+", help="metrics.csv or summary.csv files")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--expert-ref", type=str, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command in (
            "train-expert", "collect-demos", "evaluate"):
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except CiailError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
