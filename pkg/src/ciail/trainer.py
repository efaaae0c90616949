"""The adversarial round loop: partition settings, update the discriminator,
relabel rewards, advance the policy optimizer, record metrics.

Settings come from expert sources (on-policy) or replay-round buckets
(off-policy); each setting batch pairs one class's rows with an equal-share
draw of the other class so the per-setting BCE is never single-class.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .config import Config
from .demos import DemoSet
from .discriminator import (
    AirlHead,
    GailHead,
    RegConfig,
    SettingBatch,
    disc_update,
    featurize,
    reward_from_disc,
)
from .errors import ConfigError, DegenerateSettingError
from .expert import build_policy, build_value
from .policies import CategoricalPolicy, GaussianPolicy, QNetContinuous, QNetDiscrete
from .ppo import PPOLearner
from .rollout import (
    TransitionBatch,
    collect_episodes,
    eval_returns,
    normalized_return,
    random_baseline_return,
)
from .sac import ReplayBuffer, SACLearnerContinuous, SACLearnerDiscrete

METRICS_COLUMNS = ("round", "disc_loss", "penalty", "disc_acc", "reward_mean",
                   "eval_return_mean", "eval_return_std", "stale_signal")

STALE_ACCURACY = 0.999
STALE_ROUNDS = 5


@dataclass
class RoundMetrics:
    """One adversarial round's scalars; wall time goes to a sidecar file so
    metrics.csv stays byte-identical across reruns."""

    round: int
    disc_loss: float
    penalty: float
    disc_acc: float
    reward_mean: float
    eval_return_mean: float | None
    eval_return_std: float | None
    stale_signal: int
    wall_ms: float = 0.0

    def csv_row(self) -> str:
        def fmt(x):
            return "" if x is None else repr(float(x))

        return ",".join([
            str(self.round), fmt(self.disc_loss), fmt(self.penalty),
            fmt(self.disc_acc), fmt(self.reward_mean),
            fmt(self.eval_return_mean), fmt(self.eval_return_std),
            str(self.stale_signal),
        ])


def write_metrics_csv(path, rows: list[RoundMetrics]) -> None:
    lines = [",".join(METRICS_COLUMNS)] + [r.csv_row() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_timing_csv(path, rows: list[RoundMetrics]) -> None:
    lines = ["round,wall_ms"] + [f"{r.round},{r.wall_ms:.3f}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class RawSetting:
    """One setting's transitions before featurization."""

    index: int
    expert: TransitionBatch
    policy: TransitionBatch


def partition_settings(demos: TransitionBatch, policy: TransitionBatch,
                       mode: str, rng: np.random.Generator, *,
                       n_settings: int = 4, span: int = 5,
                       current_round: int = 0) -> list[RawSetting]:
    """Assign every row to exactly one setting, with both labels present.

    expert_source: one setting per demo source; its expert rows plus an even
    share of the shuffled policy rows. replay_round: one setting per bucket
    of ``span`` recent rounds; its policy rows plus an equal-sized uniform
    draw of expert rows.
    """
    if mode == "expert_source":
        sources = np.unique(demos.setting_id)
        if sources.size == 1:
            warnings.warn(
                "single expert source: invariance regularization degenerates "
                "toward ERM with a single-setting penalty", stacklevel=2,
            )
        if len(policy) < sources.size:
            raise DegenerateSettingError(
                f"{len(policy)} policy rows cannot cover {sources.size} settings"
            )
        chunks = np.array_split(rng.permutation(len(policy)), sources.size)
        out = []
        for i, (src, chunk) in enumerate(zip(sources, chunks)):
            e_idx = np.where(demos.setting_id == src)[0]
            if e_idx.size == 0 or chunk.size == 0:
                raise DegenerateSettingError(f"setting {i} lost a label class")
            out.append(RawSetting(i, demos.take(e_idx), policy.take(chunk)))
        return out

    if mode == "replay_round":
        bucket = (current_round - policy.round_id) // span
        out = []
        for b in range(n_settings):
            p_idx = np.where(bucket == b)[0]
            if p_idx.size == 0:
                continue
            if len(demos) == 0:
                raise DegenerateSettingError("no expert rows available")
            e_idx = rng.choice(len(demos), size=p_idx.size,
                               replace=p_idx.size > len(demos))
            out.append(RawSetting(len(out), demos.take(e_idx), policy.take(p_idx)))
        if not out:
            raise DegenerateSettingError("no replay bucket had any rows")
        if len(out) == 1:
            warnings.warn(
                "single replay bucket: invariance regularization degenerates "
                "toward ERM with a single-setting penalty", stacklevel=2,
            )
        return out

    raise ConfigError(f"unknown setting mode {mode!r}")


class CiailTrainer:
    """State of one imitation run; drives the round loop."""

    def __init__(self, cfg: Config, demos: DemoSet, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.spec = cfg.env_spec()
        demos.check_matches(self.spec)
        self.demos = demos
        self.demo_tb = demos.flatten()

        if cfg["algo"] == "ppo" and cfg.setting_mode() == "replay_round":
            raise ConfigError("replay_round settings need the off-policy algo")

        root = np.random.SeedSequence(seed)
        (ss_init, ss_roll, ss_mb, ss_disc, ss_part, ss_base, ss_sac) = root.spawn(7)
        self.rng_roll = np.random.default_rng(ss_roll)
        self.rng_mb = np.random.default_rng(ss_mb)
        self.rng_disc = np.random.default_rng(ss_disc)
        self.rng_part = np.random.default_rng(ss_part)
        self.rng_sac = np.random.default_rng(ss_sac)

        rng_init = np.random.default_rng(ss_init)
        hidden_pi = tuple(cfg["policy.hidden"])
        self.policy = build_policy(self.spec, hidden_pi, rng_init)
        if cfg["algo"] == "ppo":
            value = build_value(self.spec, tuple(cfg["value.hidden"]), rng_init)
            self.learner = PPOLearner(self.policy, value, cfg.ppo_config())
            self.buffer = None
        else:
            self.buffer = ReplayBuffer(
                cfg["sac.buffer_capacity"], self.spec.obs_dim,
                act_shape=() if self.spec.discrete else (2,),
            )
            qh = tuple(cfg["value.hidden"])
            if self.spec.discrete:
                q1 = QNetDiscrete(nn.MLP.init(
                    nn.MLPSpec((self.spec.obs_dim, *qh, self.spec.n_actions)),
                    rng_init, prefix="q1."))
                q2 = QNetDiscrete(nn.MLP.init(
                    nn.MLPSpec((self.spec.obs_dim, *qh, self.spec.n_actions)),
                    rng_init, prefix="q2."))
                self.learner = SACLearnerDiscrete(self.policy, q1, q2, cfg.sac_config())
            else:
                width = self.spec.obs_dim + self.spec.action_dim
                q1 = QNetContinuous(nn.MLP.init(
                    nn.MLPSpec((width, *qh, 1)), rng_init, prefix="q1."))
                q2 = QNetContinuous(nn.MLP.init(
                    nn.MLPSpec((width, *qh, 1)), rng_init, prefix="q2."))
                self.learner = SACLearnerContinuous(self.policy, q1, q2, cfg.sac_config())

        self.head = self._build_head(rng_init)
        disc_params = [p for m in self.head.mlps for p in m.params]
        self.opt_disc = nn.AdamState.for_params(disc_params, lr=cfg["disc.lr"])

        self.r_random = random_baseline_return(self.spec, np.random.default_rng(ss_base))
        self.metrics: list[RoundMetrics] = []
        self.round = 0
        self._acc_streak = 0
        self._stale_warned = False
        self._base_lrs = None

    def _apply_cooldown(self) -> None:
        """Linearly scale all optimizer steps toward a floor over the final
        fraction of rounds; damps adversarial limit cycles before the final
        evaluation."""
        frac = self.cfg["train.cooldown_frac"]
        rounds = self.cfg["train.rounds"]
        if frac <= 0 or rounds <= 0:
            return
        opts = [self.opt_disc]
        for name in ("opt_pi", "opt_v", "opt_q1", "opt_q2"):
            if hasattr(self.learner, name):
                opts.append(getattr(self.learner, name))
        if self._base_lrs is None:
            self._base_lrs = [opt.lr for opt in opts]
        start = rounds * (1.0 - frac)
        if self.round < start:
            return
        progress = (self.round - start) / max(rounds - start, 1)
        scale = 1.0 - (1.0 - self.cfg["train.cooldown_floor"]) * progress
        for opt, base in zip(opts, self._base_lrs):
            opt.lr = base * scale

    def _build_head(self, rng: np.random.Generator):
        cfg = self.cfg
        act_width = self.spec.n_actions if self.spec.discrete else self.spec.action_dim
        hidden = tuple(cfg["disc.hidden"])
        activation = cfg["disc.activation"]
        if cfg["head"] == "gail":
            width = GailHead.in_width(self.spec.obs_dim, act_width,
                                      cfg["disc.input_mode"])
            mlp = nn.MLP.init(
                nn.MLPSpec((width, *hidden, 1), hidden_activation=activation),
                rng, prefix="d.")
            return GailHead(mlp, input_mode=cfg["disc.input_mode"])
        if cfg["disc.input_mode"] != "sas":
            raise ConfigError("the structured head always conditions on (s, a, s')")
        g = nn.MLP.init(
            nn.MLPSpec((self.spec.obs_dim + act_width, *hidden, 1),
                       hidden_activation=activation), rng, prefix="g.")
        h = nn.MLP.init(
            nn.MLPSpec((self.spec.obs_dim, *hidden, 1),
                       hidden_activation=activation), rng, prefix="h.")
        return AirlHead(g, h, cfg.discount())

    # ----- round loop --------------------------------------------------

    def _log_pi(self, tb: TransitionBatch) -> np.ndarray | None:
        if not isinstance(self.head, AirlHead):
            return None
        return self.policy.log_prob_of(tb.obs, tb.act)

    def _setting_batches(self, raw: list[RawSetting]) -> list[SettingBatch]:
        n_act = self.spec.n_actions if self.spec.discrete else 0
        batches = []
        for rs in raw:
            tb = TransitionBatch.concat([rs.expert, rs.policy])
            y = np.concatenate([np.ones(len(rs.expert)), np.zeros(len(rs.policy))])
            batches.append(SettingBatch(
                setting_id=rs.index,
                inputs=featurize(tb, n_act),
                y=y,
                log_pi=self._log_pi(tb),
            ))
        return batches

    def _partition(self, policy_tb: TransitionBatch) -> list[RawSetting]:
        cfg = self.cfg
        for attempt in range(3):
            try:
                return partition_settings(
                    self.demo_tb, policy_tb, cfg.setting_mode(), self.rng_part,
                    n_settings=cfg["env.n_settings"],
                    span=cfg["sac.bucket_span"],
                    current_round=self.round,
                )
            except DegenerateSettingError:
                if attempt == 2:
                    raise
        raise AssertionError("unreachable")

    def _disc_phase(self, policy_tb: TransitionBatch):
        cfg = self.cfg
        reg = cfg.reg_config()
        lam_scale = 1.0
        if reg.kind == "irm" and cfg["disc.warmup_rounds"] > 0:
            lam_scale = min(1.0, (self.round + 1) / cfg["disc.warmup_rounds"])
        batches = self._setting_batches(self._partition(policy_tb))
        return disc_update(self.head, batches, reg, self.opt_disc,
                           self.rng_disc, lam_scale=lam_scale)

    def _relabel(self, tb: TransitionBatch) -> np.ndarray:
        n_act = self.spec.n_actions if self.spec.discrete else 0
        return reward_from_disc(
            self.head, featurize(tb, n_act), self._log_pi(tb),
            mode=self.cfg.reward_mode(),
        )

    def run_round(self) -> RoundMetrics:
        cfg = self.cfg
        k = self.round
        t0 = time.perf_counter()
        self._apply_cooldown()
        if cfg["algo"] == "ppo":
            rollout = collect_episodes(
                self.policy, self.spec, cfg["train.episodes_per_round"], self.rng_roll
            )
            policy_tb = rollout.transition_batch(self.spec.setting_id, k)
            res = self._disc_phase(policy_tb)
            rewards = self._relabel(policy_tb)
            self.learner.update(
                {"obs": rollout.obs, "act": rollout.act, "u": rollout.u,
                 "logp": rollout.logp, "rewards": rewards, "done": rollout.done},
                self.rng_mb,
            )
            reward_mean = float(rewards.mean())
        else:
            rollout = collect_episodes(
                self.policy, self.spec, cfg["sac.episodes_per_round"], self.rng_roll
            )
            self.buffer.push(rollout.transition_batch(self.spec.setting_id, k))
            window = (max(0, k - cfg["env.n_settings"] * cfg["sac.bucket_span"] + 1), k)
            disc_tb = self.buffer.sample(cfg["sac.disc_batch"], self.rng_sac,
                                         rounds=window)
            res = self._disc_phase(disc_tb)
            reward_sum, reward_n = 0.0, 0
            for _ in range(cfg["sac.grad_steps"]):
                batch = self.buffer.sample(cfg["sac.batch"], self.rng_sac)
                rewards = self._relabel(batch)
                if self.spec.discrete:
                    self.learner.update(batch, rewards)
                else:
                    self.learner.update(batch, rewards, self.rng_sac)
                reward_sum += float(rewards.sum())
                reward_n += len(rewards)
            reward_mean = reward_sum / max(reward_n, 1)

        eval_mean = eval_std = None
        if (k + 1) % cfg["train.eval_every"] == 0 or k + 1 == cfg["train.rounds"]:
            eval_mean, eval_std = self.evaluate(k)

        self._acc_streak = self._acc_streak + 1 if res.accuracy >= STALE_ACCURACY else 0
        stale = int(self._acc_streak >= STALE_ROUNDS)
        if stale and not self._stale_warned:
            warnings.warn(
                f"discriminator accuracy >= {STALE_ACCURACY} for "
                f"{STALE_ROUNDS} rounds: stale training signal", stacklevel=2,
            )
            self._stale_warned = True

        row = RoundMetrics(
            round=k, disc_loss=res.loss, penalty=res.penalty,
            disc_acc=res.accuracy, reward_mean=reward_mean,
            eval_return_mean=eval_mean, eval_return_std=eval_std,
            stale_signal=stale, wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        self.metrics.append(row)
        self.round += 1
        return row

    def evaluate(self, round_idx: int) -> tuple[float, float]:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(2000 + round_idx,))
        )
        rets = eval_returns(self.policy, self.spec,
                            self.cfg["train.eval_episodes"], rng)
        return float(rets.mean()), float(rets.std())

    # ----- full runs ----------------------------------------------------

    def train(self, out_dir=None, quiet: bool = True):
        for _ in range(self.cfg["train.rounds"]):
            row = self.run_round()
            if not quiet and (row.round % 10 == 0 or row.eval_return_mean is not None):
                ev = "" if row.eval_return_mean is None else \
                    f" eval={row.eval_return_mean:.3f}"
                print(f"round {row.round}: disc_loss={row.disc_loss:.4f} "
                      f"acc={row.disc_acc:.3f}{ev}")
        if out_dir is not None:
            self.write_outputs(out_dir)
        return self.policy, self.metrics

    def final_eval_return(self) -> float | None:
        for row in reversed(self.metrics):
            if row.eval_return_mean is not None:
                return row.eval_return_mean
        return None

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        arrays.update(self.policy.mlp.param_arrays())
        if isinstance(self.learner, PPOLearner):
            arrays.update(self.learner.value_net.mlp.param_arrays())
        else:
            arrays.update(self.learner.q1.mlp.param_arrays())
            arrays.update(self.learner.q2.mlp.param_arrays())
        for m in self.head.mlps:
            arrays.update(m.param_arrays())
        return arrays

    def run_info(self) -> dict:
        final = self.final_eval_return()
        return {
            "seed": self.seed,
            "algo": self.cfg["algo"],
            "head": self.cfg["head"],
            "reg": self.cfg["disc.reg"],
            "lambda_irm": self.cfg["disc.lambda_irm"],
            "lambda_gp": self.cfg["disc.lambda_gp"],
            "n_updates": self.cfg["disc.n_updates"],
            "rounds": self.cfg["train.rounds"],
            "random_return": self.r_random,
            "expert_reference": self.demos.header.get("expert_reference"),
            "final_eval_return": final,
            "final_eval_norm": (None if final is None
                                else normalized_return(final, self.r_random)),
            "net_widths": {
                "policy": list(self.cfg["policy.hidden"]),
                "value": list(self.cfg["value.hidden"]),
                "disc": list(self.cfg["disc.hidden"]),
            },
            "stale_rounds": sum(r.stale_signal for r in self.metrics),
        }

    def write_outputs(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", self.metrics)
        write_timing_csv(out / "timing.csv", self.metrics)
        self.cfg.save(out / "config.resolved")
        nn.save_checkpoint(out / "checkpoint.bin", self.checkpoint_arrays())
        with open(out / "run_info.json", "w", encoding="utf-8") as fh:
            json.dump(self.run_info(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def train(cfg: Config, demos: DemoSet, seed: int, out_dir=None, quiet: bool = True):
    """Algorithm entry point: one full imitation run."""
    trainer = CiailTrainer(cfg, demos, seed)
    return trainer.train(out_dir=out_dir, quiet=quiet)
