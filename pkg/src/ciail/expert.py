"""Expert policies and demonstration recording.

Experts are navigation policies trained with PPO on the ground-truth reward
(negative distance to the pursued target). The per-setting structure of the
demonstrations comes from target routing at rollout time: the expert pursues
its setting's intermediate waypoint until it has come within the waypoint
radius, then the true goal - the same phase rule as the shaped per-setting
reward. Recorded transitions always carry the true observations.

Training the navigator directly on the phase-switching shaped reward is a
memoryless-POMDP trap (the phase flag is not observable, and policy-gradient
runs converge to a hover orbit outside the waypoint radius); routing the
trained navigator reproduces the shaped-optimal trajectory distribution
instead.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import nn
from .demos import DemoSet, make_header
from .envs import WAYPOINT_RADIUS, EnvSpec, NavEnv
from .errors import CheckpointError, DimensionError
from .policies import CategoricalPolicy, GaussianPolicy, ValueNet
from .ppo import PPOConfig, PPOLearner
from .rollout import (
    TransitionBatch,
    collect_episodes,
    eval_returns,
    normalized_return,
    random_baseline_return,
)


def build_policy(spec: EnvSpec, hidden: tuple[int, ...],
                 rng: np.random.Generator, prefix: str = "pi."):
    if spec.discrete:
        mlp_spec = nn.MLPSpec((spec.obs_dim, *hidden, spec.n_actions),
                              hidden_activation="tanh")
        return CategoricalPolicy(nn.MLP.init(mlp_spec, rng, prefix=prefix))
    mlp_spec = nn.MLPSpec((spec.obs_dim, *hidden, 2 * spec.action_dim),
                          hidden_activation="tanh")
    return GaussianPolicy(nn.MLP.init(mlp_spec, rng, prefix=prefix))


def build_value(spec: EnvSpec, hidden: tuple[int, ...],
                rng: np.random.Generator, prefix: str = "v.") -> ValueNet:
    mlp_spec = nn.MLPSpec((spec.obs_dim, *hidden, 1), hidden_activation="tanh")
    return ValueNet(nn.MLP.init(mlp_spec, rng, prefix=prefix))


def gen_expert(spec: EnvSpec, seed: int, budget_rounds: int = 300,
               episodes_per_round: int = 10, ppo_cfg: PPOConfig | None = None,
               hidden: tuple[int, ...] = (64, 64), eval_every: int = 5,
               eval_episodes: int = 10, plateau_patience: int = 6,
               min_improvement: float = 0.01, return_threshold: float = 0.5,
               quiet: bool = False) -> tuple[object, dict]:
    """PPO on the ground-truth navigation reward until eval return plateaus.

    Returns the policy (best-eval parameters restored) and a stats dict with
    the evaluation trace.
    """
    ppo_cfg = ppo_cfg or PPOConfig()
    root = np.random.SeedSequence(seed)
    rng_init, rng_roll, rng_mb, rng_base = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    policy = build_policy(spec, hidden, rng_init)
    value = build_value(spec, hidden, rng_init)
    learner = PPOLearner(policy, value, ppo_cfg)
    r_random = random_baseline_return(spec, rng_base)

    best_norm = -math.inf
    best_params: dict | None = None
    evals: list[dict] = []
    stale_evals = 0
    rounds_run = 0
    for k in range(budget_rounds):
        rollout = collect_episodes(policy, spec, episodes_per_round, rng_roll,
                                   nav_rewards=True)
        learner.update(
            {"obs": rollout.obs, "act": rollout.act, "u": rollout.u,
             "logp": rollout.logp, "rewards": rollout.rewards,
             "done": rollout.done},
            rng_mb,
        )
        rounds_run = k + 1
        if (k + 1) % eval_every == 0 or k == budget_rounds - 1:
            rng_eval = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(1000 + k,))
            )
            rets = eval_returns(policy, spec, eval_episodes, rng_eval)
            norm = normalized_return(float(rets.mean()), r_random)
            evals.append({"round": k + 1, "return_mean": float(rets.mean()),
                          "return_std": float(rets.std()), "norm": norm})
            improved = norm > best_norm + min_improvement
            if norm > best_norm:
                best_norm = norm
                best_params = {p.name: p.val.copy() for p in policy.mlp.params}
            stale_evals = 0 if improved else stale_evals + 1
            if stale_evals >= plateau_patience:
                break
    final_norm = evals[-1]["norm"] if evals else -math.inf
    if best_norm < return_threshold:
        warnings.warn(
            f"expert for setting {spec.setting_id} plateaued below threshold "
            f"({best_norm:.3f} < {return_threshold})", stacklevel=2,
        )
    if best_params is not None:
        policy.mlp.load_arrays(best_params)
    stats = {
        "setting_id": spec.setting_id,
        "seed": seed,
        "rounds_run": rounds_run,
        "random_return": r_random,
        "best_norm": best_norm,
        "final_norm": final_norm,
        "evals": evals,
        "hidden": list(hidden),
    }
    if not quiet:
        print(f"expert setting={spec.setting_id} seed={seed} "
              f"rounds={rounds_run} best_norm={best_norm:.3f}")
    return policy, stats


def save_expert(path, policy) -> None:
    nn.save_checkpoint(path, policy.mlp.param_arrays())


def load_expert(path, spec: EnvSpec, hidden: tuple[int, ...]):
    policy = build_policy(spec, hidden, np.random.default_rng(0))
    arrays = nn.load_checkpoint(path)
    try:
        policy.mlp.load_arrays(arrays)
    except DimensionError as e:
        raise CheckpointError(f"{path}: checkpoint does not match env/net: {e}") from e
    return policy


class ExpertBehavior:
    """A navigator routed through its setting's waypoint.

    The policy is queried with a virtual observation whose target columns
    hold the waypoint until the agent has come within the waypoint radius,
    then the true goal; the recorded transitions keep true observations.
    """

    def __init__(self, policy, spec: EnvSpec):
        self.policy = policy
        self.spec = spec
        self.waypoint = spec.waypoint()

    def _virtual(self, obs: np.ndarray, hit: bool) -> np.ndarray:
        if hit:
            return obs
        v = obs.copy()
        v[2:4] = self.waypoint
        return v

    def rollout(self, rng: np.random.Generator, deterministic: bool = False):
        """One routed episode: (transitions, ground-truth return, min waypoint
        distance along the trajectory)."""
        env = NavEnv(self.spec)
        obs = env.reset(rng)
        wx, wy = self.waypoint
        hit = math.hypot(obs[0] - wx, obs[1] - wy) <= WAYPOINT_RADIUS
        min_wp = math.hypot(obs[0] - wx, obs[1] - wy)
        rows_s, rows_a, rows_n, rows_d = [], [], [], []
        gt_return = 0.0
        for _ in range(self.spec.horizon):
            virtual = self._virtual(obs, hit)
            if deterministic:
                a = self.policy.deterministic(virtual[None, :])[0]
            else:
                a = self.policy.sample(virtual[None, :], rng)[0][0]
            a = int(a) if self.spec.discrete else np.asarray(a)
            res = env.step(a)
            rows_s.append(obs)
            rows_a.append(a)
            rows_n.append(res.next_obs)
            rows_d.append(res.done)
            gt_return += float(res.reward_gt)
            obs = res.next_obs
            d_wp = math.hypot(obs[0] - wx, obs[1] - wy)
            min_wp = min(min_wp, d_wp)
            if not hit and d_wp <= WAYPOINT_RADIUS:
                hit = True
        n = len(rows_s)
        tb = TransitionBatch(
            obs=np.array(rows_s),
            act=(np.array(rows_a, dtype=np.int64) if self.spec.discrete
                 else np.array(rows_a, dtype=np.float64)),
            next_obs=np.array(rows_n),
            done=np.array(rows_d, dtype=bool),
            setting_id=np.full(n, self.spec.setting_id, dtype=np.int64),
            round_id=np.full(n, -1, dtype=np.int64),
        )
        return tb, gt_return, min_wp


def split_evenly(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def collect_demos(policies_by_setting: dict[int, object], spec_base: EnvSpec,
                  n_traj: int, seed: int,
                  expert_eval: dict | None = None) -> DemoSet:
    """Record waypoint-routed expert episodes, spread evenly over settings.

    spur_point demos are recorded with the expert-mode spurious channel.
    """
    settings = sorted(policies_by_setting)
    counts = split_evenly(n_traj, len(settings))
    root = np.random.SeedSequence(seed)
    trajectories: list[tuple[int, TransitionBatch]] = []
    demo_returns: list[float] = []
    for (setting, count), ss in zip(zip(settings, counts), root.spawn(len(settings))):
        spec = EnvSpec(
            env_id=spec_base.env_id, horizon=spec_base.horizon,
            step_size=spec_base.step_size, setting_id=setting,
            n_settings=spec_base.n_settings, spur_source="expert",
        )
        policy = policies_by_setting[setting]
        if policy.obs_dim != spec.obs_dim:
            raise CheckpointError(
                f"expert checkpoint obs_dim {policy.obs_dim} != env {spec.obs_dim}"
            )
        behavior = ExpertBehavior(policy, spec)
        rng = np.random.default_rng(ss)
        for _ in range(count):
            tb, ret, _ = behavior.rollout(rng)
            trajectories.append((setting, tb))
            demo_returns.append(ret)
    ref = {"mean": float(np.mean(demo_returns)), "std": float(np.std(demo_returns))}
    header = make_header(spec_base, seed, ref, demo_returns, expert_eval or {})
    return DemoSet(header=header, trajectories=trajectories)


def waypoint_hit_rate(policy, spec: EnvSpec, n_episodes: int, seed: int,
                      radius: float = WAYPOINT_RADIUS) -> float:
    """Fraction of routed expert episodes passing within ``radius`` of the
    setting's waypoint (trajectory inspection oracle)."""
    behavior = ExpertBehavior(policy, spec)
    rng = np.random.default_rng(seed)
    hits = 0
    for ss in rng.spawn(n_episodes):
        _, _, min_wp = behavior.rollout(ss)
        if min_wp <= radius:
            hits += 1
    return hits / n_episodes
