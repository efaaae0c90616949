"""Trajectory collection and evaluation on lockstep environment batches.

Fixed-horizon episodes let a batch of environments advance in sync, so
policy forwards are batched across episodes. Each environment owns its own
rng stream; action sampling uses a separate stream, which keeps env state
streams independent of the policy kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec, NavEnv, Transition
from .policies import CategoricalPolicy, GaussianPolicy


@dataclass
class Rollout:
    """Flattened batch of complete episodes (row-major: episode, then step)."""

    obs: np.ndarray        # (n, obs_dim)
    act: np.ndarray        # (n,) int or (n, action_dim)
    next_obs: np.ndarray   # (n, obs_dim)
    done: np.ndarray       # (n,) bool
    logp: np.ndarray       # (n,)
    u: np.ndarray | None   # (n, action_dim) pre-squash draws, continuous only
    rewards: np.ndarray | None  # shaped expert rewards when requested
    horizon: int
    n_episodes: int

    def __len__(self) -> int:
        return self.obs.shape[0]

    def transition_batch(self, setting_id: int, round_id: int) -> "TransitionBatch":
        n = len(self)
        return TransitionBatch(
            obs=self.obs,
            act=self.act,
            next_obs=self.next_obs,
            done=self.done,
            setting_id=np.full(n, setting_id, dtype=np.int64),
            round_id=np.full(n, round_id, dtype=np.int64),
        )


@dataclass
class TransitionBatch:
    """Columnar transitions; the common currency between buffers, demos and
    the discriminator."""

    obs: np.ndarray
    act: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    setting_id: np.ndarray
    round_id: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            obs=self.obs[idx],
            act=self.act[idx],
            next_obs=self.next_obs[idx],
            done=self.done[idx],
            setting_id=self.setting_id[idx],
            round_id=self.round_id[idx],
        )

    @staticmethod
    def concat(parts: list["TransitionBatch"]) -> "TransitionBatch":
        return TransitionBatch(
            obs=np.concatenate([p.obs for p in parts]),
            act=np.concatenate([p.act for p in parts]),
            next_obs=np.concatenate([p.next_obs for p in parts]),
            done=np.concatenate([p.done for p in parts]),
            setting_id=np.concatenate([p.setting_id for p in parts]),
            round_id=np.concatenate([p.round_id for p in parts]),
        )

    @staticmethod
    def from_transitions(transitions: list[Transition]) -> "TransitionBatch":
        return TransitionBatch(
            obs=np.array([t.s for t in transitions]),
            act=np.array([t.a for t in transitions]),
            next_obs=np.array([t.s_next for t in transitions]),
            done=np.array([t.done for t in transitions], dtype=bool),
            setting_id=np.array([t.setting_id for t in transitions], dtype=np.int64),
            round_id=np.array([t.round_id for t in transitions], dtype=np.int64),
        )


def _sample_actions(policy, obs: np.ndarray, rng: np.random.Generator,
                    deterministic: bool):
    if policy is None:  # uniform-random baseline
        n = obs.shape[0]
        return rng.integers(0, 4, size=n), np.full(n, -np.log(4.0)), None
    if isinstance(policy, CategoricalPolicy):
        if deterministic:
            a = policy.deterministic(obs)
            return a, policy.log_prob_of(obs, a), None
        a, logp = policy.sample(obs, rng)
        return a, logp, None
    if isinstance(policy, GaussianPolicy):
        if deterministic:
            a = policy.deterministic(obs)
            return a, np.zeros(obs.shape[0]), None
        a, logp, u = policy.sample(obs, rng)
        return a, logp, u
    if hasattr(policy, "sample"):  # scripted/baseline policies
        out = policy.sample(obs, rng)
        return (*out, None) if len(out) == 2 else out
    raise TypeError(f"unsupported policy {type(policy)!r}")


def collect_episodes(policy, spec: EnvSpec, n_episodes: int,
                     rng: np.random.Generator, shaped_rewards: bool = False,
                     nav_rewards: bool = False,
                     deterministic: bool = False) -> Rollout:
    """Roll ``n_episodes`` complete episodes in lockstep.

    ``shaped_rewards`` records the per-setting waypoint-phase reward;
    ``nav_rewards`` records the plain navigation reward -dist(agent', goal)
    (numerically the ground-truth reward, recomputed from geometry so the
    tainted evaluation value never enters a learner). Plain rollouts carry
    no reward at all (imitation rewards are relabeled later).
    """
    envs_ = [NavEnv(spec) for _ in range(n_episodes)]
    env_rngs = rng.spawn(n_episodes)
    act_rng = rng.spawn(1)[0]
    cur = np.stack([env.reset(r) for env, r in zip(envs_, env_rngs)])
    T = spec.horizon
    obs_steps, act_steps, next_steps, done_steps = [], [], [], []
    logp_steps, u_steps, rew_steps = [], [], []
    for _ in range(T):
        actions, logp, u = _sample_actions(policy, cur, act_rng, deterministic)
        results = [env.step(a) for env, a in zip(envs_, actions)]
        nxt = np.stack([r.next_obs for r in results])
        obs_steps.append(cur)
        act_steps.append(np.asarray(actions))
        next_steps.append(nxt)
        done_steps.append(np.array([r.done for r in results]))
        logp_steps.append(logp)
        if u is not None:
            u_steps.append(u)
        if shaped_rewards:
            rew_steps.append(np.array([env.shaped_expert_reward() for env in envs_]))
        elif nav_rewards:
            rew_steps.append(-np.linalg.norm(nxt[:, :2] - nxt[:, 2:4], axis=1))
        cur = nxt
    # stack as (T, n_ep, ...) then flatten episode-major
    def flat(steps, extra=()):
        arr = np.stack(steps)  # (T, n_ep, ...)
        return arr.transpose(1, 0, *range(2, arr.ndim)).reshape(n_episodes * T, *extra)

    obs_dim = cur.shape[1]
    act0 = act_steps[0]
    return Rollout(
        obs=flat(obs_steps, (obs_dim,)),
        act=flat(act_steps) if act0.ndim == 1 else flat(act_steps, (act0.shape[1],)),
        next_obs=flat(next_steps, (obs_dim,)),
        done=flat(done_steps).astype(bool),
        logp=flat(logp_steps),
        u=flat(u_steps, (u_steps[0].shape[1],)) if u_steps else None,
        rewards=flat(rew_steps) if rew_steps else None,
        horizon=T,
        n_episodes=n_episodes,
    )


def eval_returns(policy, spec: EnvSpec, n_episodes: int,
                 rng: np.random.Generator, deterministic: bool = True) -> np.ndarray:
    """Ground-truth episode returns; evaluation only, never fed to learners."""
    envs_ = [NavEnv(spec) for _ in range(n_episodes)]
    env_rngs = rng.spawn(n_episodes)
    act_rng = rng.spawn(1)[0]
    cur = np.stack([env.reset(r) for env, r in zip(envs_, env_rngs)])
    totals = np.zeros(n_episodes)
    for _ in range(spec.horizon):
        actions, _, _ = _sample_actions(policy, cur, act_rng, deterministic)
        results = [env.step(a) for env, a in zip(envs_, actions)]
        totals += np.array([float(r.reward_gt) for r in results])
        cur = np.stack([r.next_obs for r in results])
    return totals


def random_baseline_return(spec: EnvSpec, rng: np.random.Generator,
                           n_episodes: int = 50) -> float:
    """Mean ground-truth return of a uniform-random policy (normalization anchor)."""
    if spec.discrete:
        return float(eval_returns(None, spec, n_episodes, rng, deterministic=False).mean())
    # continuous: uniform actions in [-1, 1]^2
    envs_ = [NavEnv(spec) for _ in range(n_episodes)]
    env_rngs = rng.spawn(n_episodes)
    act_rng = rng.spawn(1)[0]
    for env, r in zip(envs_, env_rngs):
        env.reset(r)
    totals = np.zeros(n_episodes)
    for _ in range(spec.horizon):
        actions = act_rng.uniform(-1, 1, size=(n_episodes, 2))
        totals += np.array([float(env.step(a).reward_gt) for env, a in zip(envs_, actions)])
    return float(totals.mean())


def normalized_return(mean_return: float, random_return: float) -> float:
    """Map raw ground-truth returns onto a scale where the random baseline is 0
    and the unreachable optimum (zero distance everywhere) is 1."""
    return 1.0 - mean_return / random_return
