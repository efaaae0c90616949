"""Soft actor-critic (discrete and continuous) with a round-tagged replay buffer.

The discrete variant takes exact expectations over the action set instead of
sampling; the continuous variant uses single-sample reparameterized draws.
Twin Q networks with polyak-averaged targets throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ContractError, EmptyBucketError
from .policies import (
    CategoricalPolicy,
    GaussianPolicy,
    QNetContinuous,
    QNetDiscrete,
    polyak_update,
)
from .ppo import check_rewards
from .rollout import TransitionBatch


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.99
    alpha: float = 0.05
    tau: float = 0.005
    batch: int = 256
    target_period: int = 1
    lr: float = 3e-4

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


class ReplayBuffer:
    """Ring buffer of transitions tagged with their collection round."""

    def __init__(self, capacity: int, obs_dim: int, act_shape: tuple = ()):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, *act_shape), dtype=np.int64 if not act_shape else np.float64)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.setting_id = np.zeros(capacity, dtype=np.int64)
        self.round_id = np.zeros(capacity, dtype=np.int64)
        self._pos = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, batch: TransitionBatch) -> None:
        n = len(batch)
        for i in range(n):
            j = self._pos
            self.obs[j] = batch.obs[i]
            self.act[j] = batch.act[i]
            self.next_obs[j] = batch.next_obs[i]
            self.done[j] = batch.done[i]
            self.setting_id[j] = batch.setting_id[i]
            self.round_id[j] = batch.round_id[i]
            self._pos = (self._pos + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def _valid_idx(self) -> np.ndarray:
        return np.arange(self._size)

    def rounds_present(self) -> np.ndarray:
        return np.unique(self.round_id[: self._size])

    def sample(self, batch_size: int, rng: np.random.Generator,
               rounds: tuple[int, int] | None = None) -> TransitionBatch:
        """Uniform sample; ``rounds=(lo, hi)`` restricts to that inclusive
        round-id bucket."""
        idx = self._valid_idx()
        if rounds is not None:
            lo, hi = rounds
            mask = (self.round_id[idx] >= lo) & (self.round_id[idx] <= hi)
            idx = idx[mask]
            if idx.size == 0:
                raise EmptyBucketError(f"no transitions with round_id in [{lo}, {hi}]")
        if idx.size == 0:
            raise EmptyBucketError("replay buffer is empty")
        pick = idx[rng.integers(0, idx.size, size=batch_size)]
        return self.take(pick)

    def take(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            obs=self.obs[idx].copy(),
            act=self.act[idx].copy(),
            next_obs=self.next_obs[idx].copy(),
            done=self.done[idx].copy(),
            setting_id=self.setting_id[idx].copy(),
            round_id=self.round_id[idx].copy(),
        )


class SACLearnerDiscrete:
    """Twin-Q soft actor-critic with exact action expectations."""

    def __init__(self, policy: CategoricalPolicy, q1: QNetDiscrete,
                 q2: QNetDiscrete, cfg: SACConfig):
        self.policy = policy
        self.q1, self.q2 = q1, q2
        self.tq1, self.tq2 = q1.mlp.copy(), q2.mlp.copy()
        self.cfg = cfg
        self.opt_pi = nn.AdamState.for_params(policy.mlp.params, lr=cfg.lr)
        self.opt_q1 = nn.AdamState.for_params(q1.mlp.params, lr=cfg.lr)
        self.opt_q2 = nn.AdamState.for_params(q2.mlp.params, lr=cfg.lr)
        self._updates = 0

    def q_targets(self, batch: TransitionBatch, rewards: np.ndarray) -> np.ndarray:
        """y = r + gamma (1-done) E_a~pi [min Q_target - alpha log pi]."""
        cfg = self.cfg
        rewards = check_rewards(rewards)
        logits = self.policy.logits(batch.next_obs)
        m = logits.max(axis=1, keepdims=True)
        logp = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        probs = np.exp(logp)
        x_next = nn.as_node(batch.next_obs)
        qmin = np.minimum(self.tq1.apply(x_next).val, self.tq2.apply(x_next).val)
        v_next = (probs * (qmin - cfg.alpha * logp)).sum(axis=1)
        return rewards + cfg.gamma * (~batch.done) * v_next

    def update(self, batch: TransitionBatch, rewards: np.ndarray) -> dict:
        cfg = self.cfg
        y = self.q_targets(batch, rewards)
        x = nn.as_node(batch.obs)
        act = np.asarray(batch.act, dtype=np.intp)
        n = len(batch)

        # critic regression toward the soft target
        q_losses = []
        for qnet, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            qa = nn.reshape(nn.gather_cols(qnet.values_node(x), act), (n,))
            loss = nn.mean_(nn.square(nn.sub(qa, y)))
            tape = nn.make_tape(loss, [qnet.mlp], [x])
            nn.adam_step(opt, qnet.mlp.params, nn.backward(tape).params)
            q_losses.append(float(loss.val))

        # actor: minimize E_a~pi [alpha log pi - min Q] with Q held fixed
        qmin_fixed = np.minimum(self.q1.values(batch.obs), self.q2.values(batch.obs))
        logp_all = self.policy.log_probs_node(x)
        probs = nn.exp(logp_all)
        inner = nn.sub(nn.mul(logp_all, cfg.alpha), qmin_fixed)
        pi_loss = nn.mean_(nn.sum_(nn.mul(probs, inner), axis=1))
        tape = nn.make_tape(pi_loss, [self.policy.mlp], [x])
        nn.adam_step(self.opt_pi, self.policy.mlp.params, nn.backward(tape).params)

        self._updates += 1
        if self._updates % cfg.target_period == 0:
            polyak_update(self.tq1, self.q1.mlp, cfg.tau)
            polyak_update(self.tq2, self.q2.mlp, cfg.tau)
        return {"q1_loss": q_losses[0], "q2_loss": q_losses[1],
                "pi_loss": float(pi_loss.val)}


class SACLearnerContinuous:
    """Reparameterized single-sample SAC for the point-mass env."""

    def __init__(self, policy: GaussianPolicy, q1: QNetContinuous,
                 q2: QNetContinuous, cfg: SACConfig):
        self.policy = policy
        self.q1, self.q2 = q1, q2
        self.tq1, self.tq2 = q1.mlp.copy(), q2.mlp.copy()
        self.cfg = cfg
        self.opt_pi = nn.AdamState.for_params(policy.mlp.params, lr=cfg.lr)
        self.opt_q1 = nn.AdamState.for_params(q1.mlp.params, lr=cfg.lr)
        self.opt_q2 = nn.AdamState.for_params(q2.mlp.params, lr=cfg.lr)
        self._updates = 0

    def q_targets(self, batch: TransitionBatch, rewards: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        rewards = check_rewards(rewards)
        a_next, logp_next, _ = self.policy.sample(batch.next_obs, rng)
        qmin = np.minimum(
            QNetContinuous(self.tq1).values(batch.next_obs, a_next),
            QNetContinuous(self.tq2).values(batch.next_obs, a_next),
        )
        return rewards + cfg.gamma * (~batch.done) * (qmin - cfg.alpha * logp_next)

    def _policy_nodes(self, x: nn.Node, eps: np.ndarray):
        mean, log_std = self.policy.mean_log_std_node(x)
        u = nn.add(mean, nn.mul(nn.exp(log_std), eps))
        a = nn.tanh(u)
        std = nn.exp(log_std)
        zscore = nn.div(nn.sub(u, mean), std)
        gauss = nn.sub(nn.mul(nn.add(nn.square(zscore), np.log(2 * np.pi)), -0.5), log_std)
        squash = nn.add(nn.sub(1.0, nn.square(a)), 1e-9)
        logp = nn.sum_(nn.sub(gauss, nn.log(squash)), axis=1)
        return a, logp

    def update(self, batch: TransitionBatch, rewards: np.ndarray,
               rng: np.random.Generator) -> dict:
        cfg = self.cfg
        y = self.q_targets(batch, rewards, rng)
        x = nn.as_node(batch.obs)
        a_const = nn.as_node(np.asarray(batch.act, dtype=np.float64))
        n = len(batch)

        q_losses = []
        for qnet, opt in ((self.q1, self.opt_q1), (self.q2, self.opt_q2)):
            q = nn.reshape(qnet.values_node(x, a_const), (n,))
            loss = nn.mean_(nn.square(nn.sub(q, y)))
            tape = nn.make_tape(loss, [qnet.mlp], [x])
            nn.adam_step(opt, qnet.mlp.params, nn.backward(tape).params)
            q_losses.append(float(loss.val))

        eps = rng.standard_normal((n, self.policy.action_dim))
        a_pi, logp_pi = self._policy_nodes(x, eps)
        q_pi = nn.minimum(
            nn.reshape(self.q1.values_node(x, a_pi), (n,)),
            nn.reshape(self.q2.values_node(x, a_pi), (n,)),
        )
        pi_loss = nn.mean_(nn.sub(nn.mul(logp_pi, cfg.alpha), q_pi))
        tape = nn.make_tape(pi_loss, [self.policy.mlp], [x])
        nn.adam_step(self.opt_pi, self.policy.mlp.params, nn.backward(tape).params)

        self._updates += 1
        if self._updates % cfg.target_period == 0:
            polyak_update(self.tq1, self.q1.mlp, cfg.tau)
            polyak_update(self.tq2, self.q2.mlp, cfg.tau)
        return {"q1_loss": q_losses[0], "q2_loss": q_losses[1],
                "pi_loss": float(pi_loss.val)}
