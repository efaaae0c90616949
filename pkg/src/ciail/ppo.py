"""Generalized advantage estimation and the clipped-surrogate policy update."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .envs import GroundTruthReward
from .errors import DimensionError, GroundTruthLeakError
from .policies import CategoricalPolicy, GaussianPolicy, ValueNet


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch: int = 256
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    lr: float = 3e-4
    kl_target: float = 0.01

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


def check_rewards(rewards) -> np.ndarray:
    """Reject evaluation-only ground-truth rewards at the optimizer boundary."""
    if isinstance(rewards, (list, tuple)):
        for r in rewards:
            if isinstance(r, GroundTruthReward):
                raise GroundTruthLeakError(
                    "ground-truth reward reached an optimizer; use the "
                    "discriminator-derived or shaped training reward"
                )
    if isinstance(rewards, np.ndarray) and rewards.dtype == object:
        for r in rewards.ravel():
            if isinstance(r, GroundTruthReward):
                raise GroundTruthLeakError("ground-truth reward reached an optimizer")
    return np.asarray(rewards, dtype=np.float64)


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float):
    """GAE advantages and returns.

    ``values`` must carry one bootstrap entry beyond the rewards; ``dones``
    masks the bootstrap at terminal steps.
    """
    rewards = check_rewards(rewards)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if len(dones) != n or len(values) != n + 1:
        raise DimensionError(
            f"compute_gae: rewards {n}, dones {len(dones)}, values {len(values)} "
            "(need one bootstrap value)"
        )
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        mask = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * mask - values[t]
        last = delta + gamma * gae_lambda * mask * last
        adv[t] = last
    return adv, adv + values[:-1]


class PPOLearner:
    """Actor-critic pair updated by the clipped surrogate objective."""

    def __init__(self, policy, value_net: ValueNet, cfg: PPOConfig):
        self.policy = policy
        self.value_net = value_net
        self.cfg = cfg
        self.opt_pi = nn.AdamState.for_params(policy.mlp.params, lr=cfg.lr)
        self.opt_v = nn.AdamState.for_params(value_net.mlp.params, lr=cfg.lr)

    def _log_prob_entropy_nodes(self, x: nn.Node, batch: dict):
        if isinstance(self.policy, CategoricalPolicy):
            logp_all = self.policy.log_probs_node(x)
            logp = nn.reshape(
                nn.gather_cols(logp_all, batch["act"]), (x.val.shape[0],)
            )
            probs = nn.exp(logp_all)
            ent = nn.mean_(nn.neg(nn.sum_(nn.mul(probs, logp_all), axis=1)))
            return logp, ent
        if isinstance(self.policy, GaussianPolicy):
            logp = self.policy.log_prob_node(x, batch["u"])
            # single-sample entropy estimate at the stored draws
            ent = nn.mean_(nn.neg(logp))
            return logp, ent
        raise TypeError(f"unsupported policy {type(self.policy)!r}")

    def update(self, rollout_batch: dict, rng: np.random.Generator) -> dict:
        """Run ``epochs`` x minibatch Adam steps on the PPO objective.

        ``rollout_batch`` needs obs, act (and u for continuous), logp_old,
        rewards, done. Advantages are normalized per batch before use.
        """
        cfg = self.cfg
        obs = np.asarray(rollout_batch["obs"], dtype=np.float64)
        rewards = check_rewards(rollout_batch["rewards"])
        dones = np.asarray(rollout_batch["done"], dtype=bool)
        logp_old = np.asarray(rollout_batch["logp"], dtype=np.float64)
        n = obs.shape[0]

        values = self.value_net.values(obs)
        values_ext = np.append(values, 0.0)  # fixed-horizon episodes terminate
        adv, rets = compute_gae(rewards, values_ext, dones, cfg.gamma, cfg.gae_lambda)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                 "kl": 0.0, "early_stop": False, "epochs_run": 0}
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = order[start:start + cfg.minibatch]
                mb = {
                    "obs": obs[idx],
                    "act": rollout_batch["act"][idx],
                    "u": None if rollout_batch.get("u") is None else rollout_batch["u"][idx],
                    "adv": adv[idx],
                    "ret": rets[idx],
                    "logp_old": logp_old[idx],
                }
                stats_mb = self._step(mb)
            stats.update(stats_mb)
            stats["epochs_run"] = epoch + 1
            kl = float(np.mean(logp_old - self._current_logp(obs, rollout_batch)))
            stats["kl"] = kl
            if kl > 10.0 * cfg.kl_target:
                warnings.warn(f"PPO early stop: KL {kl:.4f} > 10 x target", stacklevel=2)
                stats["early_stop"] = True
                break
        return stats

    def _current_logp(self, obs: np.ndarray, rollout_batch: dict) -> np.ndarray:
        if isinstance(self.policy, CategoricalPolicy):
            return self.policy.log_prob_of(obs, rollout_batch["act"])
        mean, log_std = self.policy._mean_log_std(obs)
        return self.policy._log_prob_from_u(rollout_batch["u"], mean, log_std)

    def _step(self, mb: dict) -> dict:
        cfg = self.cfg
        x = nn.as_node(mb["obs"])
        logp, ent = self._log_prob_entropy_nodes(x, mb)
        ratio = nn.exp(nn.sub(logp, mb["logp_old"]))
        clipped = nn.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
        adv = mb["adv"]
        surrogate = nn.minimum(nn.mul(ratio, adv), nn.mul(clipped, adv))
        policy_loss = nn.neg(nn.mean_(surrogate))

        v = nn.reshape(self.value_net.values_node(x), (x.val.shape[0],))
        value_loss = nn.mean_(nn.square(nn.sub(v, mb["ret"])))

        total = nn.add(
            nn.sub(policy_loss, nn.mul(ent, cfg.ent_coef)),
            nn.mul(value_loss, cfg.vf_coef),
        )
        tape = nn.make_tape(total, [self.policy.mlp, self.value_net.mlp], [x])
        grads = nn.backward(tape)
        nn.adam_step(self.opt_pi, self.policy.mlp.params, grads.params)
        nn.adam_step(self.opt_v, self.value_net.mlp.params, grads.params)
        return {
            "policy_loss": float(policy_loss.val),
            "value_loss": float(value_loss.val),
            "entropy": float(ent.val),
        }
