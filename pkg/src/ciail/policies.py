"""Policy, value, and Q-function heads built on the MLP core."""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import ContractError, TrainingDivergenceError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))
_SQUASH_EPS = 1e-9


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


class CategoricalPolicy:
    """Softmax policy over a discrete action set."""

    def __init__(self, mlp: nn.MLP):
        self.mlp = mlp
        self.n_actions = mlp.spec.out_width

    @property
    def obs_dim(self) -> int:
        return self.mlp.spec.in_width

    def logits(self, obs: np.ndarray) -> np.ndarray:
        z = self.mlp.apply(nn.as_node(np.atleast_2d(obs))).val
        if not np.isfinite(z).all():
            raise TrainingDivergenceError("non-finite policy logits")
        return z

    def log_probs_node(self, x: nn.Node) -> nn.Node:
        z = self.mlp.apply(x)
        return nn.sub(z, nn.logsumexp(z, axis=1))

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw one action per row; returns (actions, log_probs)."""
        logp = _log_softmax(self.logits(obs))
        probs = np.exp(logp)
        u = rng.random(probs.shape[0])
        actions = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        actions = np.minimum(actions, self.n_actions - 1)
        return actions, logp[np.arange(len(actions)), actions]

    def log_prob_of(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        logp = _log_softmax(self.logits(obs))
        return logp[np.arange(len(actions)), np.asarray(actions, dtype=np.intp)]

    def entropy(self, obs: np.ndarray) -> np.ndarray:
        """Exact categorical entropy per row."""
        logp = _log_softmax(self.logits(obs))
        return -(np.exp(logp) * logp).sum(axis=1)

    def deterministic(self, obs: np.ndarray) -> np.ndarray:
        return self.logits(obs).argmax(axis=1)

    def action_probs(self, obs: np.ndarray) -> np.ndarray:
        return np.exp(_log_softmax(self.logits(obs)))


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian over [-1, 1]^2.

    The net outputs (mean, log_std) side by side; log_std is clamped to
    [-5, 2]. Pre-squash draws are kept alongside actions so updates never
    need atanh round trips.
    """

    def __init__(self, mlp: nn.MLP):
        if mlp.spec.out_width % 2 != 0:
            raise ContractError("gaussian head needs an even output width")
        self.mlp = mlp
        self.action_dim = mlp.spec.out_width // 2

    @property
    def obs_dim(self) -> int:
        return self.mlp.spec.in_width

    def _mean_log_std(self, obs: np.ndarray):
        out = self.mlp.apply(nn.as_node(np.atleast_2d(obs))).val
        mean = out[:, : self.action_dim]
        log_std = np.clip(out[:, self.action_dim:], LOG_STD_MIN, LOG_STD_MAX)
        if not np.isfinite(mean).all():
            raise TrainingDivergenceError("non-finite policy mean")
        return mean, log_std

    def mean_log_std_node(self, x: nn.Node):
        out = self.mlp.apply(x)
        d = self.action_dim
        mean = nn.slice_cols(out, 0, d)
        log_std = nn.clip(nn.slice_cols(out, d, 2 * d), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    @staticmethod
    def _log_prob_from_u(u, mean, log_std):
        std = np.exp(log_std)
        gauss = -0.5 * (((u - mean) / std) ** 2 + _LOG_2PI) - log_std
        squash = np.log1p(-np.tanh(u) ** 2 + _SQUASH_EPS)
        return (gauss - squash).sum(axis=1)

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Returns (actions, log_probs, pre_squash)."""
        mean, log_std = self._mean_log_std(obs)
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return np.tanh(u), self._log_prob_from_u(u, mean, log_std), u

    def log_prob_of(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        a = np.clip(np.asarray(actions, dtype=np.float64), -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(a)
        mean, log_std = self._mean_log_std(obs)
        return self._log_prob_from_u(u, mean, log_std)

    def log_prob_node(self, x: nn.Node, u: np.ndarray) -> nn.Node:
        """log pi at the stored pre-squash draws, as a graph node."""
        mean, log_std = self.mean_log_std_node(x)
        std = nn.exp(log_std)
        zscore = nn.div(nn.sub(u, mean), std)
        gauss = nn.sub(nn.mul(nn.add(nn.square(zscore), _LOG_2PI), -0.5), log_std)
        squash = np.log1p(-np.tanh(u) ** 2 + _SQUASH_EPS)  # constant in params
        return nn.sum_(nn.sub(gauss, squash), axis=1)

    def entropy(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Single-sample estimate -log pi(a|s)."""
        _, logp, _ = self.sample(obs, rng)
        return -logp

    def deterministic(self, obs: np.ndarray) -> np.ndarray:
        mean, _ = self._mean_log_std(obs)
        return np.tanh(mean)


class ValueNet:
    """State-value head V(s)."""

    def __init__(self, mlp: nn.MLP):
        if mlp.spec.out_width != 1:
            raise ContractError("value net must have scalar output")
        self.mlp = mlp

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp.apply(nn.as_node(np.atleast_2d(obs))).val[:, 0]

    def values_node(self, x: nn.Node) -> nn.Node:
        return self.mlp.apply(x)


class QNetDiscrete:
    """Per-action value head Q(s, .) for discrete action sets."""

    def __init__(self, mlp: nn.MLP):
        self.mlp = mlp
        self.n_actions = mlp.spec.out_width

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp.apply(nn.as_node(np.atleast_2d(obs))).val

    def values_node(self, x: nn.Node) -> nn.Node:
        return self.mlp.apply(x)


class QNetContinuous:
    """Scalar value head Q(s, a) on concatenated (obs, action)."""

    def __init__(self, mlp: nn.MLP):
        if mlp.spec.out_width != 1:
            raise ContractError("continuous Q net must have scalar output")
        self.mlp = mlp

    def values(self, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(act)], axis=1)
        return self.mlp.apply(nn.as_node(x)).val[:, 0]

    def values_node(self, x_obs: nn.Node, a: nn.Node) -> nn.Node:
        return self.mlp.apply(nn.concat_cols([x_obs, a]))


def polyak_update(target: nn.MLP, online: nn.MLP, tau: float) -> None:
    """Exponential tracking of online params: target <- (1-tau)*target + tau*online."""
    if not 0.0 < tau <= 1.0:
        raise ContractError(f"tau must be in (0, 1], got {tau}")
    for tp, op in zip(target.params, online.params):
        tp.assign((1.0 - tau) * tp.val + tau * op.val)
