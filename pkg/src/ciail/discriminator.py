"""Discriminator heads, losses, and regularizers for adversarial imitation.

Two head families: a plain logit net over (s, a, s') slices, and a structured
head f(s,a,s') = g(s,a) + gamma*h(s') - h(s) compared against the policy
likelihood, whose logit is z = f - log pi(a|s).

Regularizers:
  * invariance penalty: for each setting e, the exact derivative of the
    per-setting mean BCE w.r.t. a scalar multiplier on the logits at 1.0,
    squared and summed over settings. Computed analytically as
    mean((sigma(z) - y) * z) per setting; the term stays differentiable
    w.r.t. head parameters through z.
  * mixup gradient penalty: mean squared input-gradient norm of D at random
    convex combinations of expert and policy rows (zero-centered).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ContractError
from .rollout import TransitionBatch

INPUT_MODES = ("s", "sa", "sas")
REG_KINDS = ("erm", "irm", "gp")
REWARD_MODES = ("logit", "neg_log_one_minus_d")


@dataclass(frozen=True)
class RegConfig:
    """Which regularizer a discriminator update applies, and how hard."""

    kind: str = "erm"
    lam_irm: float = 0.0
    lam_gp: float = 0.0
    n_updates: int = 1

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ConfigError(f"unknown regularizer {self.kind!r}")
        if self.lam_irm < 0 or self.lam_gp < 0:
            raise ConfigError("regularization strengths must be nonnegative")
        if self.n_updates < 1:
            raise ConfigError("n_updates must be >= 1")


@dataclass
class DiscInputs:
    """Featurized transition parts: states, action features, next states."""

    s: np.ndarray
    a: np.ndarray
    sp: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]

    def take(self, idx) -> "DiscInputs":
        return DiscInputs(self.s[idx], self.a[idx], self.sp[idx])

    def full_matrix(self) -> np.ndarray:
        return np.concatenate([self.s, self.a, self.sp], axis=1)

    @staticmethod
    def concat(parts: list["DiscInputs"]) -> "DiscInputs":
        return DiscInputs(
            np.concatenate([p.s for p in parts]),
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.sp for p in parts]),
        )


def featurize(batch: TransitionBatch, n_actions: int) -> DiscInputs:
    """Build discriminator inputs; discrete actions become one-hot rows."""
    if n_actions > 0:
        act = np.asarray(batch.act, dtype=np.intp)
        a = np.zeros((len(batch), n_actions))
        a[np.arange(len(batch)), act] = 1.0
    else:
        a = np.atleast_2d(np.asarray(batch.act, dtype=np.float64))
    return DiscInputs(
        np.asarray(batch.obs, dtype=np.float64),
        a,
        np.asarray(batch.next_obs, dtype=np.float64),
    )


@dataclass
class SettingBatch:
    """One setting's rows for a discriminator update: inputs, binary labels
    (1 = expert), and per-row log pi(a|s) when a structured head needs it."""

    setting_id: int
    inputs: DiscInputs
    y: np.ndarray
    log_pi: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if len(self.inputs) < 1:
            raise ContractError("empty setting batch")
        if not np.isin(self.y, (0.0, 1.0)).all():
            raise ContractError("labels must be binary")


class GailHead:
    """Single-net discriminator over the configured transition slice."""

    def __init__(self, mlp: nn.MLP, input_mode: str = "sas"):
        if input_mode not in INPUT_MODES:
            raise ConfigError(f"unknown input_mode {input_mode!r}")
        self.mlp = mlp
        self.input_mode = input_mode
        if mlp.spec.out_width != 1:
            raise ContractError("discriminator output width must be 1")

    @staticmethod
    def in_width(obs_dim: int, act_width: int, input_mode: str) -> int:
        return {"s": obs_dim, "sa": obs_dim + act_width,
                "sas": 2 * obs_dim + act_width}[input_mode]

    @property
    def mlps(self) -> list[nn.MLP]:
        return [self.mlp]

    def _x_node(self, inputs: DiscInputs) -> nn.Node:
        parts = {"s": [inputs.s], "sa": [inputs.s, inputs.a],
                 "sas": [inputs.s, inputs.a, inputs.sp]}[self.input_mode]
        nodes = [p if isinstance(p, nn.Node) else nn.as_node(p) for p in parts]
        return nodes[0] if len(nodes) == 1 else nn.concat_cols(nodes)

    def logit_node(self, inputs: DiscInputs, log_pi=None) -> nn.Node:
        z = self.mlp.apply(self._x_node(inputs))
        return nn.reshape(z, (len(inputs),))

    def logits(self, inputs: DiscInputs, log_pi=None) -> np.ndarray:
        return self.logit_node(inputs).val

    def transition_scores(self, inputs: DiscInputs) -> np.ndarray:
        """Parametric score of a transition (here: the raw logit)."""
        return self.logits(inputs)


class AirlHead:
    """Structured head: reward net g(s,a) plus shaping potential h(s).

    The logit compares f = g + gamma*h(s') - h(s) against log pi(a|s), so
    D = exp(f) / (exp(f) + pi).
    """

    def __init__(self, g_mlp: nn.MLP, h_mlp: nn.MLP, gamma: float):
        self.g_mlp = g_mlp
        self.h_mlp = h_mlp
        self.gamma = gamma
        if g_mlp.spec.out_width != 1 or h_mlp.spec.out_width != 1:
            raise ContractError("g and h nets must have scalar outputs")

    @property
    def mlps(self) -> list[nn.MLP]:
        return [self.g_mlp, self.h_mlp]

    def f_node(self, inputs: DiscInputs) -> nn.Node:
        s = inputs.s if isinstance(inputs.s, nn.Node) else nn.as_node(inputs.s)
        a = inputs.a if isinstance(inputs.a, nn.Node) else nn.as_node(inputs.a)
        sp = inputs.sp if isinstance(inputs.sp, nn.Node) else nn.as_node(inputs.sp)
        g = self.g_mlp.apply(nn.concat_cols([s, a]))
        f = nn.add(g, nn.sub(nn.mul(self.h_mlp.apply(sp), self.gamma),
                             self.h_mlp.apply(s)))
        return nn.reshape(f, (len(inputs),))

    def logit_node(self, inputs: DiscInputs, log_pi=None) -> nn.Node:
        if log_pi is None:
            raise ContractError("structured head needs log pi(a|s) per row")
        return nn.sub(self.f_node(inputs), np.asarray(log_pi, dtype=np.float64))

    def logits(self, inputs: DiscInputs, log_pi=None) -> np.ndarray:
        return self.logit_node(inputs, log_pi).val

    def transition_scores(self, inputs: DiscInputs) -> np.ndarray:
        """Parametric score of a transition (here: f, excluding log pi)."""
        return self.f_node(inputs).val


def disc_logit(head, inputs: DiscInputs, log_pi=None) -> np.ndarray:
    """Discriminator logit z with D = sigma(z)."""
    return head.logits(inputs, log_pi)


def bce_loss_node(z: nn.Node, y: np.ndarray) -> nn.Node:
    """Mean binary cross-entropy from logits, in stable softplus form."""
    y = np.asarray(y, dtype=np.float64)
    return nn.mean_(nn.sub(nn.softplus(z), nn.mul(y, z)))


def bce_loss(z: np.ndarray, y: np.ndarray) -> float:
    return float(bce_loss_node(nn.as_node(np.asarray(z, dtype=np.float64)), y).val)


def _setting_grad_node(z: nn.Node, y: np.ndarray) -> nn.Node:
    # d/dw of mean BCE(w * z) at w = 1: mean((sigma(z) - y) * z)
    return nn.mean_(nn.mul(nn.sub(nn.sigmoid(z), np.asarray(y, dtype=np.float64)), z))


def irm_penalty_node(head, batches: list[SettingBatch]) -> nn.Node:
    """Sum over settings of the squared dummy-classifier BCE gradient."""
    if not batches:
        raise ContractError("invariance penalty needs at least one setting")
    total = None
    for b in batches:
        z = head.logit_node(b.inputs, b.log_pi)
        term = nn.square(_setting_grad_node(z, b.y))
        total = term if total is None else nn.add(total, term)
    return total


def irm_penalty(head, batches: list[SettingBatch]) -> float:
    return float(irm_penalty_node(head, batches).val)


def gp_penalty_node(head, expert: SettingBatch, policy: SettingBatch,
                    rng: np.random.Generator) -> nn.Node:
    """Mean squared input-gradient norm of D at mixup rows.

    Rows are paired after subsampling the larger side; the interpolation
    weight is uniform per row. Gradients flow to parameters through the
    double-backward graph.
    """
    ne, np_ = len(expert.inputs), len(policy.inputs)
    if ne == 0 or np_ == 0:
        raise ContractError("both expert and policy rows are required")
    n = min(ne, np_)
    ie = rng.choice(ne, size=n, replace=False) if ne > n else np.arange(ne)
    ip = rng.choice(np_, size=n, replace=False) if np_ > n else np.arange(np_)
    e_in, p_in = expert.inputs.take(ie), policy.inputs.take(ip)
    u = rng.uniform(0.0, 1.0, size=(n, 1))

    leaves = []

    def mix(xe, xp):
        leaf = nn.Node(u * xe + (1 - u) * xp)
        leaves.append(leaf)
        return leaf

    mixed = DiscInputs(mix(e_in.s, p_in.s), mix(e_in.a, p_in.a),
                       mix(e_in.sp, p_in.sp))
    log_pi = None
    if expert.log_pi is not None and policy.log_pi is not None:
        log_pi = u[:, 0] * expert.log_pi[ie] + (1 - u[:, 0]) * policy.log_pi[ip]
    d = nn.sigmoid(head.logit_node(mixed, log_pi))
    gx = nn.grad(nn.sum_(d), leaves)
    sq = None
    for g in gx:
        term = nn.sum_(nn.square(g), axis=1)
        sq = term if sq is None else nn.add(sq, term)
    return nn.mean_(sq)


def gp_penalty(head, expert: SettingBatch, policy: SettingBatch,
               rng: np.random.Generator) -> float:
    return float(gp_penalty_node(head, expert, policy, rng).val)


@dataclass
class DiscUpdateResult:
    loss: float
    penalty: float
    accuracy: float


def disc_update(head, batches: list[SettingBatch], reg: RegConfig,
                opt: nn.AdamState, rng: np.random.Generator,
                lam_scale: float = 1.0) -> DiscUpdateResult:
    """reg.n_updates Adam steps on the regularized discriminator loss.

    irm: sum over settings of per-setting mean BCE plus lam * penalty;
    gp/erm: pooled mean BCE (plus lam * mixup penalty for gp).
    ``lam_scale`` implements penalty warm-up ramps.
    """
    if not batches:
        raise ContractError("disc_update needs at least one setting batch")
    params = [p for m in head.mlps for p in m.params]
    loss_v = pen_v = 0.0
    z_last = y_last = None
    for _ in range(reg.n_updates):
        if reg.kind == "irm":
            total = None
            pen = irm_penalty_node(head, batches)
            zs, ys = [], []
            for b in batches:
                z = head.logit_node(b.inputs, b.log_pi)
                zs.append(z.val)
                ys.append(b.y)
                term = bce_loss_node(z, b.y)
                total = term if total is None else nn.add(total, term)
            lam = reg.lam_irm * lam_scale
            loss = nn.add(total, nn.mul(pen, lam))
            z_last, y_last = np.concatenate(zs), np.concatenate(ys)
            loss_v, pen_v = float(total.val), float(pen.val)
        else:
            pooled = _pool(batches)
            z = head.logit_node(pooled.inputs, pooled.log_pi)
            bce = bce_loss_node(z, pooled.y)
            if reg.kind == "gp":
                expert, policy = _split_by_label(pooled)
                pen = gp_penalty_node(head, expert, policy, rng)
                loss = nn.add(bce, nn.mul(pen, reg.lam_gp * lam_scale))
                pen_v = float(pen.val)
            else:
                loss = bce
                pen_v = 0.0
            z_last, y_last = z.val, pooled.y
            loss_v = float(bce.val)
        tape = nn.make_tape(loss, head.mlps, [])
        nn.adam_step(opt, params, nn.backward(tape).params)
    acc = float(((z_last > 0).astype(float) == y_last).mean())
    return DiscUpdateResult(loss=loss_v, penalty=pen_v, accuracy=acc)


def _pool(batches: list[SettingBatch]) -> SettingBatch:
    if len(batches) == 1:
        return batches[0]
    log_pi = None
    if all(b.log_pi is not None for b in batches):
        log_pi = np.concatenate([b.log_pi for b in batches])
    return SettingBatch(
        setting_id=-1,
        inputs=DiscInputs.concat([b.inputs for b in batches]),
        y=np.concatenate([b.y for b in batches]),
        log_pi=log_pi,
    )


def _split_by_label(batch: SettingBatch) -> tuple[SettingBatch, SettingBatch]:
    ye = batch.y == 1.0
    e_idx, p_idx = np.where(ye)[0], np.where(~ye)[0]
    if e_idx.size == 0 or p_idx.size == 0:
        raise ContractError("gradient penalty needs both expert and policy rows")
    mk = lambda idx, lbl: SettingBatch(
        setting_id=batch.setting_id,
        inputs=batch.inputs.take(idx),
        y=np.full(idx.size, lbl),
        log_pi=None if batch.log_pi is None else batch.log_pi[idx],
    )
    return mk(e_idx, 1.0), mk(p_idx, 0.0)


def reward_from_disc(head, inputs: DiscInputs, log_pi=None,
                     mode: str = "neg_log_one_minus_d") -> np.ndarray:
    """Training reward from the discriminator.

    logit: r = z = log D - log(1 - D); neg_log_one_minus_d: r = softplus(z).
    """
    if mode not in REWARD_MODES:
        raise ConfigError(f"unknown reward mode {mode!r}")
    z = head.logits(inputs, log_pi)
    if mode == "logit":
        return z
    return np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# diagnostic probes


def fit_logistic_probe(x: np.ndarray, y: np.ndarray, steps: int = 2000,
                       lr: float = 0.5, l2: float = 1e-4):
    """Full-batch logistic regression by gradient descent; deterministic."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(steps):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -50, 50)))
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return w, b


def probe_spur_ratio(head, inputs: DiscInputs, spur_cols: list[int],
                     causal_cols: list[int]) -> float:
    """Distill the frozen head's transition scores into a linear-logistic
    probe over standardized raw inputs; return the spurious-to-causal
    weight-norm ratio."""
    scores = head.transition_scores(inputs)
    x = inputs.full_matrix()
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-8
    y = (scores > np.median(scores)).astype(np.float64)
    w, _ = fit_logistic_probe((x - mu) / sd, y)
    spur = np.linalg.norm(w[spur_cols])
    causal = np.linalg.norm(w[causal_cols])
    return float(spur / (causal + 1e-12))


def spur_feature_columns(obs_dim: int, act_width: int):
    """(spurious, causal) column indices in the full (s, a, s') matrix for
    spur_point observations, whose last obs channel is the spurious one."""
    s_off, sp_off = 0, obs_dim + act_width
    spur = [s_off + obs_dim - 1, sp_off + obs_dim - 1]
    causal = [s_off + i for i in range(obs_dim - 1)]
    causal += [sp_off + i for i in range(obs_dim - 1)]
    return spur, causal
