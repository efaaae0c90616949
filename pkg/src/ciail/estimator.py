"""Estimator-style wrappers so the learners compose with sklearn tooling.

``ImitationEstimator.fit`` consumes a demonstration set and trains the full
adversarial loop; ``predict`` maps observation rows to deterministic actions.
``ExpertEstimator`` fits a policy on the shaped per-setting reward instead.
Both follow the sklearn parameter conventions (``get_params``/``set_params``
via ``BaseEstimator``), so ``sklearn.base.clone`` and grid utilities work.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .config import Config
from .demos import DemoSet, load_demos
from .envs import EnvSpec
from .errors import DimensionError
from .expert import gen_expert
from .rollout import eval_returns, normalized_return
from .trainer import CiailTrainer


def check_obs_matrix(X, obs_dim: int) -> np.ndarray:
    """Validate an observation batch: 2D, finite, correct width."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != obs_dim:
        raise DimensionError(
            f"expected observations of width {obs_dim}, got shape {X.shape}"
        )
    if not np.isfinite(X).all():
        raise DimensionError("observations must be finite")
    return X


class NotFittedError(RuntimeError):
    pass


class ImitationEstimator(BaseEstimator):
    """Adversarial imitation learner with a fit/predict surface.

    Parameters mirror the run configuration; anything else is reachable via
    ``overrides`` (flat dotted config keys).
    """

    def __init__(self, env: str = "move_point", algo: str = "ppo",
                 head: str = "gail", reg: str = "erm", lambda_irm: float = 1.0,
                 lambda_gp: float = 10.0, n_updates: int = 1,
                 n_rounds: int = 150, seed: int = 0, overrides: dict | None = None):
        self.env = env
        self.algo = algo
        self.head = head
        self.reg = reg
        self.lambda_irm = lambda_irm
        self.lambda_gp = lambda_gp
        self.n_updates = n_updates
        self.n_rounds = n_rounds
        self.seed = seed
        self.overrides = overrides

    def _config(self) -> Config:
        overrides = {
            "env.id": self.env,
            "algo": self.algo,
            "head": self.head,
            "disc.reg": self.reg,
            "disc.lambda_irm": self.lambda_irm,
            "disc.lambda_gp": self.lambda_gp,
            "disc.n_updates": self.n_updates,
            "train.rounds": self.n_rounds,
        }
        overrides.update(self.overrides or {})
        return Config.from_dict(overrides)

    def fit(self, X, y=None):
        """Train on demonstrations (a DemoSet or a path to a demo file)."""
        demos = load_demos(X) if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__") else X
        if not isinstance(demos, DemoSet):
            raise TypeError("fit expects a DemoSet or a demo file path")
        trainer = CiailTrainer(self._config(), demos, self.seed)
        trainer.train()
        self.trainer_ = trainer
        self.policy_ = trainer.policy
        self.head_ = trainer.head
        self.metrics_ = trainer.metrics
        self.run_info_ = trainer.run_info()
        return self

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError("call fit before predict/score")

    def predict(self, X) -> np.ndarray:
        """Deterministic actions (argmax / squashed mean) per observation row."""
        self._check_fitted()
        X = check_obs_matrix(X, self.trainer_.spec.obs_dim)
        return self.policy_.deterministic(X)

    def predict_proba(self, X) -> np.ndarray:
        """Action probabilities; discrete-action environments only."""
        self._check_fitted()
        X = check_obs_matrix(X, self.trainer_.spec.obs_dim)
        if not hasattr(self.policy_, "action_probs"):
            raise DimensionError("action probabilities exist only for discrete envs")
        return self.policy_.action_probs(X)

    def score(self, X=None, y=None, n_episodes: int = 10, seed: int = 10_000) -> float:
        """Mean normalized ground-truth return of the fitted policy."""
        self._check_fitted()
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        rets = eval_returns(self.policy_, self.trainer_.spec, n_episodes, rng)
        return normalized_return(float(rets.mean()), self.trainer_.r_random)


class ExpertEstimator(BaseEstimator):
    """Ground-truth expert trainer for one setting, with the same surface."""

    def __init__(self, env: str = "move_point", setting_id: int = 0,
                 budget_rounds: int = 300, seed: int = 0,
                 overrides: dict | None = None):
        self.env = env
        self.setting_id = setting_id
        self.budget_rounds = budget_rounds
        self.seed = seed
        self.overrides = overrides

    def fit(self, X=None, y=None):
        cfg = Config.from_dict({"env.id": self.env, **(self.overrides or {})})
        spec = EnvSpec(
            env_id=self.env, horizon=cfg["env.horizon"],
            step_size=cfg["env.step_size"], setting_id=self.setting_id,
            n_settings=cfg["env.n_settings"], spur_source="expert",
        )
        policy, stats = gen_expert(
            spec, self.seed, budget_rounds=self.budget_rounds,
            episodes_per_round=cfg["expert.episodes_per_round"],
            ppo_cfg=cfg.expert_ppo_config(), hidden=tuple(cfg["policy.hidden"]),
            eval_every=cfg["expert.eval_every"],
            eval_episodes=cfg["expert.eval_episodes"],
            plateau_patience=cfg["expert.plateau_patience"],
            min_improvement=cfg["expert.min_improvement"],
            quiet=True,
        )
        self.spec_ = spec
        self.policy_ = policy
        self.stats_ = stats
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "policy_"):
            raise NotFittedError("call fit before predict")
        X = check_obs_matrix(X, self.spec_.obs_dim)
        return self.policy_.deterministic(X)

    def score(self, X=None, y=None) -> float:
        if not hasattr(self, "stats_"):
            raise NotFittedError("call fit before score")
        return self.stats_["best_norm"]
