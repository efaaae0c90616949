"""Causally invariant adversarial imitation learning on 2D navigation tasks.

Expert policies are trained per setting on shaped ground-truth rewards,
demonstrations are recorded across settings, and GAIL/AIRL discriminators
are fit with ERM, invariance (per-setting gradient-norm), or mixup
gradient-penalty regularization while PPO or SAC optimizes the policy on
the discriminator-derived reward.
"""

from .config import Config, load_config, parse_config
from .demos import DemoSet, load_demos, save_demos
from .envs import EnvSpec, NavEnv
from .estimator import ExpertEstimator, ImitationEstimator, check_obs_matrix
from .trainer import CiailTrainer, train

__version__ = "0.1.0"

__all__ = [
    "CiailTrainer",
    "Config",
    "DemoSet",
    "EnvSpec",
    "ExpertEstimator",
    "ImitationEstimator",
    "NavEnv",
    "check_obs_matrix",
    "load_config",
    "load_demos",
    "parse_config",
    "save_demos",
    "train",
    "__version__",
]
