"""2D navigation environments on the unit square.

Three variants share the same dynamics: ``move_point`` (4 discrete movement
directions), ``point_mass`` (continuous displacement in [-1,1]^2), and
``spur_point`` (move_point plus one spurious observation channel that is
label-predictive per expert setting but unstable across settings).

Ground-truth reward is the negative Euclidean distance to the goal and is
exposed only through ``StepResult.reward_gt`` for evaluation. Expert training
uses the shaped per-setting reward, which routes through an intermediate
waypoint before switching to the goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, EpisodeFinishedError

ENV_IDS = ("move_point", "point_mass", "spur_point")

# one waypoint per expert setting; four symmetric corners
WAYPOINTS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))

WAYPOINT_RADIUS = 0.1
MIN_GOAL_DISTANCE = 0.2
SPUR_NOISE_STD = 0.05

# action index -> (dx, dy) for the discrete variants
MOVES = ((0.0, 1.0), (0.0, -1.0), (-1.0, 0.0), (1.0, 0.0))  # up, down, left, right
N_ACTIONS = 4


@dataclass(frozen=True)
class EnvSpec:
    """Identity and constants of one environment instance."""

    env_id: str = "move_point"
    horizon: int = 200
    step_size: float = 0.05
    setting_id: int = 0
    n_settings: int = 4
    spur_source: str = "policy"  # policy | expert; spur_point only

    def __post_init__(self):
        if self.env_id not in ENV_IDS:
            raise ConfigError(f"unknown env_id {self.env_id!r}")
        if not 0 < self.step_size <= 0.25:
            raise ConfigError(f"step_size must be in (0, 0.25], got {self.step_size}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.setting_id < 0 or self.setting_id >= self.n_settings:
            raise ConfigError(
                f"setting_id {self.setting_id} outside [0, {self.n_settings})"
            )
        if self.spur_source not in ("policy", "expert"):
            raise ConfigError(f"unknown spur_source {self.spur_source!r}")

    @property
    def obs_dim(self) -> int:
        return 5 if self.env_id == "spur_point" else 4

    @property
    def discrete(self) -> bool:
        return self.env_id in ("move_point", "spur_point")

    @property
    def n_actions(self) -> int:
        return N_ACTIONS if self.discrete else 0

    @property
    def action_dim(self) -> int:
        return 0 if self.discrete else 2

    def waypoint(self) -> tuple[float, float]:
        if self.setting_id >= len(WAYPOINTS):
            raise ConfigError(
                f"setting_id {self.setting_id} has no waypoint (max {len(WAYPOINTS) - 1})"
            )
        return WAYPOINTS[self.setting_id]


class GroundTruthReward(float):
    """Float tainted as evaluation-only; optimizers refuse to consume it."""

    __slots__ = ()


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward_gt: GroundTruthReward
    done: bool


@dataclass
class Transition:
    """One recorded step, tagged with its setting and adversarial round."""

    s: np.ndarray
    a: object  # int for discrete envs, length-2 array otherwise
    s_next: np.ndarray
    done: bool
    setting_id: int
    round_id: int


def spur_center(setting_id: int, n_settings: int) -> float:
    """Per-setting mean of the spurious channel, evenly spaced in [0.2, 0.8]."""
    if n_settings == 1:
        return 0.5
    return 0.2 + 0.6 * setting_id / (n_settings - 1)


def emit_spurious(source: str, setting_id: int, n_settings: int,
                  rng: np.random.Generator) -> float:
    """Draw one spurious-channel value.

    Expert-sourced observations cluster around the setting's center; policy
    rollouts draw uniformly, so the channel separates the two classes within
    a setting while its location shifts across settings.
    """
    if source == "expert":
        return spur_center(setting_id, n_settings) + SPUR_NOISE_STD * rng.standard_normal()
    return float(rng.uniform(0.0, 1.0))


class NavEnv:
    """Deterministic point navigation; rng is used only for reset and the
    spurious channel."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._rng: np.random.Generator | None = None
        self._agent = (0.0, 0.0)
        self._goal = (0.0, 0.0)
        self._t = 0
        self._done = True
        self._waypoint_hit = False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        ax, ay = rng.uniform(0.0, 1.0, size=2)
        while True:
            gx, gy = rng.uniform(0.0, 1.0, size=2)
            if math.hypot(gx - ax, gy - ay) >= MIN_GOAL_DISTANCE:
                break
        self._agent = (float(ax), float(ay))
        self._goal = (float(gx), float(gy))
        self._t = 0
        self._done = False
        self._waypoint_hit = False
        return self._obs()

    def _obs(self) -> np.ndarray:
        ax, ay = self._agent
        gx, gy = self._goal
        if self.spec.env_id == "spur_point":
            z = emit_spurious(self.spec.spur_source, self.spec.setting_id,
                              self.spec.n_settings, self._rng)
            return np.array([ax, ay, gx, gy, z])
        return np.array([ax, ay, gx, gy])

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinishedError("step() after episode end; call reset()")
        ax, ay = self._agent
        if self.spec.discrete:
            a = int(action)
            if not 0 <= a < N_ACTIONS:
                raise ContractError(f"discrete action {a} outside [0, {N_ACTIONS})")
            dx, dy = MOVES[a]
            ax += self.spec.step_size * dx
            ay += self.spec.step_size * dy
        else:
            a = np.asarray(action, dtype=np.float64)
            if a.shape != (2,) or np.abs(a).max() > 1.0 + 1e-9:
                raise ContractError(f"continuous action must be in [-1,1]^2, got {a}")
            ax += self.spec.step_size * float(a[0])
            ay += self.spec.step_size * float(a[1])
        self._agent = (min(max(ax, 0.0), 1.0), min(max(ay, 0.0), 1.0))
        self._t += 1
        self._done = self._t >= self.spec.horizon
        gx, gy = self._goal
        dist = math.hypot(self._agent[0] - gx, self._agent[1] - gy)
        return StepResult(self._obs(), GroundTruthReward(-dist), self._done)

    def shaped_expert_reward(self) -> float:
        """Per-setting expert training reward for the current (post-step) state.

        Tracks the waypoint phase: distance to the setting's waypoint until
        the agent has come within the waypoint radius once, then distance to
        the goal. Plain float by design; this signal is allowed in expert
        optimizers, unlike the evaluation-only ground truth.
        """
        wx, wy = self.spec.waypoint()
        ax, ay = self._agent
        if not self._waypoint_hit:
            d = math.hypot(ax - wx, ay - wy)
            if d <= WAYPOINT_RADIUS:
                self._waypoint_hit = True
            return -d
        gx, gy = self._goal
        return -math.hypot(ax - gx, ay - gy)

    @property
    def agent(self) -> tuple[float, float]:
        return self._agent

    @property
    def goal(self) -> tuple[float, float]:
        return self._goal

    @property
    def waypoint_hit(self) -> bool:
        return self._waypoint_hit

    @property
    def done(self) -> bool:
        return self._done

    # test hook: place the env in a known state
    def _force_state(self, agent, goal, t=0, done=False, waypoint_hit=False):
        self._agent = tuple(map(float, agent))
        self._goal = tuple(map(float, goal))
        self._t = t
        self._done = done
        self._waypoint_hit = waypoint_hit


def strip_spurious(obs: np.ndarray) -> np.ndarray:
    """Project a spur_point observation onto the causal channels."""
    return obs[..., :4]
