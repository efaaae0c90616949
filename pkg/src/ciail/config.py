"""Flat key-value run configuration with dotted section prefixes.

Files hold ``key = value`` lines (``#`` starts a comment). Every key has a
default; unknown keys are hard errors. A parsed config re-serializes to a
canonical sorted form, and the fully resolved copy is written next to every
run's metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

from .discriminator import RegConfig
from .envs import EnvSpec
from .errors import ConfigError
from .ppo import PPOConfig
from .sac import SACConfig


def _int_list(text: str) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(p) for p in str(text).split(",") if p.strip() != "")


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "int_list": _int_list,
}

# key -> (default, type, allowed choices or None)
SCHEMA: dict[str, tuple[object, str, tuple | None]] = {
    "env.id": ("move_point", "str", ("move_point", "point_mass", "spur_point")),
    "env.horizon": (200, "int", None),
    "env.step_size": (0.05, "float", None),
    "env.n_settings": (4, "int", None),
    "algo": ("ppo", "str", ("ppo", "sac")),
    "head": ("gail", "str", ("gail", "airl")),
    "reward_mode": ("auto", "str", ("auto", "logit", "neg_log_one_minus_d")),
    "setting_mode": ("auto", "str", ("auto", "expert_source", "replay_round")),
    "policy.hidden": ((64, 64), "int_list", None),
    "value.hidden": ((64, 64), "int_list", None),
    "disc.hidden": ((64, 64), "int_list", None),
    "disc.activation": ("relu", "str", ("relu", "tanh")),
    "disc.input_mode": ("sas", "str", ("s", "sa", "sas")),
    "disc.reg": ("erm", "str", ("erm", "irm", "gp")),
    "disc.lambda_irm": (1.0, "float", None),
    "disc.lambda_gp": (10.0, "float", None),
    "disc.n_updates": (1, "int", None),
    "disc.lr": (1e-3, "float", None),
    "disc.warmup_rounds": (10, "int", None),
    "ppo.clip_eps": (0.2, "float", None),
    "ppo.gamma": (0.99, "float", None),
    "ppo.gae_lambda": (0.95, "float", None),
    "ppo.epochs": (4, "int", None),
    "ppo.minibatch": (256, "int", None),
    "ppo.vf_coef": (0.5, "float", None),
    "ppo.ent_coef": (0.01, "float", None),
    "ppo.lr": (3e-4, "float", None),
    "ppo.kl_target": (0.01, "float", None),
    "sac.gamma": (0.99, "float", None),
    "sac.alpha": (0.05, "float", None),
    "sac.tau": (0.005, "float", None),
    "sac.batch": (256, "int", None),
    "sac.target_period": (1, "int", None),
    "sac.lr": (3e-4, "float", None),
    "sac.grad_steps": (256, "int", None),
    "sac.episodes_per_round": (5, "int", None),
    "sac.buffer_capacity": (100_000, "int", None),
    "sac.bucket_span": (5, "int", None),
    "sac.disc_batch": (1024, "int", None),
    "train.rounds": (150, "int", None),
    "train.episodes_per_round": (10, "int", None),
    "train.eval_every": (5, "int", None),
    "train.eval_episodes": (10, "int", None),
    "train.cooldown_frac": (0.25, "float", None),
    "train.cooldown_floor": (0.25, "float", None),
    "expert.rounds": (300, "int", None),
    "expert.lr": (1e-3, "float", None),
    "expert.episodes_per_round": (10, "int", None),
    "expert.eval_every": (5, "int", None),
    "expert.eval_episodes": (10, "int", None),
    "expert.plateau_patience": (6, "int", None),
    "expert.min_improvement": (0.01, "float", None),
    "demo.n_traj": (10, "int", None),
    "seeds": ((0, 1, 2, 3, 4), "int_list", None),
}


def _format_value(value, kind: str) -> str:
    if kind == "int_list":
        return ",".join(str(int(v)) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class Config:
    """A fully resolved run configuration."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def default(cls) -> "Config":
        return cls({k: v for k, (v, _, _) in SCHEMA.items()})

    @classmethod
    def from_dict(cls, overrides: dict) -> "Config":
        return cls.default().with_overrides(overrides)

    def with_overrides(self, overrides: dict) -> "Config":
        values = dict(self.values)
        for key, raw in overrides.items():
            values[key] = _coerce(key, raw)
        return Config(values)

    def canonical(self) -> str:
        lines = [
            f"{key} = {_format_value(self.values[key], SCHEMA[key][1])}"
            for key in sorted(self.values)
        ]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.canonical())

    # ----- typed views ------------------------------------------------

    def env_spec(self, setting_id: int = 0, spur_source: str = "policy") -> EnvSpec:
        return EnvSpec(
            env_id=self["env.id"],
            horizon=self["env.horizon"],
            step_size=self["env.step_size"],
            setting_id=setting_id,
            n_settings=self["env.n_settings"],
            spur_source=spur_source,
        )

    def ppo_config(self, lr: float | None = None) -> PPOConfig:
        return PPOConfig(
            clip_eps=self["ppo.clip_eps"],
            gamma=self["ppo.gamma"],
            gae_lambda=self["ppo.gae_lambda"],
            epochs=self["ppo.epochs"],
            minibatch=self["ppo.minibatch"],
            vf_coef=self["ppo.vf_coef"],
            ent_coef=self["ppo.ent_coef"],
            lr=self["ppo.lr"] if lr is None else lr,
            kl_target=self["ppo.kl_target"],
        )

    def expert_ppo_config(self) -> PPOConfig:
        return self.ppo_config(lr=self["expert.lr"])

    def sac_config(self) -> SACConfig:
        return SACConfig(
            gamma=self["sac.gamma"],
            alpha=self["sac.alpha"],
            tau=self["sac.tau"],
            batch=self["sac.batch"],
            target_period=self["sac.target_period"],
            lr=self["sac.lr"],
        )

    def reg_config(self) -> RegConfig:
        kind = self["disc.reg"]
        return RegConfig(
            kind=kind,
            lam_irm=self["disc.lambda_irm"] if kind == "irm" else 0.0,
            lam_gp=self["disc.lambda_gp"] if kind == "gp" else 0.0,
            n_updates=self["disc.n_updates"],
        )

    def reward_mode(self) -> str:
        mode = self["reward_mode"]
        if mode != "auto":
            return mode
        return "logit" if self["head"] == "airl" else "neg_log_one_minus_d"

    def setting_mode(self) -> str:
        mode = self["setting_mode"]
        if mode != "auto":
            return mode
        return "replay_round" if self["algo"] == "sac" else "expert_source"

    def discount(self) -> float:
        return self["sac.gamma"] if self["algo"] == "sac" else self["ppo.gamma"]


def _coerce(key: str, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    _, kind, choices = SCHEMA[key]
    try:
        value = _PARSERS[kind](raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from e
    if choices is not None and value not in choices:
        raise ConfigError(f"{key!r} must be one of {choices}, got {value!r}")
    return value


def parse_config(text: str) -> Config:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        overrides[key.strip()] = raw.strip()
    return Config.from_dict(overrides)


def load_config(path) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
