"""Demonstration datasets: line-delimited JSON with a self-describing header.

One header object on the first line, then one object per transition with
fixed field order. Floats round-trip exactly through repr, so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec
from .errors import CheckpointError
from .rollout import TransitionBatch

FORMAT_VERSION = 1


@dataclass
class DemoSet:
    """Expert trajectories grouped by source setting."""

    header: dict
    trajectories: list[tuple[int, TransitionBatch]]

    @property
    def n_settings(self) -> int:
        return int(self.header["n_settings"])

    @property
    def obs_dim(self) -> int:
        return int(self.header["obs_dim"])

    def flatten(self) -> TransitionBatch:
        return TransitionBatch.concat([tb for _, tb in self.trajectories])

    def setting_ids_present(self) -> list[int]:
        return sorted({e for e, _ in self.trajectories})

    def check_matches(self, spec: EnvSpec) -> None:
        if self.header["env_id"] != spec.env_id:
            raise CheckpointError(
                f"demo env {self.header['env_id']!r} != configured {spec.env_id!r}"
            )
        if self.obs_dim != spec.obs_dim:
            raise CheckpointError(
                f"demo obs_dim {self.obs_dim} != env obs_dim {spec.obs_dim}"
            )
        if int(self.header["horizon"]) != spec.horizon:
            raise CheckpointError("demo horizon does not match env horizon")


def make_header(spec: EnvSpec, generator_seed: int, expert_reference: dict,
                demo_returns: list[float], expert_eval: dict) -> dict:
    action_space = (
        {"kind": "discrete", "n": spec.n_actions}
        if spec.discrete
        else {"kind": "box", "dim": spec.action_dim}
    )
    return {
        "format_version": FORMAT_VERSION,
        "env_id": spec.env_id,
        "obs_dim": spec.obs_dim,
        "action_space": action_space,
        "n_settings": spec.n_settings,
        "horizon": spec.horizon,
        "step_size": spec.step_size,
        "generator_seed": generator_seed,
        "expert_reference": expert_reference,
        "expert_eval": expert_eval,
        "demo_returns": demo_returns,
    }


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_demos(path, demos: DemoSet) -> None:
    lines = [_dump(demos.header)]
    for traj_idx, (setting, tb) in enumerate(demos.trajectories):
        discrete = demos.header["action_space"]["kind"] == "discrete"
        for i in range(len(tb)):
            rec = {
                "traj": traj_idx,
                "setting": setting,
                "s": list(tb.obs[i]),
                "a": int(tb.act[i]) if discrete else list(np.asarray(tb.act[i])),
                "sn": list(tb.next_obs[i]),
                "done": bool(tb.done[i]),
            }
            lines.append(_dump(rec))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_demos(path) -> DemoSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CheckpointError(f"{path}: empty demo file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: bad header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version")
    discrete = header["action_space"]["kind"] == "discrete"
    horizon = int(header["horizon"])
    n_settings = int(header["n_settings"])

    by_traj: dict[int, tuple[int, list]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}:{lineno}: bad record: {e}") from e
        if rec["setting"] >= n_settings:
            raise CheckpointError(
                f"{path}:{lineno}: setting {rec['setting']} >= n_settings"
            )
        by_traj.setdefault(rec["traj"], (rec["setting"], []))[1].append(rec)

    trajectories = []
    for traj_idx in sorted(by_traj):
        setting, recs = by_traj[traj_idx]
        if len(recs) > horizon:
            raise CheckpointError(f"{path}: trajectory {traj_idx} exceeds horizon")
        n = len(recs)
        tb = TransitionBatch(
            obs=np.array([r["s"] for r in recs]),
            act=(np.array([r["a"] for r in recs], dtype=np.int64) if discrete
                 else np.array([r["a"] for r in recs], dtype=np.float64)),
            next_obs=np.array([r["sn"] for r in recs]),
            done=np.array([r["done"] for r in recs], dtype=bool),
            setting_id=np.full(n, setting, dtype=np.int64),
            round_id=np.full(n, -1, dtype=np.int64),
        )
        trajectories.append((setting, tb))
    return DemoSet(header=header, trajectories=trajectories)
