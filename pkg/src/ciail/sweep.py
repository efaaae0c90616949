"""Multi-seed runs and the regularization-strength x update-count grid."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import Config
from .demos import DemoSet
from .rollout import normalized_return
from .trainer import CiailTrainer

LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0)
N_UPDATES_GRID = (1, 2, 5, 10)


def run_seeds(cfg: Config, demos: DemoSet, seeds, out_dir, quiet: bool = True) -> list[dict]:
    """One configuration across seeds; per-seed outputs under seed_<k>/."""
    results = []
    for seed in seeds:
        trainer = CiailTrainer(cfg, demos, seed)
        trainer.train(out_dir=Path(out_dir) / f"seed_{seed}", quiet=quiet)
        info = trainer.run_info()
        results.append(info)
    return results


def _cell_name(reg: str, lam: float, n_upd: int) -> str:
    if reg == "erm":
        return f"erm_n{n_upd}"
    return f"irm_l{lam}_n{n_upd}"


def sweep(base_cfg: Config, demos: DemoSet, seeds, out_dir,
          lambdas=LAMBDA_GRID, n_updates=N_UPDATES_GRID,
          quiet: bool = True) -> dict:
    """Grid of irm strengths x discriminator update counts, plus an erm
    column per row. Failures are recorded per cell; the sweep continues."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells: dict[str, dict] = {}
    for n_upd in n_updates:
        for lam in (*lambdas, None):  # None marks the erm column
            if lam is None:
                overrides = {"disc.reg": "erm", "disc.n_updates": n_upd}
                name = _cell_name("erm", 0.0, n_upd)
            else:
                overrides = {"disc.reg": "irm", "disc.lambda_irm": lam,
                             "disc.n_updates": n_upd}
                name = _cell_name("irm", lam, n_upd)
            cfg = base_cfg.with_overrides(overrides)
            try:
                infos = run_seeds(cfg, demos, seeds, out / name, quiet=quiet)
                norms = [i["final_eval_norm"] for i in infos]
                cells[name] = {
                    "mean": float(np.mean(norms)),
                    "std": float(np.std(norms)),
                    "norms": norms,
                    "failed": False,
                }
            except Exception as e:  # record and continue per spec
                cells[name] = {"failed": True, "error": f"{type(e).__name__}: {e}"}
    table = summary_table(cells, lambdas, n_updates)
    write_summary_csv(out / "summary.csv", table, lambdas, n_updates)
    with open(out / "cells.json", "w", encoding="utf-8") as fh:
        json.dump(cells, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return cells


def summary_table(cells: dict, lambdas=LAMBDA_GRID,
                  n_updates=N_UPDATES_GRID) -> list[list[str]]:
    """Rows: n_updates; columns: irm lambdas then erm; cell 'mean±std'."""
    rows = []
    for n_upd in n_updates:
        row = [str(n_upd)]
        for lam in (*lambdas, None):
            name = _cell_name("erm" if lam is None else "irm",
                              0.0 if lam is None else lam, n_upd)
            cell = cells.get(name)
            if cell is None or cell.get("failed"):
                row.append("FAILED")
            else:
                row.append(f"{cell['mean']:.6f}±{cell['std']:.6f}")
        rows.append(row)
    return rows


def summary_header(lambdas=LAMBDA_GRID) -> list[str]:
    return ["n_updates"] + [f"irm_lambda_{lam}" for lam in lambdas] + ["erm"]


def write_summary_csv(path, table: list[list[str]], lambdas=LAMBDA_GRID,
                      n_updates=N_UPDATES_GRID) -> None:
    lines = [",".join(summary_header(lambdas))]
    lines += [",".join(row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
