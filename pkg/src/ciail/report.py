"""Human-readable result tables and per-run learning-curve extraction."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ReportParseError
from .trainer import METRICS_COLUMNS


def read_metrics(path) -> list[dict]:
    """Parse a metrics.csv; malformed rows fail with their line number."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ReportParseError("empty metrics file", line=1)
    header = lines[0].split(",")
    for col in METRICS_COLUMNS:
        if col not in header:
            raise ReportParseError(f"missing column {col!r}", line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise ReportParseError(
                f"expected {len(header)} fields, got {len(parts)}", line=lineno
            )
        row = {}
        for col, raw in zip(header, parts):
            if raw == "":
                row[col] = None
            else:
                try:
                    row[col] = float(raw) if col != "round" else int(raw)
                except ValueError as e:
                    raise ReportParseError(f"bad value in {col!r}: {raw!r}",
                                           line=lineno) from e
        rows.append(row)
    return rows


def learning_curve(rows: list[dict]) -> list[tuple[int, float, float]]:
    return [
        (r["round"], r["eval_return_mean"], r["eval_return_std"])
        for r in rows
        if r["eval_return_mean"] is not None
    ]


def write_learning_curve_csv(path, rows: list[dict]) -> None:
    lines = ["round,eval_return_mean,eval_return_std"]
    lines += [f"{k},{m!r},{s!r}" for k, m, s in learning_curve(rows)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mark_best_per_row(table: list[list[str]]) -> list[list[str]]:
    """Mark the best (largest mean) cell per row with a trailing '*'."""
    marked = []
    for row in table:
        best_j, best_v = None, None
        for j, cell in enumerate(row[1:], start=1):
            if "±" not in cell:
                continue
            mean = float(cell.split("±")[0])
            if best_v is None or mean > best_v:
                best_j, best_v = j, mean
        new_row = list(row)
        if best_j is not None:
            new_row[best_j] = new_row[best_j] + " *"
        marked.append(new_row)
    return marked


def _render_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(header[j]), *(len(r[j]) for r in rows)) if rows else len(header[j])
        for j in range(len(header))
    ]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths))

    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows])


def report_summary(summary_path, expert_reference: str | None = None) -> str:
    """Table view of a sweep summary; best cell per row is starred."""
    lines = Path(summary_path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ReportParseError("empty summary file", line=1)
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ReportParseError("ragged summary row", line=lineno)
    out = ["normalized final ground-truth return (mean±std over seeds); "
           "* marks the best cell per row"]
    if expert_reference:
        out.append(f"expert reference: {expert_reference}")
    out.append(_render_table(header, _mark_best_per_row(rows)))
    return "\n".join(out) + "\n"


def report_runs(metrics_paths: list, out_dir=None,
                expert_reference: str | None = None) -> str:
    """Per-run final-evaluation table plus learning-curve CSV extraction."""
    header = ["run", "final_eval_return", "final_eval_norm", "rounds"]
    rows = []
    for path in metrics_paths:
        path = Path(path)
        mrows = read_metrics(path)
        curve = learning_curve(mrows)
        final = curve[-1][1] if curve else None
        info_path = path.parent / "run_info.json"
        norm = None
        if info_path.exists():
            info = json.loads(info_path.read_text(encoding="utf-8"))
            norm = info.get("final_eval_norm")
        rows.append([
            str(path.parent.name or path.name),
            "n/a" if final is None else f"{final:.6f}",
            "n/a" if norm is None else f"{norm:.6f}",
            str(len(mrows)),
        ])
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_learning_curve_csv(out / f"curve_{path.parent.name}.csv", mrows)
    out_lines = []
    if expert_reference:
        out_lines.append(f"expert reference: {expert_reference}")
    out_lines.append(_render_table(header, rows))
    return "\n".join(out_lines) + "\n"
