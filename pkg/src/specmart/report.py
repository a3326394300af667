"""Aggregate run outputs into a plot-ready table and render figures.

Takes one or more per-step results CSVs (plus an optional reward-trace
CSV), aligns them on timestamps, writes a merged CSV and a summary JSON,
and renders PNG figures next to them: demand/allocation and prices per
input, cumulative profit across inputs, and the training reward curve.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

from .sim import RESULTS_CSV_COLUMNS

TRACE_COLUMNS = ["episode", "total_reward"]


class ReportError(ValueError):
    """Raised when report inputs do not parse or disagree on schema."""


def load_results(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"results file not found: {path}")
    df = pd.read_csv(path)
    missing = [c for c in RESULTS_CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ReportError(f"{path}: missing column '{missing[0]}'")
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    df["alloc_after"] = df["alloc_before"] + df["action_delta"]
    return df


def load_trace(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"trace file not found: {path}")
    df = pd.read_csv(path)
    missing = [c for c in TRACE_COLUMNS if c not in df.columns]
    if missing:
        raise ReportError(f"{path}: missing column '{missing[0]}'")
    return df


def _label_for(path: Path, seen: set[str]) -> str:
    label = path.stem
    suffix = 2
    while label in seen:
        label = f"{path.stem}_{suffix}"
        suffix += 1
    seen.add(label)
    return label


def merge_results(paths: list[str | Path]) -> tuple[pd.DataFrame, dict]:
    """Outer-join results tables on timestamp, suffixing columns by input.

    A single input passes through unchanged (plus the derived alloc_after
    column). Returns the merged frame and per-input summary metrics.
    """
    if not paths:
        raise ReportError("no results files given")
    frames = []
    summaries = {}
    seen: set[str] = set()
    for raw in paths:
        path = Path(raw)
        df = load_results(path)
        label = _label_for(path, seen)
        dynamic = float(df["profit_dyn"].sum())
        static = float(df["profit_static"].sum())
        summaries[label] = {
            "rows": int(len(df)),
            "cumulative_dynamic_profit": dynamic,
            "cumulative_static_profit": static,
            "normalized_profit_ratio": dynamic / static if static else float("nan"),
        }
        frames.append((label, df))

    if len(frames) == 1:
        return frames[0][1], summaries

    merged = None
    for label, df in frames:
        renamed = df.rename(columns={
            c: f"{c}_{label}" for c in df.columns if c != "timestamp"})
        merged = renamed if merged is None else merged.merge(
            renamed, on="timestamp", how="outer")
    merged = merged.sort_values("timestamp").reset_index(drop=True)
    return merged, summaries


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(frames: list[tuple[str, pd.DataFrame]], out_dir: Path,
                   trace: pd.DataFrame | None = None) -> list[Path]:
    """Render the standard figure set; returns the written paths."""
    written = []

    for label, df in frames:
        fig, ax = plt.subplots(figsize=(9, 4))
        ax.plot(df["timestamp"], df["demand"], label="demand", lw=1.0)
        ax.plot(df["timestamp"], df["forecast"], label="forecast",
                lw=0.8, alpha=0.8)
        ax.plot(df["timestamp"], df["alloc_after"], label="allocation", lw=1.2)
        ax.set_xlabel("time")
        ax.set_ylabel("SRUs")
        ax.set_title(f"Demand, forecast, and allocation ({label})")
        ax.legend(loc="best", fontsize=8)
        path = out_dir / f"demand_allocation_{label}.png"
        _save(fig, path)
        written.append(path)

        fig, ax = plt.subplots(figsize=(9, 3))
        ax.plot(df["timestamp"], df["price"], lw=0.9, color="tab:purple")
        ax.set_xlabel("time")
        ax.set_ylabel("currency / SRU")
        ax.set_title(f"SRU trade price ({label})")
        path = out_dir / f"price_{label}.png"
        _save(fig, path)
        written.append(path)

    fig, ax = plt.subplots(figsize=(9, 4))
    for label, df in frames:
        ax.plot(df["timestamp"], df["profit_dyn"].cumsum(),
                label=f"dynamic ({label})", lw=1.2)
        ax.plot(df["timestamp"], df["profit_static"].cumsum(),
                label=f"static ({label})", lw=1.0, ls="--")
    ax.set_xlabel("time")
    ax.set_ylabel("cumulative profit")
    ax.set_title("Cumulative profit: trading policy vs static baseline")
    ax.legend(loc="best", fontsize=8)
    path = out_dir / "profit_cumulative.png"
    _save(fig, path)
    written.append(path)

    if trace is not None:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(trace["episode"], trace["total_reward"], lw=1.0)
        ax.set_xlabel("episode")
        ax.set_ylabel("total reward")
        ax.set_title("Reward per training episode")
        path = out_dir / "reward_trace.png"
        _save(fig, path)
        written.append(path)

    return written


def build_report(results_paths: list[str | Path], out_dir: str | Path,
                 trace_path: str | Path | None = None,
                 figures: bool = True) -> dict:
    """Full report: merged CSV, summary JSON, and figures under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    merged, summaries = merge_results(results_paths)
    merged_path = out_dir / "report.csv"
    merged.to_csv(merged_path, index=False)

    summary_path = out_dir / "report_summary.json"
    with summary_path.open("w") as fh:
        json.dump({"inputs": summaries}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    artifacts = {"report_csv": str(merged_path), "summary_json": str(summary_path)}
    if figures:
        seen: set[str] = set()
        frames = [(_label_for(Path(p), seen), load_results(p))
                  for p in results_paths]
        trace = load_trace(trace_path) if trace_path else None
        figure_paths = render_figures(frames, out_dir, trace)
        artifacts["figures"] = [str(p) for p in figure_paths]
    return artifacts
