"""Machine-readable run reports plus rendered figures.

Three delimited artifacts per run: a one-row summary (mean, spread, top-3),
the full query trace (every number in the summary can be recomputed from
it), and the per-fidelity score-versus-step series for the active-learning
phase.  A JSON report bundles the same data with the resolved config echo.
Figures (PNG) are rendered next to the delimited files: query scores over
active-learning steps per fidelity, and a mode comparison for ablations.

Wall-clock timestamps are kept out of every emitted file so that reruns
and resumed runs stay byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sequences import Sequence, mean_pairwise_similarity

TRACE_COLUMNS = ("step", "phase", "fidelity", "sequence", "score", "cost", "failed")
SUMMARY_COLUMNS = ("mode", "seed", "n_finals", "mean_score", "sd_score",
                   "top1", "top2", "top3", "mean_pairwise_similarity",
                   "total_cost", "n_queries", "shortfall")


@dataclass
class RunResult:
    """Everything a finished (or paused) run reports."""

    mode: str
    seed: int
    finals: list[dict]                 # {"sequence": str, "score": float}
    mean_score: float | None
    sd_score: float | None
    top3: list[float]
    mean_similarity: float | None
    total_cost: float
    shortfall: bool
    active_levels: list[int]
    stats: dict
    config_echo: dict
    records: list[dict] = field(default_factory=list)  # trace rows, no timestamps


def build_result(run) -> RunResult:
    """Assemble a RunResult from a controller run (timestamps dropped)."""
    records = []
    for r in run.env.ledger.records:
        records.append({
            "step": r.step, "phase": r.phase, "fidelity": r.fidelity,
            "sequence": r.sequence, "score": r.score, "cost": r.cost,
            "failed": r.failed,
        })
    scores = sorted(y for _, y in run.finals)
    finals = [{"sequence": x.to_string(), "score": y}
              for x, y in sorted(run.finals, key=lambda t: t[1])]
    seqs = [x for x, _ in run.finals]
    from dataclasses import asdict

    return RunResult(
        mode=run.mode,
        seed=run.seed,
        finals=finals,
        mean_score=float(np.mean(scores)) if scores else None,
        sd_score=float(np.std(scores)) if scores else None,
        top3=scores[:3],
        mean_similarity=mean_pairwise_similarity(seqs) if len(seqs) >= 2 else None,
        total_cost=run.env.ledger.spent,
        shortfall=run.finals_shortfall,
        active_levels=list(run.active),
        stats=asdict(run.stats),
        config_echo=run.config.to_dict(),
        records=records,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_row(result: RunResult) -> dict:
    top3 = list(result.top3) + [None] * (3 - len(result.top3))
    return {
        "mode": result.mode,
        "seed": result.seed,
        "n_finals": len(result.finals),
        "mean_score": result.mean_score,
        "sd_score": result.sd_score,
        "top1": top3[0],
        "top2": top3[1],
        "top3": top3[2],
        "mean_pairwise_similarity": result.mean_similarity,
        "total_cost": result.total_cost,
        "n_queries": len(result.records),
        "shortfall": result.shortfall,
    }


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_summary_csv(results: list[RunResult], path: Path) -> None:
    _write_csv(path, SUMMARY_COLUMNS, [summary_row(r) for r in results])


def write_trace_csv(result: RunResult, path: Path) -> None:
    _write_csv(path, TRACE_COLUMNS, result.records)


def write_series_csv(result: RunResult, path: Path) -> None:
    rows = [{"fidelity": r["fidelity"], "step": r["step"], "score": r["score"]}
            for r in result.records if r["phase"] == "al" and not r["failed"]]
    _write_csv(path, ("fidelity", "step", "score"), rows)


def write_report_json(result: RunResult, path: Path) -> None:
    payload = {
        "mode": result.mode,
        "seed": result.seed,
        "summary": summary_row(result),
        "finals": result.finals,
        "active_levels": result.active_levels,
        "stats": result.stats,
        "config": result.config_echo,
        "trace": result.records,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")


# -- figures --------------------------------------------------------------------


def render_progress_figure(result: RunResult, path: Path) -> None:
    """Query score against active-learning step, one panel per fidelity."""
    by_fid: dict[int, list[tuple[int, float]]] = {}
    for r in result.records:
        if r["phase"] == "al" and not r["failed"]:
            by_fid.setdefault(r["fidelity"], []).append((r["step"], r["score"]))
    fids = sorted(by_fid) or [1]
    fig, axes = plt.subplots(1, len(fids), figsize=(4 * len(fids), 3.2),
                             squeeze=False, sharex=False)
    for ax, fid in zip(axes[0], fids):
        pts = by_fid.get(fid, [])
        if pts:
            steps, scores = zip(*pts)
            ax.plot(steps, scores, "o", ms=4, alpha=0.6)
            ax.plot(steps, np.minimum.accumulate(scores), "-", lw=1.5,
                    label="best so far")
            ax.legend(loc="best", fontsize=8, frameon=False)
        ax.set_title(f"fidelity {fid}")
        ax.set_xlabel("active-learning step")
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel("oracle score (lower is better)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_mode_comparison_figure(results: list[RunResult], path: Path) -> None:
    """Mean of the top-3 final scores per mode, seeds as points."""
    by_mode: dict[str, list[float]] = {}
    for r in results:
        if r.top3:
            by_mode.setdefault(r.mode, []).append(float(np.mean(r.top3)))
    if not by_mode:
        return
    modes = sorted(by_mode)
    means = [float(np.mean(by_mode[m])) for m in modes]
    fig, ax = plt.subplots(figsize=(1.6 * len(modes) + 2, 3.4))
    ax.bar(range(len(modes)), means, color="#4878d0", alpha=0.8)
    for i, m in enumerate(modes):
        vals = by_mode[m]
        ax.plot([i] * len(vals), vals, "k.", ms=5, alpha=0.7)
    ax.set_xticks(range(len(modes)))
    ax.set_xticklabels(modes, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("mean top-3 score (lower is better)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# -- emission entry points ----------------------------------------------------------


def emit_run_report(result: RunResult, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write one run's summary, trace, series, JSON, and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    write_summary_csv([result], out / "summary.csv")
    written.append(out / "summary.csv")
    write_trace_csv(result, out / "trace.csv")
    written.append(out / "trace.csv")
    write_series_csv(result, out / "series.csv")
    written.append(out / "series.csv")
    write_report_json(result, out / "report.json")
    written.append(out / "report.json")
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        render_progress_figure(result, fig_dir / "al_progress.png")
        written.append(fig_dir / "al_progress.png")
    return written


def emit_combined_summary(results: list[RunResult], out_dir: str | Path,
                          figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(results, out / "summary.csv")
    written = [out / "summary.csv"]
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        render_mode_comparison_figure(results, fig_dir / "mode_comparison.png")
        written.append(fig_dir / "mode_comparison.png")
    return written
