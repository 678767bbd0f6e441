"""Render figures and delimited summaries from finished run directories."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from . import plotting
from .runner import read_metrics_json

SUMMARY_FIELDS = ["run", "model", "score_kind", "ood_dataset", "auroc", "fpr95", "precision",
                  "n_id", "n_ood", "config_hash"]


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _render_run(run_dir: Path, out_dir: Path) -> tuple[list[dict], list[Path]]:
    rows, figures = [], []
    metrics_path = run_dir / "metrics.json"
    if metrics_path.exists():
        for m in read_metrics_json(metrics_path):
            rows.append({"run": run_dir.name, **{k: m[k] for k in SUMMARY_FIELDS[1:]}})
    log_path = run_dir / "train_log.jsonl"
    if log_path.exists():
        records = [json.loads(line) for line in log_path.read_text().splitlines() if line.strip()]
        if records:
            figures.append(plotting.save_loss_curves(records, out_dir / f"{run_dir.name}_loss.png"))
            figures.append(plotting.save_energy_curves(records, out_dir / f"{run_dir.name}_energy.png"))
    for hist_csv in sorted(run_dir.glob("hist_*.csv")):
        h = _read_csv(hist_csv)
        edges = [float(r["bin_left"]) for r in h] + [float(h[-1]["bin_right"])]
        counts = {"id": [int(r["count_id"]) for r in h], "ood": [int(r["count_ood"]) for r in h]}
        kind = hist_csv.stem.split("_")[1]
        figures.append(plotting.save_histogram_svg(
            edges, counts, out_dir / f"{run_dir.name}_{hist_csv.stem}.png",
            title=f"{run_dir.name}: {kind} score", xlabel=f"{kind} score"))
    return rows, figures


def build_report(run_dir, out_dir=None) -> dict:
    """Walk ``run_dir`` (a single run or an ablation tree) and write
    ``summary.csv`` plus PNG figures into ``out_dir`` (default ``run_dir/report``)."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    run_dirs = sorted({p.parent for p in run_dir.rglob("metrics.json")} |
                      {p.parent for p in run_dir.rglob("train_log.jsonl")})
    run_dirs = [d for d in run_dirs if out_dir not in d.parents and d != out_dir]
    rows, figures = [], []
    for d in run_dirs:
        sub_rows, sub_figs = _render_run(d, out_dir)
        if d != run_dir:
            rel = d.relative_to(run_dir).as_posix()
            for r in sub_rows:
                r["run"] = rel
        rows.extend(sub_rows)
        figures.extend(sub_figs)

    summary_csv = out_dir / "summary.csv"
    with open(summary_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)

    ablation = run_dir / "ablation_summary.csv"
    if ablation.exists():
        summary = _read_csv(ablation)
        for ood in sorted({r["ood_dataset"] for r in summary}):
            figures.append(plotting.save_ablation_bars(summary, out_dir / f"ablation_auroc_{ood}.png", ood))
    return {"summary": str(summary_csv), "figures": [str(f) for f in figures], "n_runs": len(run_dirs)}
