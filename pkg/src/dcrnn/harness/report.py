"""Report files for a finished experiment.

Written into one directory:

- ``summary.csv``      variant, model, metric, n_ok, n_failed, mean, std
- ``ranks.csv``        variant, model, rank_1 .. rank_M, trials
- ``reductions.csv``   variant, model, baseline, n, wins, mean_reduction, std_reduction
- ``curves.csv``       variant, model, trial, epoch and the per-epoch metrics
- ``length_trend.csv`` model, T, n, mean, std (classification only)
- ``trials.jsonl``     one line per (variant, model, trial) with its final metrics
- ``metrics/*.jsonl``  the full per-epoch metrics stream of every trial
- ``checkpoints/*.dcrn`` trained parameters of every successful trial
- ``experiment.cfg``   the resolved configuration

``variant`` is the sequence length for the classification experiment and
empty otherwise.  Floats are written with ``repr`` so re-emitting the same
result gives identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..train import metrics_line
from .checkpoint import Checkpoint, save_checkpoint
from .config import emit
from .experiment import ExperimentResult

CURVE_KEYS = ("train_loss", "reg_loss", "total_loss", "train_metric", "test_metric",
              "spectral_radius", "eig_loss")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def trial_stem(rec) -> str:
    variant = "" if rec.variant is None else f"T{rec.variant}-"
    return f"{variant}{rec.model}-trial{rec.trial}"


def render_report(result: ExperimentResult) -> dict:
    """File name -> text for every table (no checkpoints)."""
    files = {}
    files["summary.csv"] = _csv(
        [[r["variant"], r["model"], r["metric"], r["n_ok"], r["n_failed"], r["mean"], r["std"]]
         for r in result.summary()],
        ["variant", "model", "metric", "n_ok", "n_failed", "mean", "std"])
    n_models = len(result.model_labels)
    files["ranks.csv"] = _csv(
        [[r["variant"], r["model"], *r["ranks"], r["trials"]] for r in result.rank_counts()],
        ["variant", "model", *[f"rank_{i + 1}" for i in range(n_models)], "trials"])
    files["reductions.csv"] = _csv(
        [[r["variant"], r["model"], r["baseline"], r["n"], r["wins"], r["mean_reduction"],
          r["std_reduction"]] for r in result.reductions()],
        ["variant", "model", "baseline", "n", "wins", "mean_reduction", "std_reduction"])
    curve_rows = []
    for rec in result.records:
        for m in rec.metrics:
            curve_rows.append([rec.variant, rec.model, rec.trial, m["epoch"], *[m.get(k) for k in CURVE_KEYS]])
    files["curves.csv"] = _csv(curve_rows, ["variant", "model", "trial", "epoch", *CURVE_KEYS])
    if result.spec.name == "lorenz-classify":
        files["length_trend.csv"] = _csv(
            [[r["model"], r["T"], r["n"], r["mean"], r["std"]] for r in result.length_trend()],
            ["model", "T", "n", "mean", "std"])
    lines = []
    for rec in result.records:
        lines.append(json.dumps({
            "variant": rec.variant, "model": rec.model, "trial": rec.trial, "seed": rec.seed,
            "status": rec.status, "error": rec.error, "metric": result.metric,
            "train_metric": rec.train_metric, "test_metric": rec.test_metric,
            "metrics_file": f"metrics/{trial_stem(rec)}.jsonl",
        }))
    files["trials.jsonl"] = "".join(line + "\n" for line in lines)
    for rec in result.records:
        files[f"metrics/{trial_stem(rec)}.jsonl"] = "".join(metrics_line(m) + "\n" for m in rec.metrics)
    files["experiment.cfg"] = emit(result.spec)
    return files


def emit_report(result: ExperimentResult, out_dir, checkpoints=True) -> list:
    """Write all report files under ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    written = []
    for name, text in render_report(result).items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        written.append(path)
    if checkpoints:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        for rec in result.records:
            if rec.ok and rec.params is not None:
                path = out / "checkpoints" / f"{trial_stem(rec)}.dcrn"
                save_checkpoint(path, Checkpoint(rec.params, step=rec.steps, rng_state=rec.rng_state,
                                                 extra={"experiment": result.spec.name, "model": rec.model,
                                                        "trial": rec.trial, "seed": rec.seed}))
                written.append(path)
    return written
