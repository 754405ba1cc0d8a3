"""Multi-trial experiment runs and their summary statistics.

Trial ``t`` uses seed ``spec.seed + t`` for both the data and every model, so
all models in a trial see the same dataset.  For the classification
experiment each sequence length listed in ``data.T`` is a separate variant.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dynsys
from ..errors import DcrnnError, ExperimentError
from ..train import HIGHER_IS_BETTER, PRIMARY_METRIC, train_model
from .config import ExperimentSpec

log = logging.getLogger(__name__)


@dataclass
class TrialRecord:
    variant: int | None
    trial: int
    seed: int
    model: str
    status: str  # "ok" or "failed"
    metrics: list = field(default_factory=list)
    error: str | None = None
    params: object = None
    steps: int = 0
    rng_state: dict | None = None

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def final(self) -> dict:
        return self.metrics[-1] if self.metrics else {}

    @property
    def test_metric(self):
        return self.final.get("test_metric") if self.ok else None

    @property
    def train_metric(self):
        return self.final.get("train_metric") if self.ok else None


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return math.nan, math.nan
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list = field(default_factory=list)

    @property
    def metric(self):
        return PRIMARY_METRIC[self.spec.task]

    @property
    def higher_is_better(self):
        return HIGHER_IS_BETTER[self.metric]

    @property
    def variants(self):
        return list(dict.fromkeys(r.variant for r in self.records))

    @property
    def model_labels(self):
        return [m.label for m in self.spec.models]

    def select(self, variant=None, model=None, ok_only=True):
        return [r for r in self.records
                if (variant is None or r.variant == variant) and (model is None or r.model == model)
                and (r.ok or not ok_only)]

    def values(self, model, variant=None, which="test"):
        attr = "test_metric" if which == "test" else "train_metric"
        return [getattr(r, attr) for r in self.select(variant, model)]

    def summary(self):
        """Rows ``{variant, model, metric, n_ok, n_failed, mean, std}`` of the final test metric."""
        rows = []
        for v in self.variants:
            for label in self.model_labels:
                recs = self.select(v, label, ok_only=False)
                ok = [r.test_metric for r in recs if r.ok]
                mean, std = _mean_std(ok)
                rows.append({"variant": v, "model": label, "metric": self.metric, "n_ok": len(ok),
                             "n_failed": len(recs) - len(ok), "mean": mean, "std": std})
        return rows

    def _by_trial(self, variant):
        table = {}
        for r in self.select(variant):
            table.setdefault(r.trial, {})[r.model] = r.test_metric
        return table

    def rank_counts(self):
        """Per variant and model: how often it placed 1st, 2nd, ... among the models of a trial."""
        labels = self.model_labels
        rows = []
        for v in self.variants:
            counts = {label: [0] * len(labels) for label in labels}
            for _, scores in sorted(self._by_trial(v).items()):
                present = [label for label in labels if label in scores]
                sign = -1.0 if self.higher_is_better else 1.0
                ordered = sorted(present, key=lambda lab: (sign * scores[lab], labels.index(lab)))
                for place, label in enumerate(ordered):
                    counts[label][place] += 1
            for label in labels:
                rows.append({"variant": v, "model": label, "ranks": counts[label],
                             "trials": sum(counts[label])})
        return rows

    def _error(self, value):
        return 1.0 - value if self.higher_is_better else value

    def reductions(self):
        """Relative reduction of each model's error versus each other model, over shared trials.

        Error is the primary metric for losses and ``1 - accuracy`` for accuracy.
        """
        labels = self.model_labels
        rows = []
        for v in self.variants:
            table = self._by_trial(v)
            for a in labels:
                for b in labels:
                    if a == b:
                        continue
                    pairs = [(s[a], s[b]) for _, s in sorted(table.items()) if a in s and b in s]
                    reds = [1.0 - self._error(x) / self._error(y) for x, y in pairs if self._error(y) > 0]
                    wins = sum(self._error(x) < self._error(y) for x, y in pairs)
                    mean, std = _mean_std(reds)
                    rows.append({"variant": v, "model": a, "baseline": b, "n": len(pairs),
                                 "wins": wins, "mean_reduction": mean, "std_reduction": std})
        return rows

    def length_trend(self):
        """Mean final test metric against sequence length (classification only)."""
        if self.spec.name != "lorenz-classify":
            return []
        return [{"model": row["model"], "T": row["variant"], "n": row["n_ok"], "mean": row["mean"],
                 "std": row["std"]} for row in self.summary()]


def variants_of(spec: ExperimentSpec):
    if spec.name == "lorenz-classify":
        return list(spec.data["T"])
    return [None]


def build_datasets(spec: ExperimentSpec, seed: int, variant=None):
    """(train, test) datasets for one trial."""
    d = spec.data
    if spec.name == "lorenz-forecast":
        return dynsys.make_forecast_dataset(
            n_ic=d["n_ic"], ic_std=d["ic_std"], traj_len=d["traj_len"], window=d["window"], dt=d["dt"],
            split=dynsys.SplitSpec(d["train_fraction"], seed), seed=seed)
    if spec.name == "lorenz-classify":
        ds = dynsys.make_classification_dataset(T=variant, n_per_class=d["n_per_class"], dt=d["dt"],
                                                seed=seed, traj_steps=d.get("traj_steps"))
        tr, te = dynsys.split_indices(len(ds), dynsys.SplitSpec(d["train_fraction"], seed))
        return ds.subset(tr), (ds.subset(te) if len(te) else None)
    if spec.name == "copy":
        ds = dynsys.make_copy_dataset(T=d["T"], n=d["n_train"] + d["n_test"], seed=seed)
        n = d["n_train"]
        return ds.subset(slice(0, n)), (ds.subset(slice(n, None)) if d["n_test"] else None)
    return _mnist(d, seed)


def _mnist(d, seed):
    missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels") if k not in d]
    if missing:
        raise ExperimentError(f"mnist-rows needs user-supplied IDX paths: {', '.join(missing)}")

    def load(images, labels, n):
        x = dynsys.read_idx(Path(images))
        y = dynsys.read_idx(Path(labels))
        if n:
            x, y = x[:n], y[:n]
        return dynsys.make_image_rows_dataset(x, y, seed)

    return (load(d["train_images"], d["train_labels"], d["n_train"]),
            load(d["test_images"], d["test_labels"], d["n_test"]))


def run_experiment(spec: ExperimentSpec, on_record=None) -> ExperimentResult:
    """Run every (variant, trial, model) combination; failures are recorded and skipped."""
    result = ExperimentResult(spec)
    for variant in variants_of(spec):
        for trial in range(spec.trials):
            seed = spec.seed + trial
            try:
                train, test = build_datasets(spec, seed, variant)
                data_error = None
            except (DcrnnError, OSError) as exc:
                data_error = f"data generation failed: {type(exc).__name__}: {exc}"
            for model in spec.models:
                if data_error is not None:
                    rec = TrialRecord(variant, trial, seed, model.label, "failed", error=data_error)
                else:
                    rec = _run_one(spec, model, variant, trial, seed, train, test)
                if not rec.ok:
                    warnings.warn(f"{spec.name} {model.label} trial {trial}"
                                  f"{'' if variant is None else f' T={variant}'} failed: {rec.error}",
                                  RuntimeWarning, stacklevel=2)
                result.records.append(rec)
                if on_record is not None:
                    on_record(rec)
    if not any(r.ok for r in result.records):
        raise ExperimentError(f"all {len(result.records)} trials of {spec.name} failed")
    return result


def _run_one(spec, model, variant, trial, seed, train, test):
    cfg = spec.train_config(model, seed)
    log.info("%s %s trial %d (seed %d)", spec.name, model.label, trial, seed)
    try:
        res = train_model(cfg, train, test)
    except DcrnnError as exc:
        metrics = getattr(exc, "metrics", [])
        return TrialRecord(variant, trial, seed, model.label, "failed", metrics,
                           f"{type(exc).__name__}: {exc}")
    return TrialRecord(variant, trial, seed, model.label, "ok", res.metrics, params=res.params,
                       steps=res.adam.step, rng_state=res.rng_state)
