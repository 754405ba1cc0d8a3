"""Experiment configuration files.

A config is a small INI-like text file::

    # comments start with '#'
    [experiment]
    name = lorenz-forecast
    trials = 10
    seed = 0
    out = runs/forecast

    [train]
    hidden = 32
    epochs = 100

    [data]
    traj_len = 200

    [model]
    cell = dcrnn
    k = 1

    [model]
    cell = lstm

``[experiment]`` is required; ``[train]`` and ``[data]`` may appear once;
``[model]`` may repeat, one section per compared cell.  Every value is
checked against the schema below and errors carry the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..net import CELLS
from ..stability import SCOPES
from ..train import TrainConfig

EXPERIMENTS = ("lorenz-forecast", "lorenz-classify", "copy", "mnist-rows")
TASK_OF = {"lorenz-forecast": "forecast", "lorenz-classify": "classify", "copy": "copy",
           "mnist-rows": "image_rows"}

# section -> key -> value type; "ints" is a comma-separated list of integers
EXPERIMENT_KEYS = {"name": "str", "trials": "int", "seed": "int", "out": "str"}
TRAIN_KEYS = {
    "learning_rate": "float", "clip_norm": "float", "batch_size": "int", "hidden": "int",
    "epochs": "int", "beta_reg": "float", "eig_target": "float", "eig_scope": "str",
}
MODEL_KEYS = {"cell": "str", "k": "int", "label": "str", "eig_scope": "str", "beta_reg": "float"}
DATA_KEYS = {
    "lorenz-forecast": {"n_ic": "int", "ic_std": "float", "traj_len": "int", "window": "int",
                        "dt": "float", "train_fraction": "float"},
    "lorenz-classify": {"T": "ints", "n_per_class": "int", "dt": "float", "train_fraction": "float",
                        "traj_steps": "int"},
    "copy": {"T": "int", "n_train": "int", "n_test": "int"},
    "mnist-rows": {"train_images": "str", "train_labels": "str", "test_images": "str",
                   "test_labels": "str", "n_train": "int", "n_test": "int"},
}

# full-scale defaults
TRAIN_DEFAULTS = {
    "learning_rate": 0.001, "clip_norm": 5.0, "batch_size": 1000, "hidden": 128,
    "beta_reg": 1.0, "eig_target": 0.3, "eig_scope": "alphas_only",
}
EPOCH_DEFAULTS = {"lorenz-forecast": 1000, "lorenz-classify": 1000, "copy": 200, "mnist-rows": 200}
DATA_DEFAULTS = {
    "lorenz-forecast": {"n_ic": 200, "ic_std": 10.0, "traj_len": 1000, "window": 10, "dt": 0.01,
                        "train_fraction": 0.5},
    "lorenz-classify": {"T": [10], "n_per_class": 10000, "dt": 0.01, "train_fraction": 0.5},
    "copy": {"T": 20, "n_train": 10000, "n_test": 1000},
    "mnist-rows": {"n_train": 0, "n_test": 0},
}
DEFAULT_MODELS = {
    "lorenz-forecast": [("dcrnn", 1), ("rnn", 0), ("lstm", 0)],
    "lorenz-classify": [("dcrnn", 1), ("dcrnn", 2), ("dcrnn", 3), ("dcrnn", 4), ("dcrnn", 5),
                        ("rnn", 0), ("lstm", 0)],
    "copy": [("dcrnn", 1), ("lstm", 0)],
    "mnist-rows": [("dcrnn", 1), ("dcrnn", 3), ("rnn", 0), ("lstm", 0)],
}


@dataclass
class ModelSpec:
    cell: str
    k: int = 0
    label: str = ""
    eig_scope: str | None = None
    beta_reg: float | None = None

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.cell != "dcrnn":
            self.k = 0
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.eig_scope is not None and self.eig_scope not in SCOPES:
            raise ValueError(f"unknown eig_scope {self.eig_scope!r}")
        if not self.label:
            self.label = f"dcrnn-k{self.k}" if self.cell == "dcrnn" else self.cell


@dataclass
class ExperimentSpec:
    name: str
    trials: int = 1
    seed: int = 0
    out: str = "runs"
    models: list = field(default_factory=list)
    train: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        self.train = {**TRAIN_DEFAULTS, "epochs": EPOCH_DEFAULTS[self.name], **self.train}
        self.data = {**DATA_DEFAULTS[self.name], **self.data}
        if not self.models:
            self.models = [ModelSpec(cell, k) for cell, k in DEFAULT_MODELS[self.name]]
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate model labels {labels}")
        TrainConfig(**self.train)  # validate ranges once

    @property
    def task(self):
        return TASK_OF[self.name]

    def train_config(self, model: ModelSpec, seed: int) -> TrainConfig:
        overrides = {k: v for k, v in (("eig_scope", model.eig_scope), ("beta_reg", model.beta_reg))
                     if v is not None}
        return TrainConfig(cell=model.cell, k=model.k, seed=seed, **{**self.train, **overrides})


def _convert(kind, raw, line):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected {kind} value, got {raw!r}", line) from None
    if not raw:
        raise ConfigError("empty value", line)
    return raw


def parse_config_text(text: str) -> ExperimentSpec:
    """Parse config text into a validated spec (defaults applied)."""
    sections = []  # (name, header line, {key: (value text, line)})
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            name = line[1:-1].strip()
            if name not in ("experiment", "train", "data", "model"):
                raise ConfigError(f"unknown section [{name}]", lineno)
            if name != "model" and any(s[0] == name for s in sections):
                raise ConfigError(f"section [{name}] appears twice", lineno)
            sections.append((name, lineno, {}))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if not sections:
            raise ConfigError("key outside of any section", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        entries = sections[-1][2]
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        entries[key] = (value, lineno)

    exp = [s for s in sections if s[0] == "experiment"]
    if not exp:
        raise ConfigError("missing [experiment] section", 1)
    _, exp_line, exp_entries = exp[0]
    experiment = _typed(exp_entries, EXPERIMENT_KEYS, "experiment")
    if "name" not in experiment:
        raise ConfigError("experiment name required", exp_line)
    if experiment["name"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment['name']!r}; expected one of "
                          f"{', '.join(EXPERIMENTS)}", exp_entries["name"][1])
    name = experiment["name"]
    train, data, models = {}, {}, []
    for sec, header, entries in sections:
        if sec == "train":
            train = _typed(entries, TRAIN_KEYS, "train")
        elif sec == "data":
            data = _typed(entries, DATA_KEYS[name], f"data for {name}")
        elif sec == "model":
            values = _typed(entries, MODEL_KEYS, "model")
            if "cell" not in values:
                raise ConfigError("cell kind required", header)
            try:
                models.append(ModelSpec(**values))
            except ValueError as exc:
                raise ConfigError(str(exc), header) from None
    try:
        return ExperimentSpec(models=models, train=train, data=data, **experiment)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), exp_line) from None


def _typed(entries, schema, where):
    out = {}
    for key, (value, line) in entries.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in {where}", line)
        out[key] = _convert(schema[key], value, line)
    return out


def parse_config(path) -> ExperimentSpec:
    """Read and parse a config file."""
    return parse_config_text(Path(path).read_text())


def _fmt(value):
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def emit(spec: ExperimentSpec) -> str:
    """Config text that parses back to an equal spec (all defaults written out)."""
    lines = ["[experiment]", f"name = {spec.name}", f"trials = {spec.trials}",
             f"seed = {spec.seed}", f"out = {spec.out}", "", "[train]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in spec.train.items()]
    lines += ["", "[data]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in spec.data.items()]
    for m in spec.models:
        lines += ["", "[model]"]
        for f in dataclasses.fields(m):
            v = getattr(m, f.name)
            if v is not None:
                lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
