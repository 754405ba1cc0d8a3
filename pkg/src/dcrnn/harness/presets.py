"""Built-in experiment settings.

``full`` is the large-scale setup (128 units, large datasets, long training);
``desk`` shrinks it to something a laptop finishes in minutes.  The MNIST
preset takes its IDX files from the directory named by ``DCRNN_MNIST_DIR``
(the standard uncompressed file names).
"""
from __future__ import annotations

import os
from pathlib import Path

from ..dynsys import LENGTH_GRID
from ..errors import ConfigError
from .config import EXPERIMENTS, ExperimentSpec, ModelSpec

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte", "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte", "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_paths(directory=None) -> dict:
    """IDX paths under ``directory`` (default ``$DCRNN_MNIST_DIR``); empty when unset."""
    directory = directory or os.environ.get("DCRNN_MNIST_DIR")
    if not directory:
        return {}
    return {key: str(Path(directory) / name) for key, name in MNIST_FILES.items()}


def _desk(name):
    if name == "lorenz-forecast":
        # the skip-coefficient scope alone cannot pull I + W_rec inside the unit disk
        models = [ModelSpec("dcrnn", 1, eig_scope="alphas_and_wrec"), ModelSpec("rnn"), ModelSpec("lstm")]
        return ExperimentSpec(name, trials=10, out="runs/lorenz-forecast", models=models,
                              train={"hidden": 32, "epochs": 100, "batch_size": 20},
                              data={"n_ic": 40, "traj_len": 200})
    if name == "lorenz-classify":
        models = [ModelSpec("dcrnn", 1), ModelSpec("dcrnn", 2), ModelSpec("lstm")]
        return ExperimentSpec(name, trials=5, out="runs/lorenz-classify", models=models,
                              train={"hidden": 32, "epochs": 200, "batch_size": 100},
                              data={"T": [10, 100], "n_per_class": 2000})
    if name == "copy":
        models = [ModelSpec("dcrnn", 1), ModelSpec("lstm")]
        return ExperimentSpec(name, trials=1, out="runs/copy", models=models,
                              train={"hidden": 32, "epochs": 50, "batch_size": 100},
                              data={"T": 20, "n_train": 2000, "n_test": 500})
    return ExperimentSpec(name, trials=1, out="runs/mnist-rows",
                          train={"hidden": 32, "epochs": 20, "batch_size": 100},
                          data={**mnist_paths(), "n_train": 2000, "n_test": 1000})


def _full(name):
    data = mnist_paths() if name == "mnist-rows" else {}
    trials = {"lorenz-forecast": 100, "lorenz-classify": 10}.get(name, 1)
    if name == "lorenz-classify":
        data = {"T": list(LENGTH_GRID)}
    return ExperimentSpec(name, trials=trials, out=f"runs/{name}", data=data)


PRESETS = {"desk": _desk, "full": _full}


def preset(name: str, scale: str = "desk") -> ExperimentSpec:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    if scale not in PRESETS:
        raise ConfigError(f"unknown scale {scale!r}")
    return PRESETS[scale](name)
