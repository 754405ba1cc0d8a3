"""Experiment data: Lorenz trajectories, sequence datasets, copy task, IDX files."""
from __future__ import annotations

import gzip
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, FormatError, UnsupportedVersionError

TASKS = ("forecast", "classify", "copy", "image_rows")
LENGTH_GRID = (10, 20, 50, 100, 200, 500)
COPY_PAYLOAD = 10
COPY_SYMBOLS = 10
BLANK = 8
DELIMITER = 9
TRANSIENT_STEPS = 100
MAX_IC_RETRIES = 100

DATASET_MAGIC = b"DCDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.sigma, self.rho, self.beta)):
            raise ValueError("Lorenz parameters must be finite")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


CLASS_A = LorenzParams(10.0, 28.0, 8.0 / 3.0)
CLASS_B = LorenzParams(11.0, 29.0, 3.0)


@dataclass
class Trajectory:
    dt: float
    states: np.ndarray  # [steps + 1, 3]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


@dataclass
class SequenceDataset:
    """Batched sequences for one task.

    ``inputs`` is always ``[N, T, d]`` float64.  ``targets`` is ``[N, T, d]``
    float64 for forecasting, ``[N]`` int labels for classification and image
    rows, and ``[N, T]`` int symbol ids for the copy task.
    """

    task: str
    inputs: np.ndarray
    targets: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.inputs.ndim != 3 or self.inputs.shape[0] == 0:
            raise ValueError(f"inputs must be a non-empty [N, T, d] tensor, got {self.inputs.shape}")
        n, t, _ = self.inputs.shape
        expected = {
            "forecast": self.inputs.shape,
            "classify": (n,),
            "image_rows": (n,),
            "copy": (n, t),
        }[self.task]
        if self.targets.shape != expected:
            raise ValueError(f"{self.task} targets must have shape {expected}, got {self.targets.shape}")
        if self.task == "classify" and not np.isin(self.targets, (0, 1)).all():
            raise ValueError("classification labels must be 0 or 1")
        if self.task == "copy" and not ((self.targets >= 0) & (self.targets < COPY_SYMBOLS)).all():
            raise ValueError("copy symbols must lie in 0..9")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def seq_len(self):
        return self.inputs.shape[1]

    @property
    def input_dim(self):
        return self.inputs.shape[2]

    @property
    def n_classes(self):
        if self.task == "forecast":
            return None
        if self.task == "copy":
            return COPY_SYMBOLS
        if self.task == "classify":
            return 2
        return int(self.targets.max()) + 1

    def subset(self, idx) -> "SequenceDataset":
        return SequenceDataset(self.task, self.inputs[idx], self.targets[idx], self.seed, dict(self.config))


# --------------------------------------------------------------------------- Lorenz

def lorenz_deriv(state, p: LorenzParams = CLASS_A):
    """Right-hand side of the Lorenz system; works on ``[..., 3]`` arrays."""
    state = np.asarray(state, dtype=np.float64)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z], axis=-1)


def integrate_euler_batch(x0, p: LorenzParams, dt: float, steps: int) -> np.ndarray:
    """Forward Euler from every row of ``x0`` at once; returns ``[steps + 1, N, 3]``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    out = np.empty((steps + 1,) + x0.shape)
    out[0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            out[i + 1] = out[i] + dt * lorenz_deriv(out[i], p)
            if not np.isfinite(out[i + 1]).all():
                raise DivergenceError(f"Euler integration diverged at step {i + 1}", step=i + 1)
    return out


def integrate_euler(x0, p: LorenzParams, dt: float, steps: int) -> Trajectory:
    """``state[i+1] = state[i] + dt * lorenz_deriv(state[i])`` for ``steps`` steps."""
    states = integrate_euler_batch(np.asarray(x0, dtype=np.float64)[None, :], p, dt, steps)
    return Trajectory(dt=dt, states=states[:, 0, :])


def split_indices(n: int, split: SplitSpec):
    """Deterministic shuffled (train, test) index arrays."""
    perm = np.random.default_rng(split.shuffle_seed).permutation(n)
    n_train = max(1, int(round(split.train_fraction * n)))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def make_forecast_dataset(n_ic=200, ic_std=10.0, traj_len=1000, window=10, dt=0.01,
                          p: LorenzParams = CLASS_A, split: SplitSpec | None = None, seed=0):
    """Next-state prediction windows from Gaussian initial conditions.

    Each initial condition yields ``traj_len + 1`` Euler states; inputs are the
    first ``traj_len`` states cut into non-overlapping windows and targets are
    the same windows advanced by one step.  Initial conditions are split
    between train and test before any trajectory is generated, so no test
    trajectory is ever seen in training.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    if traj_len < window:
        raise ValueError("traj_len must be at least window")
    split = split or SplitSpec(0.5, seed)
    rng = np.random.default_rng(seed)
    ics = rng.normal(0.0, ic_std, size=(n_ic, 3))
    try:
        trajs = integrate_euler_batch(ics, p, dt, traj_len).transpose(1, 0, 2)
    except DivergenceError:
        # slow path: integrate one by one and redraw the divergent ones
        trajs = []
        for i in range(n_ic):
            x0 = ics[i]
            for _ in range(MAX_IC_RETRIES):
                try:
                    trajs.append(integrate_euler_batch(x0, p, dt, traj_len)[:, 0, :])
                    break
                except DivergenceError:
                    x0 = rng.normal(0.0, ic_std, size=3)
            else:
                raise DivergenceError(f"initial condition {i} diverged {MAX_IC_RETRIES} times")
        trajs = np.stack(trajs)
    trajs = np.ascontiguousarray(trajs)  # [n_ic, traj_len + 1, 3]
    n_win = traj_len // window
    used = n_win * window
    inputs = trajs[:, :used].reshape(n_ic, n_win, window, 3)
    targets = trajs[:, 1:used + 1].reshape(n_ic, n_win, window, 3)
    train_ic, test_ic = split_indices(n_ic, split)
    config = dict(n_ic=n_ic, ic_std=ic_std, traj_len=traj_len, window=window, dt=dt,
                  sigma=p.sigma, rho=p.rho, beta=p.beta,
                  train_fraction=split.train_fraction, shuffle_seed=split.shuffle_seed)

    def build(ic_idx):
        if len(ic_idx) == 0:
            x = np.empty((0, window, 3))
            return x, x.copy()
        return inputs[ic_idx].reshape(-1, window, 3), targets[ic_idx].reshape(-1, window, 3)

    x_tr, y_tr = build(train_ic)
    train = SequenceDataset("forecast", x_tr, y_tr, seed, dict(config, part="train"))
    x_te, y_te = build(test_ic)
    test = SequenceDataset("forecast", x_te, y_te, seed, dict(config, part="test")) if len(x_te) else None
    return train, test


def class_trajectory(p: LorenzParams, dt=0.01, steps=20 * max(LENGTH_GRID)) -> np.ndarray:
    """Post-transient Euler trajectory from (1, 1, 1): ``[steps, 3]``."""
    states = integrate_euler_batch([1.0, 1.0, 1.0], p, dt, TRANSIENT_STEPS + steps)[:, 0, :]
    return states[TRANSIENT_STEPS + 1:]


def make_classification_dataset(pa: LorenzParams = CLASS_A, pb: LorenzParams = CLASS_B, T=10,
                                n_per_class=10000, dt=0.01, seed=0, traj_steps=None):
    """Windows of length ``T`` at uniform random offsets along one trajectory per class.

    ``traj_steps`` defaults to twenty times the longest sequence length of the
    standard grid, so every ``T`` draws from the same two trajectories.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if traj_steps is None:
        traj_steps = 20 * max(max(LENGTH_GRID), T)
    if traj_steps < T:
        raise ValueError("traj_steps must be at least T")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, p in enumerate((pa, pb)):
        traj = class_trajectory(p, dt, traj_steps)
        starts = rng.integers(0, traj_steps - T + 1, size=n_per_class)
        xs.append(traj[starts[:, None] + np.arange(T)])
        ys.append(np.full(n_per_class, label, dtype=np.int64))
    order = rng.permutation(2 * n_per_class)
    inputs = np.concatenate(xs)[order]
    targets = np.concatenate(ys)[order]
    config = dict(T=T, n_per_class=n_per_class, dt=dt, traj_steps=traj_steps,
                  pa=[pa.sigma, pa.rho, pa.beta], pb=[pb.sigma, pb.rho, pb.beta])
    return SequenceDataset("classify", inputs, targets, seed, config)


# --------------------------------------------------------------------------- copy task

def make_copy_dataset(T=20, n=1000, seed=0) -> SequenceDataset:
    """Copy-memory sequences of length ``T + 20`` over ten one-hot symbols."""
    if T < 1:
        raise ValueError("T must be at least 1")
    L = T + 2 * COPY_PAYLOAD
    rng = np.random.default_rng(seed)
    payload = rng.integers(0, BLANK, size=(n, COPY_PAYLOAD))
    seq = np.full((n, L), BLANK, dtype=np.int64)
    seq[:, :COPY_PAYLOAD] = payload
    seq[:, T + COPY_PAYLOAD - 1] = DELIMITER
    target = np.full((n, L), BLANK, dtype=np.int64)
    target[:, T + COPY_PAYLOAD:] = payload
    inputs = np.eye(COPY_SYMBOLS)[seq]
    return SequenceDataset("copy", inputs, target, seed, dict(T=T, n=n))


def copy_baseline_loss(T: int) -> float:
    """Cross entropy of the memoryless strategy (blank everywhere, uniform guess on payload)."""
    return COPY_PAYLOAD * math.log(8) / (T + 2 * COPY_PAYLOAD)


# --------------------------------------------------------------------------- IDX / MNIST

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803


def parse_idx(raw: bytes) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError("truncated IDX magic", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic >> 8 != 0x08 or (magic & 0xFF) == 0:
        raise FormatError(f"bad IDX magic 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) < header + count:
        raise FormatError(f"IDX payload truncated: expected {count} bytes", offset=len(raw))
    if len(raw) > header + count:
        raise FormatError("trailing bytes after IDX payload", offset=header + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if ndim == 1:
        return data.astype(np.int64)
    return data.astype(np.float64) / 255.0


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzip-compressed); images are scaled to [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def make_image_rows_dataset(images, labels, seed=0) -> SequenceDataset:
    """Treat each 28x28 image as 28 steps of 28 features."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 3 or len(images) != len(labels):
        raise ValueError("images must be [N, rows, cols] with one label each")
    return SequenceDataset("image_rows", images, labels, seed, dict(rows=images.shape[1]))


# --------------------------------------------------------------------------- container files

def _header(ds: SequenceDataset) -> dict:
    n, t, d = ds.inputs.shape
    return {
        "task": ds.task, "N": n, "T": t, "d": d, "seed": ds.seed,
        "target_shape": list(ds.targets.shape),
        "target_dtype": "f8" if ds.task == "forecast" else "i4",
        "config": ds.config,
    }


def dumps_dataset(ds: SequenceDataset) -> bytes:
    header = json.dumps(_header(ds), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<II", DATASET_VERSION, len(header)))
    buf.write(header)
    buf.write(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
    tdtype = "<f8" if ds.task == "forecast" else "<i4"
    buf.write(np.ascontiguousarray(ds.targets, dtype=tdtype).tobytes())
    return buf.getvalue()


def loads_dataset(raw: bytes) -> SequenceDataset:
    if len(raw) < 12:
        raise FormatError("truncated dataset header", offset=len(raw))
    if raw[:4] != DATASET_MAGIC:
        raise FormatError("bad dataset magic", offset=0)
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"unsupported dataset version {version}", offset=4)
    pos = 12
    if len(raw) < pos + hlen:
        raise FormatError("truncated dataset header", offset=len(raw))
    try:
        header = json.loads(raw[pos:pos + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable dataset header: {exc}", offset=pos) from exc
    pos += hlen
    shape = (header["N"], header["T"], header["d"])
    tshape = tuple(header["target_shape"])
    tdtype = "<" + header["target_dtype"]
    nin = math.prod(shape) * 8
    ntg = math.prod(tshape) * np.dtype(tdtype).itemsize
    if len(raw) != pos + nin + ntg:
        raise FormatError(f"dataset payload size mismatch: expected {nin + ntg} bytes",
                          offset=min(len(raw), pos + nin + ntg))
    inputs = np.frombuffer(raw, dtype="<f8", count=math.prod(shape), offset=pos).reshape(shape).astype(np.float64)
    targets = np.frombuffer(raw, dtype=tdtype, count=math.prod(tshape), offset=pos + nin).reshape(tshape)
    targets = targets.astype(np.float64 if header["target_dtype"] == "f8" else np.int64)
    return SequenceDataset(header["task"], inputs, targets, header["seed"], header["config"])


def save_dataset(path, ds: SequenceDataset):
    Path(path).write_bytes(dumps_dataset(ds))


def load_dataset(path) -> SequenceDataset:
    return loads_dataset(Path(path).read_bytes())
