"""Losses, Adam, clipping and the training loop.

The objective for a DCRNN with skip connections is the task loss plus
``beta_reg`` times the eigenvalue-placement penalty.  The penalty depends only
on the parameters, so it is evaluated once per optimizer step, its gradient is
added to the task gradient and the sum is clipped as one vector.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import stability
from .dynsys import SequenceDataset
from .errors import DcrnnError, DivergenceError, StructuralError
from .net import CELLS, DcrnnParams, Params, forward, init_params
from .grad import backprop

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EVAL_CHUNK = 4096

# fixed key order of one metrics record
METRIC_KEYS = (
    "epoch", "train_loss", "reg_loss", "total_loss", "metric", "train_metric", "test_metric",
    "spectral_radius", "eig_loss", "jacobian_bound", "fd_fallbacks", "wall_time",
)
PRIMARY_METRIC = {"forecast": "mse", "classify": "accuracy", "image_rows": "accuracy", "copy": "cross_entropy"}
HIGHER_IS_BETTER = {"mse": False, "euclid": False, "accuracy": True, "cross_entropy": False}


@dataclass
class TrainConfig:
    cell: str = "dcrnn"
    k: int = 1
    hidden: int = 128
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    batch_size: int = 1000
    epochs: int = 1
    beta_reg: float = 1.0
    eig_target: float = stability.DEFAULT_TARGET_RADIUS
    eig_scope: str = "alphas_only"
    seed: int = 0

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.cell != "dcrnn":
            self.k = 0
        if self.k < 0:
            raise ValueError("k must be non-negative")
        for name in ("hidden", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate < 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate must be >= 0 and clip_norm > 0")
        if self.beta_reg < 0:
            raise ValueError("beta_reg must be non-negative")
        if not 0.0 <= abs(self.eig_target) < 1.0:
            raise ValueError("eig_target must lie inside the unit circle")
        if self.eig_scope not in stability.SCOPES:
            raise ValueError(f"unknown eig_scope {self.eig_scope!r}")

    @property
    def regularized(self):
        return self.cell == "dcrnn" and self.k >= 1 and self.beta_reg > 0


# --------------------------------------------------------------------------- losses

def mse_loss(pred, target):
    """Mean over all leading axes of the squared Euclidean error along the last axis."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise StructuralError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    count = diff.size // diff.shape[-1] if diff.ndim else 1
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits, labels):
    """Mean negative log-softmax of the true class; ``labels`` index the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise StructuralError(f"logits {logits.shape} do not match labels {labels.shape}")
    n_cls = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"label outside 0..{n_cls - 1}")
    logp = log_softmax(logits)
    count = max(labels.size, 1)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
    return float(-picked.sum() / count), grad / count


def total_loss(c_nn, c_lambda, beta):
    return c_nn + beta * c_lambda


def task_loss(task, outputs, targets):
    """Task loss and its gradient w.r.t. the full ``[N, T, o]`` output tensor."""
    if task == "forecast":
        return mse_loss(outputs, targets)
    if task == "copy":
        return cross_entropy_loss(outputs, targets)
    # classification reads only the last step
    loss, g_last = cross_entropy_loss(outputs[:, -1], targets)
    grad = np.zeros_like(outputs)
    grad[:, -1] = g_last
    return loss, grad


# --------------------------------------------------------------------------- optimizer

def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors().values()))


def clip_global_norm(grads: Params, max_norm: float) -> Params:
    """Scale every tensor by ``max_norm / g`` when the global L2 norm g exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    g = global_norm(grads)
    if g <= max_norm:
        return grads
    scale = max_norm / g
    return type(grads).from_tensors({k: v * scale for k, v in grads.tensors().items()})


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: Params):
        return cls({k: np.zeros_like(t) for k, t in params.tensors().items()},
                   {k: np.zeros_like(t) for k, t in params.tensors().items()})


def adam_step(state: AdamState, params: Params, grads: Params, lr: float,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """Bias-corrected Adam; updates ``params`` and ``state`` in place and returns both."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    gt = grads.tensors()
    for name, theta in params.tensors().items():
        g = gt[name]
        if g.shape != theta.shape:
            raise StructuralError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def _add_scaled(a: Params, b: Params, scale: float) -> Params:
    bt = b.tensors()
    return type(a).from_tensors({k: v + scale * bt[k] for k, v in a.tensors().items()})


# --------------------------------------------------------------------------- evaluation

def evaluate(params: Params, data: SequenceDataset) -> dict:
    """Task metrics on a whole dataset.

    forecast: ``mse`` (mean squared Euclidean error per step) and ``euclid``
    (mean Euclidean error per step); classify / image_rows: ``accuracy`` from
    the final-step logits plus ``cross_entropy``; copy: per-step ``cross_entropy``
    and ``accuracy``.
    """
    n = len(data)
    sums = {}
    for lo in range(0, n, EVAL_CHUNK):
        x = data.inputs[lo:lo + EVAL_CHUNK]
        y = data.targets[lo:lo + EVAL_CHUNK]
        out, _ = forward(params, x)
        w = len(x)
        if data.task == "forecast":
            err = np.linalg.norm(out - y, axis=-1)
            part = {"mse": float(np.mean(err ** 2)), "euclid": float(np.mean(err))}
        elif data.task == "copy":
            ce, _ = cross_entropy_loss(out, y)
            part = {"cross_entropy": ce, "accuracy": float(np.mean(out.argmax(-1) == y))}
        else:
            ce, _ = cross_entropy_loss(out[:, -1], y)
            part = {"accuracy": float(np.mean(out[:, -1].argmax(-1) == y)), "cross_entropy": ce}
        for key, val in part.items():
            sums[key] = sums.get(key, 0.0) + val * w
    return {key: val / n for key, val in sums.items()}


# --------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: Params
    metrics: list = field(default_factory=list)
    adam: AdamState | None = None
    rng_state: dict | None = None


class TrainingDiverged(DivergenceError):
    def __init__(self, message, step=None, metrics=None):
        super().__init__(message, step)
        self.metrics = metrics or []


def output_size(data: SequenceDataset) -> int:
    return data.input_dim if data.task == "forecast" else data.n_classes


def eig_target_for(cfg: TrainConfig, p: DcrnnParams) -> stability.EigTarget:
    if isinstance(cfg.eig_target, stability.EigTarget):
        return cfg.eig_target
    return stability.EigTarget.constant(p.n * p.k, cfg.eig_target)


def gradient_step(params: Params, cfg: TrainConfig, x, y, task, target=None):
    """Task + regularizer gradient for one batch (unclipped).

    Returns ``(grads, c_nn, c_lambda, used_fd_fallback)``.
    """
    out, tape = forward(params, x)
    c_nn, dout = task_loss(task, out, y)
    grads = backprop(tape, params, dout)
    c_lam, fallback = 0.0, False
    if cfg.regularized:
        c_lam, g_reg, fallback = stability.eig_loss_and_grad(params, target, cfg.eig_scope)
        if fallback:
            log.info("eigenvalue degeneracy: finite-difference fallback used")
        grads = _add_scaled(grads, g_reg, cfg.beta_reg)
    return grads, c_nn, c_lam, fallback


def train_model(cfg: TrainConfig, train: SequenceDataset, test: SequenceDataset | None = None,
                params: Params | None = None, on_epoch=None) -> TrainResult:
    """Minibatch Adam on the task loss plus the eigenvalue penalty.

    Deterministic given ``cfg.seed``: the same generator draws the initial
    weights and then every epoch's batch order.  ``on_epoch`` receives each
    metrics record as it is produced.
    """
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg.cell, cfg.hidden, train.input_dim, output_size(train), cfg.k, rng)
    adam = AdamState.zeros(params)
    target = eig_target_for(cfg, params) if cfg.regularized else None
    metric_name = PRIMARY_METRIC[train.task]
    metrics = []
    n = len(train)
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = reg_sum = 0.0
        steps = fallbacks = 0
        try:
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                grads, c_nn, c_lam, fb = gradient_step(params, cfg, train.inputs[idx], train.targets[idx],
                                                       train.task, target)
                loss_sum += c_nn * len(idx)
                reg_sum += c_lam
                steps += 1
                fallbacks += fb
                grads = clip_global_norm(grads, cfg.clip_norm)
                adam_step(adam, params, grads, cfg.learning_rate)
                if not params.all_finite():
                    raise DivergenceError("parameters became non-finite", step=adam.step)
        except DivergenceError as exc:
            raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", exc.step, metrics) from exc
        record = _epoch_record(epoch, params, cfg, train, test, metric_name,
                               loss_sum / n, reg_sum / max(steps, 1), fallbacks, t0)
        metrics.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(params, metrics, adam, rng.bit_generator.state)


def _epoch_record(epoch, params, cfg, train, test, metric_name, c_nn, c_lam, fallbacks, t0):
    report = {}
    if isinstance(params, DcrnnParams) and params.k >= 1:
        report = stability.stability_report(params, eig_target_for(cfg, params))
    rec = {
        "epoch": epoch,
        "train_loss": c_nn,
        "reg_loss": c_lam,
        "total_loss": total_loss(c_nn, c_lam, cfg.beta_reg if cfg.regularized else 0.0),
        "metric": metric_name,
        "train_metric": evaluate(params, train)[metric_name],
        "test_metric": evaluate(params, test)[metric_name] if test is not None else None,
        "spectral_radius": report.get("spectral_radius"),
        "eig_loss": report.get("eig_loss"),
        "jacobian_bound": report.get("jacobian_bound"),
        "fd_fallbacks": fallbacks,
        "wall_time": time.perf_counter() - t0,
    }
    return {key: rec[key] for key in METRIC_KEYS}


def metrics_line(record: dict) -> str:
    """One metrics record as a JSON line with the documented key order."""
    return json.dumps({key: record.get(key) for key in METRIC_KEYS})


def place_eigenvalues(p: DcrnnParams, target: stability.EigTarget, steps=2000, lr=0.001,
                      beta=1e6, scope="alphas_only", clip_norm=None, lr_final=None):
    """Adam on ``beta * penalty`` alone (task loss frozen); returns (params, penalty history).

    With ``lr_final`` the step size decays geometrically from ``lr`` to
    ``lr_final`` over the run.  Repeated targets make the optimum a defective
    eigenvalue, where the spectrum moves like a root of the parameter error,
    so a constant step size stalls at a distance of order ``lr ** (1 / m)``.
    """
    p = p.copy()
    adam = AdamState.zeros(p)
    history = []
    for i in range(steps):
        c, g, _ = stability.eig_loss_and_grad(p, target, scope)
        history.append(c)
        if c == 0.0:
            break
        g = type(g).from_tensors({k: beta * v for k, v in g.tensors().items()})
        if clip_norm is not None:
            g = clip_global_norm(g, clip_norm)
        step_lr = lr if lr_final is None else lr * (lr_final / lr) ** (i / max(steps - 1, 1))
        adam_step(adam, p, g, step_lr)
    history.append(stability.eig_loss(stability.build_linearized(p), target))
    return p, history


