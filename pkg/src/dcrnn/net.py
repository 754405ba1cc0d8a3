"""Recurrent cells: the skip-connected DCRNN, a vanilla tanh RNN and an LSTM.

All forward passes accept a single sequence ``[T, d]`` or a batch
``[N, T, d]`` and return per-step readouts together with a ``ForwardTape``
holding everything the reverse pass needs.

DCRNN hidden update, with ``alphas[i-1]`` the diagonal of the i-th skip
coefficient::

    z_t = W_rec h_{t-1} + W_in x_t + b
    h_t = sum_{i=1..k} alphas[i-1] * h_{t-i} + tanh(z_t)
    y_t = W_out h_t + b_out
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .errors import DivergenceError, StructuralError

CELLS = ("dcrnn", "rnn", "lstm")
ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    # identity map; only used to make per-step Jacobians constant in tests
    "linear": (lambda z: z, lambda a: np.ones_like(a)),
}
FORGET_BIAS = 1.0


def glorot_init(shape, seed=None) -> np.ndarray:
    """Glorot-uniform matrix: U(-L, L) with ``L = sqrt(6 / (fan_in + fan_out))``.

    ``seed`` may be an int or an existing ``np.random.Generator`` (which is
    advanced).  For a ``(rows, cols)`` weight, fan_out = rows and fan_in = cols.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or min(shape) <= 0:
        raise ValueError(f"glorot_init needs a positive 2-D shape, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class Params:
    """Shared behaviour of the parameter containers (also used for gradients)."""

    kind: ClassVar[str]

    @classmethod
    def names(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in self.names()}

    @classmethod
    def from_tensors(cls, tensors):
        return cls(**{name: np.array(tensors[name], dtype=np.float64) for name in cls.names()})

    def copy(self):
        return type(self).from_tensors(self.tensors())

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.tensors().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors().values()])

    def num_params(self) -> int:
        return sum(v.size for v in self.tensors().values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors().values())

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values()))


@dataclass(eq=False)
class DcrnnParams(Params):
    W_in: np.ndarray   # [n, d]
    W_rec: np.ndarray  # [n, n]
    b: np.ndarray      # [n]
    alphas: np.ndarray  # [k, n], row i-1 is the diagonal of alpha_i
    W_out: np.ndarray  # [o, n]
    b_out: np.ndarray  # [o]

    kind: ClassVar[str] = "dcrnn"

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64).reshape(-1, np.shape(self.W_rec)[0])
        n, d = np.shape(self.W_in)
        o = np.shape(self.W_out)[0]
        _check_shapes(self, {"W_in": (n, d), "W_rec": (n, n), "b": (n,),
                             "alphas": (self.alphas.shape[0], n), "W_out": (o, n), "b_out": (o,)})

    @property
    def n(self):
        return self.W_rec.shape[0]

    @property
    def d(self):
        return self.W_in.shape[1]

    @property
    def o(self):
        return self.W_out.shape[0]

    @property
    def k(self):
        return self.alphas.shape[0]

    @classmethod
    def init(cls, n, d, o, k, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        alphas = np.full((k, n), 1.0 / k) if k > 0 else np.zeros((0, n))
        return cls(W_in=glorot_init((n, d), rng), W_rec=glorot_init((n, n), rng), b=np.zeros(n),
                   alphas=alphas, W_out=glorot_init((o, n), rng), b_out=np.zeros(o))


@dataclass(eq=False)
class RnnParams(Params):
    W_in: np.ndarray
    W_rec: np.ndarray
    b: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    kind: ClassVar[str] = "rnn"

    def __post_init__(self):
        n, d = np.shape(self.W_in)
        o = np.shape(self.W_out)[0]
        _check_shapes(self, {"W_in": (n, d), "W_rec": (n, n), "b": (n,), "W_out": (o, n), "b_out": (o,)})

    n = DcrnnParams.n
    d = DcrnnParams.d
    o = DcrnnParams.o
    k = property(lambda self: 0)

    @classmethod
    def init(cls, n, d, o, k=0, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(W_in=glorot_init((n, d), rng), W_rec=glorot_init((n, n), rng), b=np.zeros(n),
                   W_out=glorot_init((o, n), rng), b_out=np.zeros(o))

    def as_dcrnn(self) -> DcrnnParams:
        return DcrnnParams(self.W_in, self.W_rec, self.b, np.zeros((0, self.n)), self.W_out, self.b_out)


@dataclass(eq=False)
class LstmParams(Params):
    """Gate blocks are stacked in the order input, forget, output, candidate."""

    W_in: np.ndarray   # [4n, d]
    W_rec: np.ndarray  # [4n, n]
    b: np.ndarray      # [4n]
    W_out: np.ndarray  # [o, n]
    b_out: np.ndarray  # [o]

    kind: ClassVar[str] = "lstm"

    def __post_init__(self):
        n4, d = np.shape(self.W_in)
        if n4 % 4:
            raise StructuralError("LSTM weights must stack four gate blocks")
        n = n4 // 4
        o = np.shape(self.W_out)[0]
        _check_shapes(self, {"W_in": (4 * n, d), "W_rec": (4 * n, n), "b": (4 * n,),
                             "W_out": (o, n), "b_out": (o,)})

    @property
    def n(self):
        return self.W_rec.shape[1]

    d = DcrnnParams.d
    o = DcrnnParams.o
    k = property(lambda self: 0)

    @classmethod
    def init(cls, n, d, o, k=0, seed=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        W_in = np.concatenate([glorot_init((n, d), rng) for _ in range(4)])
        W_rec = np.concatenate([glorot_init((n, n), rng) for _ in range(4)])
        b = np.zeros(4 * n)
        b[n:2 * n] = FORGET_BIAS
        return cls(W_in=W_in, W_rec=W_rec, b=b, W_out=glorot_init((o, n), rng), b_out=np.zeros(o))


PARAM_TYPES = {"dcrnn": DcrnnParams, "rnn": RnnParams, "lstm": LstmParams}


def _check_shapes(p, expected):
    for name, shape in expected.items():
        arr = np.asarray(getattr(p, name), dtype=np.float64)
        if arr.shape != shape:
            raise StructuralError(f"{type(p).__name__}.{name} has shape {arr.shape}, expected {shape}")
        setattr(p, name, arr)


def init_params(cell, n, d, o, k=0, seed=None) -> Params:
    try:
        cls = PARAM_TYPES[cell]
    except KeyError:
        raise ValueError(f"unknown cell kind {cell!r}") from None
    return cls.init(n, d, o, k, seed)


@dataclass
class ForwardTape:
    """Everything recorded by one (batched) forward pass.

    ``hidden`` stacks the pre-history and the computed states along axis 0:
    ``hidden[P - 1 + t]`` is h_t for ``t = 1 - P, ..., T`` where ``P = pre``
    (``max(k, 1)`` for the DCRNN, 1 for the other cells).  ``preact[t-1]`` is
    z_t and ``act[t-1]`` the activation term added at step t.  For the LSTM,
    ``preact`` holds the raw gate inputs, ``act`` the gate values and
    ``cells[t]`` the cell state c_t (``cells[0]`` = c_0).
    """

    kind: str
    inputs: np.ndarray   # [N, T, d]
    hidden: np.ndarray   # [P + T, N, n]
    preact: np.ndarray   # [T, N, n] or [T, N, 4n]
    act: np.ndarray
    outputs: np.ndarray  # [N, T, o]
    pre: int
    activation: str = "tanh"
    cells: np.ndarray | None = None
    batched: bool = True

    @property
    def T(self):
        return self.inputs.shape[1]

    def h(self, t):
        """Hidden state h_t (``t`` may reach back to ``1 - pre``)."""
        return self.hidden[self.pre - 1 + t]

    @property
    def states(self):
        """Computed hidden states h_1..h_T as ``[N, T, n]``."""
        return self.hidden[self.pre:].transpose(1, 0, 2)


def _as_batch(x_seq):
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim == 2:
        return x[None], False
    if x.ndim != 3:
        raise StructuralError(f"inputs must be [T, d] or [N, T, d], got {x.shape}")
    return x, True


def _history(h_hist, P, N, n, batched):
    if h_hist is None:
        return np.zeros((P, N, n))
    h = np.asarray(h_hist, dtype=np.float64)
    if h.ndim == 1:
        h = h[None]
    if h.ndim == 2:
        if batched and h.shape == (N, n) and P == 1:
            return h[None].copy()
        if h.shape != (P, n):
            raise StructuralError(f"history must hold {P} vectors of size {n}, got {h.shape}")
        return np.repeat(h[:, None, :], N, axis=1)
    if h.shape != (P, N, n):
        raise StructuralError(f"history must have shape {(P, N, n)}, got {h.shape}")
    return h.copy()


def _readout(p, hidden_states, batched):
    out = hidden_states @ p.W_out.T + p.b_out  # [T, N, o]
    out = out.transpose(1, 0, 2)
    return out if batched else out[0]


def _diverged(t):
    return DivergenceError(f"hidden state became non-finite at step {t}", step=t)


def dcrnn_forward(p: DcrnnParams, x_seq, h_hist=None, activation="tanh"):
    """Run the DCRNN over ``x_seq``; ``h_hist`` holds h_{1-k}..h_0 (default zeros)."""
    x, batched = _as_batch(x_seq)
    if x.shape[2] != p.d:
        raise StructuralError(f"input size {x.shape[2]} does not match W_in ({p.d})")
    N, T, _ = x.shape
    if T < 1:
        raise StructuralError("sequence must have at least one step")
    n, k = p.n, p.k
    P = max(k, 1)
    f, _ = ACTIVATIONS[activation]
    H = np.empty((P + T, N, n))
    H[:P] = _history(h_hist, P, N, n, batched)
    Z = np.einsum("ntd,hd->tnh", x, p.W_in) + p.b  # input part of z for every step
    A = np.empty((T, N, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            j = P + t
            Z[t] += H[j - 1] @ p.W_rec.T
            A[t] = f(Z[t])
            h = A[t].copy()
            for i in range(1, k + 1):
                h += p.alphas[i - 1] * H[j - i]
            if not np.isfinite(h).all():
                raise _diverged(t + 1)
            H[j] = h
    out = _readout(p, H[P:], batched)
    return out, ForwardTape("dcrnn", x, H, Z, A, out if batched else out[None], P, activation, batched=batched)


def rnn_forward(p: RnnParams, x_seq, h0=None):
    """Vanilla tanh RNN: ``h_t = tanh(W_rec h_{t-1} + W_in x_t + b)``."""
    x, batched = _as_batch(x_seq)
    if x.shape[2] != p.d:
        raise StructuralError(f"input size {x.shape[2]} does not match W_in ({p.d})")
    N, T, _ = x.shape
    n = p.n
    H = np.empty((1 + T, N, n))
    H[0] = _history(h0, 1, N, n, batched)[0]
    Z = np.empty((T, N, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            Z[t] = x[:, t] @ p.W_in.T + H[t] @ p.W_rec.T + p.b
            H[t + 1] = np.tanh(Z[t])
            if not np.isfinite(H[t + 1]).all():
                raise _diverged(t + 1)
    out = _readout(p, H[1:], batched)
    return out, ForwardTape("rnn", x, H, Z, H[1:].copy(), out if batched else out[None], 1, "tanh",
                            batched=batched)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(p: LstmParams, x_seq, state0=None):
    """Standard LSTM with forget gate; ``state0`` is ``(h0, c0)`` or None."""
    x, batched = _as_batch(x_seq)
    if x.shape[2] != p.d:
        raise StructuralError(f"input size {x.shape[2]} does not match W_in ({p.d})")
    N, T, _ = x.shape
    n = p.n
    H = np.empty((1 + T, N, n))
    C = np.empty((1 + T, N, n))
    if state0 is None:
        H[0] = 0.0
        C[0] = 0.0
    else:
        H[0] = _history(state0[0], 1, N, n, batched)[0]
        C[0] = _history(state0[1], 1, N, n, batched)[0]
    Z = np.einsum("ntd,gd->tng", x, p.W_in) + p.b
    G = np.empty((T, N, 4 * n))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            Z[t] += H[t] @ p.W_rec.T
            G[t, :, :3 * n] = _sigmoid(Z[t, :, :3 * n])
            G[t, :, 3 * n:] = np.tanh(Z[t, :, 3 * n:])
            i_g, f_g, o_g, g_g = G[t, :, :n], G[t, :, n:2 * n], G[t, :, 2 * n:3 * n], G[t, :, 3 * n:]
            C[t + 1] = f_g * C[t] + i_g * g_g
            H[t + 1] = o_g * np.tanh(C[t + 1])
            if not np.isfinite(C[t + 1]).all():
                raise _diverged(t + 1)
    out = _readout(p, H[1:], batched)
    return out, ForwardTape("lstm", x, H, Z, G, out if batched else out[None], 1, "tanh", cells=C,
                            batched=batched)


def forward(p: Params, x_seq, state=None, activation="tanh"):
    """Dispatch to the forward pass matching the parameter type."""
    if isinstance(p, DcrnnParams):
        return dcrnn_forward(p, x_seq, state, activation)
    if isinstance(p, RnnParams):
        return rnn_forward(p, x_seq, state)
    if isinstance(p, LstmParams):
        return lstm_forward(p, x_seq, state)
    raise TypeError(f"unsupported parameter type {type(p).__name__}")


def check_tape(tape: ForwardTape, p: DcrnnParams, atol=1e-12) -> bool:
    """Re-verify the DCRNN update for every recorded step."""
    f, _ = ACTIVATIONS[tape.activation]
    for t in range(1, tape.T + 1):
        z = tape.h(t - 1) @ p.W_rec.T + tape.inputs[:, t - 1] @ p.W_in.T + p.b
        h = f(z) + sum(p.alphas[i - 1] * tape.h(t - i) for i in range(1, p.k + 1))
        if not np.allclose(h, tape.h(t), rtol=0.0, atol=atol):
            return False
    return True
