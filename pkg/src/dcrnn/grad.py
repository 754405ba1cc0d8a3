"""Reverse-mode gradients through recorded forward tapes.

``backprop`` keeps one adjoint slot per recorded hidden state and walks the
tape backwards once; at every step the adjoint of h_t is pushed to h_{t-i}
through each skip edge (scaled by alpha_i) and to h_{t-1} through the
activation path.  Cost is linear in T*k.

The closed-form expansion over step compositions is exponential in T and is
kept only as an independent check of the reverse pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np

from .errors import StructuralError
from .net import ACTIVATIONS, DcrnnParams, ForwardTape, LstmParams, Params, RnnParams

INT64_MAX = 2 ** 63 - 1


def _check(tape: ForwardTape, p: Params, dY):
    expected = {"dcrnn": DcrnnParams, "rnn": RnnParams, "lstm": LstmParams}[tape.kind]
    if not isinstance(p, expected):
        raise StructuralError(f"{tape.kind} tape cannot be paired with {type(p).__name__}")
    if tape.hidden.shape[2] != p.n or tape.inputs.shape[2] != p.d:
        raise StructuralError("tape dimensions do not match parameters")
    if tape.kind == "dcrnn" and tape.pre != max(p.k, 1):
        raise StructuralError(f"tape recorded with k={tape.pre}, parameters have k={p.k}")
    dY = np.asarray(dY, dtype=np.float64)
    if dY.ndim == 2:
        dY = dY[None]
    if dY.shape != tape.outputs.shape:
        raise StructuralError(f"output gradient has shape {dY.shape}, expected {tape.outputs.shape}")
    return dY


def backprop(tape: ForwardTape, p: Params, dL_doutputs, return_hidden=False):
    """Gradients of a loss with respect to every parameter tensor.

    ``dL_doutputs`` has the shape of the forward outputs.  Returns a
    parameter-shaped container of gradients; with ``return_hidden=True`` also
    returns the hidden-state adjoints ``dL/dh`` laid out like ``tape.hidden``
    (so the first ``tape.pre`` rows are gradients for the initial history).
    """
    dY = _check(tape, p, dL_doutputs)
    if tape.kind == "lstm":
        grads, dH = _lstm_backprop(tape, p, dY)
    else:
        cell = p.as_dcrnn() if isinstance(p, RnnParams) else p
        g, dH = _dcrnn_backprop(tape, cell, dY)
        if isinstance(p, RnnParams):
            grads = RnnParams(g.W_in, g.W_rec, g.b, g.W_out, g.b_out)
        else:
            grads = g
    if not tape.batched:
        dH = dH[:, 0]
    return (grads, dH) if return_hidden else grads


def _readout_grads(p, dY, states):
    dW_out = np.einsum("nto,ntj->oj", dY, states)
    db_out = dY.sum(axis=(0, 1))
    dstates = np.einsum("nto,oj->tnj", dY, p.W_out)
    return dW_out, db_out, dstates


def _dcrnn_backprop(tape, p: DcrnnParams, dY):
    H, A, x = tape.hidden, tape.act, tape.inputs
    P, T, k = tape.pre, tape.T, p.k
    _, dact = ACTIVATIONS[tape.activation]
    dW_out, db_out, dstates = _readout_grads(p, dY, tape.states)
    dH = np.zeros_like(H)
    dH[P:] = dstates
    dZ = np.empty_like(A)
    dalphas = np.zeros_like(p.alphas)
    for t in range(T - 1, -1, -1):
        j = P + t
        g = dH[j]
        for i in range(1, k + 1):
            dalphas[i - 1] += np.einsum("nj,nj->j", g, H[j - i])
            dH[j - i] += p.alphas[i - 1] * g
        dz = g * dact(A[t])
        dZ[t] = dz
        dH[j - 1] += dz @ p.W_rec
    grads = DcrnnParams(
        W_in=np.einsum("tnh,ntd->hd", dZ, x),
        W_rec=np.einsum("tnh,tnj->hj", dZ, H[P - 1:P - 1 + T]),
        b=dZ.sum(axis=(0, 1)),
        alphas=dalphas,
        W_out=dW_out,
        b_out=db_out,
    )
    return grads, dH


def _lstm_backprop(tape, p: LstmParams, dY):
    H, C, G, x = tape.hidden, tape.cells, tape.act, tape.inputs
    T, n = tape.T, p.n
    dW_out, db_out, dstates = _readout_grads(p, dY, tape.states)
    dH = np.zeros_like(H)
    dH[1:] = dstates
    dZ = np.empty_like(G)
    dc_next = np.zeros_like(C[0])
    for t in range(T - 1, -1, -1):
        i_g, f_g, o_g, g_g = G[t, :, :n], G[t, :, n:2 * n], G[t, :, 2 * n:3 * n], G[t, :, 3 * n:]
        tc = np.tanh(C[t + 1])
        dh = dH[t + 1]
        dc = dc_next + dh * o_g * (1.0 - tc * tc)
        dZ[t, :, :n] = dc * g_g * i_g * (1.0 - i_g)
        dZ[t, :, n:2 * n] = dc * C[t] * f_g * (1.0 - f_g)
        dZ[t, :, 2 * n:3 * n] = dh * tc * o_g * (1.0 - o_g)
        dZ[t, :, 3 * n:] = dc * i_g * (1.0 - g_g * g_g)
        dc_next = dc * f_g
        dH[t] += dZ[t] @ p.W_rec
    grads = LstmParams(
        W_in=np.einsum("tng,ntd->gd", dZ, x),
        W_rec=np.einsum("tng,tnj->gj", dZ, H[:T]),
        b=dZ.sum(axis=(0, 1)),
        W_out=dW_out,
        b_out=db_out,
    )
    return grads, dH


# --------------------------------------------------------------------------- closed form

@dataclass(frozen=True)
class PathTerm:
    """One monomial of the expansion: ``coefficient * prod_i J_i ** exponents[i-1]``."""

    exponents: tuple
    coefficient: int

    @property
    def length(self):
        return sum((i + 1) * e for i, e in enumerate(self.exponents))


def compositions(T: int, k: int):
    """All ordered tuples of parts from {1..k} summing to T."""
    if T == 0:
        yield ()
        return
    for first in range(1, min(k, T) + 1):
        for rest in compositions(T - first, k):
            yield (first,) + rest


def multinomial(exponents) -> int:
    total = 0
    coef = 1
    for e in exponents:
        total += e
        coef *= math.comb(total, e)
    return coef


def skip_path_coefficient(i: int, j: int) -> int:
    """Number of ways to interleave i unit steps with j double steps: C(i+j, i)."""
    if i < 0 or j < 0:
        raise ValueError("step counts must be non-negative")
    c = math.comb(i + j, i)
    if c > INT64_MAX:
        raise OverflowError(f"C({i + j}, {i}) does not fit in 64 bits")
    return c


def path_terms(k: int, T: int):
    """Collapsed expansion for commuting step Jacobians, sorted by exponent of J_1 descending."""
    terms = []
    for exps in product(*(range(T // i + 1) for i in range(1, k + 1))):
        if sum(i * e for i, e in zip(range(1, k + 1), exps)) == T:
            terms.append(PathTerm(tuple(exps), multinomial(exps)))
    return sorted(terms, key=lambda term: term.exponents, reverse=True)


def closed_form_hidden_grad(k: int, T: int, step_jacobians):
    """``d h_t / d h_{t-T}`` as the sum over step compositions of ordered Jacobian products.

    ``step_jacobians[i-1]`` is the (time-invariant) ``d h_s / d h_{s-i}``.
    Scalars in give a float out; matrices give a matrix.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if len(step_jacobians) != k:
        raise ValueError(f"expected {k} step Jacobians, got {len(step_jacobians)}")
    scalar = all(np.ndim(J) == 0 for J in step_jacobians)
    Js = [np.atleast_2d(np.asarray(J, dtype=np.float64)) for J in step_jacobians]
    total = np.zeros_like(Js[0])
    for comp in compositions(T, k):
        total = total + reduce(np.matmul, (Js[i - 1] for i in comp))
    return float(total[0, 0]) if scalar else total
