"""Linearization of the DCRNN at the origin and the eigenvalue-placement penalty.

Stacking the last k hidden states ``q = (h_{t-1}, ..., h_{t-k})`` turns the
cell into a first-order system.  At the origin tanh' = 1, so its Jacobian is
the block companion matrix::

    A = [[diag(a_1) + W_rec, diag(a_2), ..., diag(a_k)],
         [I,                 0,         ..., 0        ],
         ...
         [0,          ...,   I,              0        ]]

and the input matrix B carries W_in in its top block.  The penalty is the
Euclidean distance between the spectrum of A and a target spectrum, with the
two spectra paired after sorting both canonically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DegeneracyError, DcrnnError, NotApplicableError
from .net import ACTIVATIONS, DcrnnParams

DEFAULT_TARGET_RADIUS = 0.3
MATCHINGS = ("by_sorted_order", "by_modulus")
SCOPES = ("alphas_only", "alphas_and_wrec")
FD_STEP = 1e-7


@dataclass
class LinearizedSystem:
    A: np.ndarray  # [n*k, n*k]
    B: np.ndarray  # [n*k, d]
    n: int
    k: int


@dataclass
class EigTarget:
    desired: np.ndarray  # complex, length n*k
    matching: str = "by_sorted_order"

    def __post_init__(self):
        self.desired = np.asarray(self.desired, dtype=np.complex128).ravel()
        if self.matching not in MATCHINGS:
            raise ValueError(f"unknown matching {self.matching!r}")
        if np.any(np.abs(self.desired) >= 1.0):
            raise ValueError("desired eigenvalues must lie strictly inside the unit circle")
        self.desired = self.desired[linalg.canonical_order(self.desired)]

    @classmethod
    def constant(cls, size, radius=DEFAULT_TARGET_RADIUS, matching="by_sorted_order"):
        return cls(np.full(size, radius, dtype=np.complex128), matching)


def default_target(p: DcrnnParams, radius=DEFAULT_TARGET_RADIUS) -> EigTarget:
    return EigTarget.constant(p.n * p.k, radius)


def build_linearized(p: DcrnnParams) -> LinearizedSystem:
    n, k = p.n, p.k
    if k == 0:
        raise NotApplicableError("k = 0 has no skip states to linearize (vanilla RNN)")
    m = n * k
    A = np.zeros((m, m))
    A[:n, :n] = p.W_rec
    for i in range(k):
        A[np.arange(n), i * n + np.arange(n)] += p.alphas[i]
    if k > 1:
        A[np.arange(n, m), np.arange(m - n)] = 1.0
    B = np.zeros((m, p.d))
    B[:n] = p.W_in
    return LinearizedSystem(A, B, n, k)


def _residuals(values, tgt: EigTarget):
    if len(values) != len(tgt.desired):
        raise ValueError(f"{len(tgt.desired)} targets for {len(values)} eigenvalues")
    if tgt.matching == "by_modulus":
        return np.abs(values) - np.sort(np.abs(tgt.desired))[::-1]
    return values - tgt.desired


def eig_loss_from_values(values, tgt: EigTarget) -> float:
    r = _residuals(values, tgt)
    return float(np.sqrt(np.sum(np.abs(r) ** 2)))


def eig_loss(system, tgt: EigTarget) -> float:
    """Euclidean distance between the spectrum of A and the targets (complex modulus)."""
    A = system.A if isinstance(system, LinearizedSystem) else system
    return eig_loss_from_values(linalg.eigvals(A), tgt)


def _matrix_grad(decomp: linalg.EigenDecomposition, tgt: EigTarget):
    """(C, dC/dA) via first-order eigenvalue perturbation; dC/dA is real."""
    values = decomp.values
    r = _residuals(values, tgt)
    C = float(np.sqrt(np.sum(np.abs(r) ** 2)))
    m = len(values)
    if C == 0.0:
        return C, np.zeros((m, m))
    if min(linalg.eigen_gap(decomp, i) for i in range(m)) <= linalg.GAP_TOL:
        raise DegeneracyError("repeated eigenvalue")
    U, V = decomp.left_vectors, decomp.right_vectors
    denom = np.einsum("pi,pi->i", U.conj(), V)
    if np.any(np.abs(denom) <= linalg.EPS * m):
        raise DegeneracyError("defective eigenvalue")
    if tgt.matching == "by_modulus":
        mod = np.abs(values)
        weight = np.where(mod > 0, r * values.conj() / np.where(mod > 0, mod, 1.0), 0.0)
    else:
        weight = r.conj()
    G = np.real((U.conj() * (weight / denom)) @ V.T) / C
    return C, G


def _gather(p: DcrnnParams, G, scope):
    n, k = p.n, p.k
    grads = p.zeros_like()
    rows = np.arange(n)
    for i in range(k):
        grads.alphas[i] = G[rows, i * n + rows]
    if scope == "alphas_and_wrec":
        grads.W_rec = G[:n, :n].copy()
    return grads


def _scoped_entries(p: DcrnnParams, scope):
    entries = [("alphas", idx) for idx in np.ndindex(p.alphas.shape)]
    if scope == "alphas_and_wrec":
        entries += [("W_rec", idx) for idx in np.ndindex(p.W_rec.shape)]
    return entries


def eig_loss_fd_grad(p: DcrnnParams, tgt: EigTarget, scope="alphas_only", step=FD_STEP):
    """Central finite differences of the penalty over the scoped parameters."""
    grads = p.zeros_like()
    q = p.copy()
    for name, idx in _scoped_entries(p, scope):
        arr = getattr(q, name)
        base = arr[idx]
        arr[idx] = base + step
        up = eig_loss(build_linearized(q), tgt)
        arr[idx] = base - step
        down = eig_loss(build_linearized(q), tgt)
        arr[idx] = base
        getattr(grads, name)[idx] = (up - down) / (2 * step)
    return grads


def eig_loss_and_grad(p: DcrnnParams, tgt: EigTarget, scope="alphas_only"):
    """Penalty value, parameter-shaped gradient and whether the FD fallback was used."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    system = build_linearized(p)
    decomp = linalg.eig(system.A, want_vectors=True)
    try:
        C, G = _matrix_grad(decomp, tgt)
    except DegeneracyError:
        C = eig_loss_from_values(decomp.values, tgt)
        try:
            grads = eig_loss_fd_grad(p, tgt, scope)
        except DcrnnError as exc:
            raise DegeneracyError(f"finite-difference fallback failed: {exc}") from exc
        if not grads.all_finite():
            raise DegeneracyError("finite-difference fallback produced non-finite gradient")
        return C, grads, True
    return C, _gather(p, G, scope), False


def eig_loss_grad(p: DcrnnParams, tgt: EigTarget, scope="alphas_only") -> DcrnnParams:
    """Gradient of the penalty w.r.t. the scoped parameters (others are zero)."""
    return eig_loss_and_grad(p, tgt, scope)[1]


def jacobian_bound(p: DcrnnParams) -> float:
    """Upper bound on ||d h_{t+1} / d h_t||_2: largest |alpha_1| plus ||W_rec||_2."""
    lam_alpha = float(np.max(np.abs(p.alphas[0]))) if p.k > 0 else 0.0
    return lam_alpha + linalg.spectral_norm(p.W_rec)


def step_jacobians(tape, p: DcrnnParams):
    """Realized ``d h_t / d h_{t-1}`` for every step and batch member: ``[T, N, n, n]``."""
    _, dact = ACTIVATIONS[tape.activation]
    slope = dact(tape.act)  # [T, N, n]
    J = slope[..., :, None] * p.W_rec[None, None]
    if p.k > 0:
        idx = np.arange(p.n)
        J[..., idx, idx] += p.alphas[0]
    return J


def stability_report(p: DcrnnParams, tgt: EigTarget | None = None) -> dict:
    """Serializable stability diagnostics; eigensolver failures are recorded, not raised."""
    report = {"spectral_radius": None, "spectrum": None, "eig_loss": None,
              "jacobian_bound": None, "error": None}
    try:
        report["jacobian_bound"] = jacobian_bound(p)
        system = build_linearized(p)
        values = linalg.eigvals(system.A)
        report["spectrum"] = [[float(v.real), float(v.imag)] for v in values]
        report["spectral_radius"] = float(np.max(np.abs(values)))
        report["eig_loss"] = eig_loss_from_values(values, tgt or default_target(p))
    except DcrnnError as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
    return report
