"""Dense real linear algebra for the stability analysis.

The eigensolver is the textbook route for small nonsymmetric matrices:
Householder reduction to upper Hessenberg form, Francis double-shift QR to a
real Schur form, then a unitary clean-up of the 2x2 blocks to a complex
triangular Schur form from which right and left eigenvectors are read off by
back and forward substitution.

Eigenvalues are returned in a canonical order (modulus descending, then real
part descending, then imaginary part descending) so that callers can pair two
spectra positionally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceError, DegeneracyError, DimensionError

EPS = np.finfo(np.float64).eps
MAX_ORDER = 4096
SWEEPS_PER_ROW = 30
GAP_TOL = 1e-10
SAFE_MIN = np.finfo(np.float64).tiny / EPS


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectrum of a real square matrix.

    ``values`` is a complex array of length m in canonical order.
    ``right_vectors[:, i]`` and ``left_vectors[:, i]`` are unit 2-norm vectors
    with ``A v = lambda v`` and ``u^H A = lambda u^H``; both are ``None`` when
    vectors were not requested.
    """

    values: np.ndarray
    right_vectors: np.ndarray | None = None
    left_vectors: np.ndarray | None = None

    def __len__(self):
        return len(self.values)

    @property
    def has_vectors(self):
        return self.right_vectors is not None and self.left_vectors is not None


def as_matrix(A, square=False) -> np.ndarray:
    """Validate ``A`` as a finite 2-D float64 array (copying only when needed)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {A.shape}")
    if square and A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def canonical_order(values) -> np.ndarray:
    """Indices sorting ``values`` by (|z| desc, re desc, im desc)."""
    values = np.asarray(values, dtype=np.complex128)
    return np.lexsort((-values.imag, -values.real, -np.abs(values)))


@njit(cache=True)
def _hessenberg_kernel(H, Q):
    m = H.shape[0]
    v = np.empty(m)
    for j in range(m - 2):
        # column norm computed on the column scaled to unit max, so tiny entries do not underflow
        cmax = 0.0
        for i in range(j + 1, m):
            cmax = max(cmax, abs(H[i, j]))
        if cmax == 0.0:
            continue
        alpha = 0.0
        for i in range(j + 1, m):
            v[i] = H[i, j] / cmax
            alpha += v[i] * v[i]
        alpha = math.sqrt(alpha)
        vv = 0.0
        v[j + 1] += math.copysign(alpha, v[j + 1])
        for i in range(j + 1, m):
            vv += v[i] * v[i]
        beta = 2.0 / vv
        for c in range(j, m):
            s = 0.0
            for i in range(j + 1, m):
                s += v[i] * H[i, c]
            s *= beta
            for i in range(j + 1, m):
                H[i, c] -= s * v[i]
        for M in (H, Q):
            for r in range(m):
                s = 0.0
                for i in range(j + 1, m):
                    s += M[r, i] * v[i]
                s *= beta
                for i in range(j + 1, m):
                    M[r, i] -= s * v[i]
        for i in range(j + 2, m):
            H[i, j] = 0.0


def hessenberg(A):
    """Return ``(H, Q)`` with ``A = Q H Q^T``, H upper Hessenberg, Q orthogonal."""
    H = as_matrix(A, square=True).copy()
    Q = np.eye(H.shape[0])
    _hessenberg_kernel(H, Q)
    return H, Q


@njit(cache=True)
def _reflect(H, Z, k, nr, col0, row_end, v0, v1, v2, beta):
    # apply I - beta v v^T to rows/columns k..k+nr-1 of H (from the left and right) and Z
    m = H.shape[0]
    for j in range(col0, m):
        s = v0 * H[k, j] + v1 * H[k + 1, j]
        if nr == 3:
            s += v2 * H[k + 2, j]
        s *= beta
        H[k, j] -= s * v0
        H[k + 1, j] -= s * v1
        if nr == 3:
            H[k + 2, j] -= s * v2
    for M, end in ((H, row_end), (Z, m)):
        for r in range(end):
            s = M[r, k] * v0 + M[r, k + 1] * v1
            if nr == 3:
                s += M[r, k + 2] * v2
            s *= beta
            M[r, k] -= s * v0
            M[r, k + 1] -= s * v1
            if nr == 3:
                M[r, k + 2] -= s * v2


@njit(cache=True)
def _reflector(x, y, z):
    # v is only defined up to scale; normalize first to avoid underflow in the squares
    sc = max(abs(x), abs(y), abs(z))
    if sc == 0.0:
        return x, y, z, 0.0
    x, y, z = x / sc, y / sc, z / sc
    alpha = math.sqrt(x * x + y * y + z * z)
    x += math.copysign(alpha, x)
    return x, y, z, 2.0 / (x * x + y * y + z * z)


@njit(cache=True)
def _francis_step(H, Z, lo, hi, exceptional):
    # one implicit double-shift sweep over the unreduced block H[lo:hi+1, lo:hi+1]
    if exceptional:
        # shifts at H[hi, hi] + 0.75 * w (+/- an imaginary part), w from the trailing subdiagonals
        w = abs(H[hi, hi - 1]) + abs(H[hi - 1, hi - 2])
        h = H[hi, hi] + 0.75 * w
        s, t = 2.0 * h, h * h + 0.4375 * w * w
    else:
        s = H[hi - 1, hi - 1] + H[hi, hi]
        t = H[hi - 1, hi - 1] * H[hi, hi] - H[hi - 1, hi] * H[hi, hi - 1]
    # start the bulge below two consecutive small subdiagonals when possible
    start = lo
    x = y = z = 0.0
    for m in range(hi - 2, lo - 1, -1):
        x = H[m, m] * H[m, m] + H[m, m + 1] * H[m + 1, m] - s * H[m, m] + t
        y = H[m + 1, m] * (H[m, m] + H[m + 1, m + 1] - s)
        z = H[m + 1, m] * H[m + 2, m + 1]
        start = m
        if m == lo:
            break
        lhs = abs(H[m, m - 1]) * (abs(y) + abs(z))
        rhs = EPS * abs(x) * (abs(H[m - 1, m - 1]) + abs(H[m, m]) + abs(H[m + 1, m + 1]))
        if lhs <= rhs:
            break
    for k in range(start, hi - 1):
        v0, v1, v2, beta = _reflector(x, y, z)
        if beta != 0.0:
            _reflect(H, Z, k, 3, max(lo, k - 1), min(k + 3, hi) + 1, v0, v1, v2, beta)
        if k > lo:
            # fill is zero, or negligible when k == start > lo
            H[k + 1, k - 1] = 0.0
            H[k + 2, k - 1] = 0.0
        x = H[k + 1, k]
        y = H[k + 2, k]
        if k < hi - 2:
            z = H[k + 3, k]
    v0, v1, v2, beta = _reflector(x, y, 0.0)
    if beta != 0.0:
        _reflect(H, Z, hi - 1, 2, hi - 2, hi + 1, v0, v1, 0.0, beta)
    H[hi, hi - 2] = 0.0


@njit(cache=True)
def _qr_iterate(H, Z, budget):
    # returns True on full deflation within the sweep budget
    m = H.shape[0]
    sweeps = 0
    its = 0
    hi = m - 1
    scale = np.abs(H).max()
    while hi >= 1:
        # locate the start of the trailing unreduced block; a block that stagnates past the
        # exceptional shifts falls back to the normwise test (still backward stable)
        lo = hi
        while lo > 0:
            s = abs(H[lo - 1, lo - 1]) + abs(H[lo, lo])
            if s == 0.0 or its > 20:
                s = max(s, scale)
            if abs(H[lo, lo - 1]) <= max(EPS * s, SAFE_MIN):
                H[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo >= hi - 1:
            hi = lo - 1
            its = 0
            continue
        if sweeps >= budget:
            return False
        its += 1
        sweeps += 1
        _francis_step(H, Z, lo, hi, its % 10 == 0)
    return True


def _exponent(A):
    amax = float(np.abs(A).max()) if A.size else 0.0
    return math.frexp(amax)[1] if amax > 0.0 else 0


def real_schur(A):
    """Real Schur form ``A = Z T Z^T`` with T quasi upper triangular.

    Raises ConvergenceError after ``30 * m`` QR sweeps without full deflation.
    """
    A = as_matrix(A, square=True)
    # work at unit scale (power-of-two factor, so exact) to keep tiny or huge entries clear of
    # underflow and overflow in the shift and deflation arithmetic
    e = _exponent(A)
    H, Z = hessenberg(np.ldexp(A, -e))
    budget = SWEEPS_PER_ROW * H.shape[0]
    if not _qr_iterate(H, Z, budget):
        raise ConvergenceError(f"QR iteration did not converge within {budget} sweeps (m={H.shape[0]})")
    return np.ldexp(H, e), Z


def _eig2(a, b, c, d):
    p = 0.5 * (a + d)
    disc = 0.25 * (a - d) ** 2 + b * c
    if disc >= 0.0:
        r = math.sqrt(disc)
        l1 = p + math.copysign(r, p)
        # det / l1 avoids cancellation in p - r, but amplifies the rounding in det when l1 is
        # small; take whichever form has the smaller error bound
        if abs(a * d) + abs(b * c) < l1 * l1:
            l2 = (a * d - b * c) / l1
        else:
            l2 = p - math.copysign(r, p)
        return complex(l1), complex(l2)
    q = math.sqrt(-disc)
    return complex(p, q), complex(p, -q)


def _to_complex_schur(T, Z):
    """Rotate away the 2x2 blocks of a real Schur pair; returns (U, Zc, values)."""
    m = T.shape[0]
    U = T.astype(np.complex128)
    Zc = Z.astype(np.complex128)
    values = np.diag(T).astype(np.complex128)
    for j in range(m - 1, 0, -1):
        if U[j, j - 1] == 0.0:
            continue
        a, b, c, d = T[j - 1, j - 1], T[j - 1, j], T[j, j - 1], T[j, j]
        l1, l2 = _eig2(a, b, c, d)
        # rotate with the eigenvalue farther from the trailing diagonal entry;
        # the nearer one gives a cancellation-prone rotation
        lam = l1 if abs(l1 - U[j, j]) >= abs(l2 - U[j, j]) else l2
        mu = lam - U[j, j]
        r = math.hypot(abs(mu), abs(U[j, j - 1]))
        cs, sn = mu / r, U[j, j - 1] / r
        G = np.array([[cs.conjugate(), sn], [-sn, cs]])
        Gh = G.conj().T
        U[j - 1:j + 1, j - 1:] = G @ U[j - 1:j + 1, j - 1:]
        U[:j + 1, j - 1:j + 1] = U[:j + 1, j - 1:j + 1] @ Gh
        Zc[:, j - 1:j + 1] = Zc[:, j - 1:j + 1] @ Gh
        U[j, j - 1] = 0.0
        # exact values (conjugate pairs stay exact conjugates), matched by position
        if abs(U[j - 1, j - 1] - l1) + abs(U[j, j] - l2) <= abs(U[j - 1, j - 1] - l2) + abs(U[j, j] - l1):
            values[j - 1], values[j] = l1, l2
        else:
            values[j - 1], values[j] = l2, l1
    return U, Zc, values


@njit(cache=True)
def _triangular_kernel(U, small):
    # right vectors by back substitution, left vectors by forward substitution on U^T
    m = U.shape[0]
    V = np.zeros((m, m), dtype=np.complex128)
    W = np.zeros((m, m), dtype=np.complex128)
    for j in range(m):
        lam = U[j, j]
        V[j, j] = 1.0
        for i in range(j - 1, -1, -1):
            s = -U[i, j]
            for l in range(i + 1, j):
                s -= U[i, l] * V[l, j]
            d = U[i, i] - lam
            if abs(d) < small:
                d = small
            V[i, j] = s / d
        W[j, j] = 1.0
        for i in range(j + 1, m):
            s = -U[j, i]
            for l in range(j + 1, i):
                s -= U[l, i] * W[l, j]
            d = U[i, i] - lam
            if abs(d) < small:
                d = small
            W[i, j] = s / d
    return V, W


def _triangular_vectors(U):
    """Eigenvectors of an upper triangular U: ``(V, W)`` with ``U V = V diag`` and ``W^H U = diag W^H``.

    Tiny pivots (repeated eigenvalues) are replaced by a small positive number,
    which returns a usable, if ill-conditioned, vector instead of dividing by zero.
    """
    small = max(EPS * np.abs(U).max(), SAFE_MIN)
    V, W = _triangular_kernel(np.ascontiguousarray(U), small)
    return V, W.conj()


def eig(A, want_vectors=True) -> EigenDecomposition:
    """Eigenvalues (and optionally right/left eigenvectors) of a real square matrix."""
    A = as_matrix(A, square=True)
    m = A.shape[0]
    if m == 0:
        raise DimensionError("empty matrix")
    if m > MAX_ORDER:
        raise DimensionError(f"matrix order {m} exceeds {MAX_ORDER}")
    # solve at unit scale; the power-of-two factor is restored exactly on the eigenvalues
    e = _exponent(A)
    T, Z = real_schur(np.ldexp(A, -e))
    U, Zc, values = _to_complex_schur(T, Z)
    values = np.ldexp(values.real, e) + 1j * np.ldexp(values.imag, e)
    order = canonical_order(values)
    values = values[order]
    if not want_vectors:
        return EigenDecomposition(values)
    Vt, Wt = _triangular_vectors(U)
    right = Zc @ Vt
    left = Zc @ Wt
    right /= np.linalg.norm(right, axis=0)
    left /= np.linalg.norm(left, axis=0)
    return EigenDecomposition(values, right[:, order], left[:, order])


def eigvals(A) -> np.ndarray:
    return eig(A, want_vectors=False).values


def spectral_radius(A) -> float:
    return float(np.max(np.abs(eigvals(A))))


def eigen_gap(decomp: EigenDecomposition, i: int) -> float:
    others = np.delete(decomp.values, i)
    if others.size == 0:
        return math.inf
    return float(np.min(np.abs(others - decomp.values[i])))


def eig_sensitivity_matrix(decomp: EigenDecomposition, i: int) -> np.ndarray:
    """Full matrix of first-order derivatives d lambda_i / d A_pq.

    Uses ``conj(u_p) v_q / (u^H v)`` with u, v the left and right vectors.
    Raises DegeneracyError when lambda_i is not simple.
    """
    if not decomp.has_vectors:
        raise ValueError("decomposition was computed without eigenvectors")
    if eigen_gap(decomp, i) <= GAP_TOL:
        raise DegeneracyError(f"eigenvalue {i} is repeated (gap <= {GAP_TOL:g})")
    u = decomp.left_vectors[:, i]
    v = decomp.right_vectors[:, i]
    denom = np.vdot(u, v)
    if abs(denom) <= EPS * len(v):
        raise DegeneracyError(f"eigenvalue {i} is defective (u^H v ~ 0)")
    return np.outer(u.conj(), v) / denom


def eig_sensitivity(decomp: EigenDecomposition, i: int, p: int, q: int) -> complex:
    """d lambda_i / d A_pq for a simple eigenvalue."""
    return complex(eig_sensitivity_matrix(decomp, i)[p, q])


def spectral_norm(A) -> float:
    """Largest singular value (LAPACK SVD through numpy)."""
    A = as_matrix(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.svd(A, compute_uv=False)[0])


def companion(coeffs) -> np.ndarray:
    """Companion matrix of the monic polynomial ``x^m + c[0] x^(m-1) + ... + c[m-1]``.

    First-row form, matching the block layout used by the linearized DCRNN.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    m = c.size
    C = np.zeros((m, m))
    C[0, :] = -c
    C[np.arange(1, m), np.arange(m - 1)] = 1.0
    return C
