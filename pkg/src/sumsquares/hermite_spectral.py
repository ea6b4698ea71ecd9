"""Ground states of the rescaled ODE operators in the Hermite-function basis.

Coefficients refer to the orthonormal Hermite functions
``h_n(y) = (2^n n! sqrt(pi))^{-1/2} H_n(y) e^{-y^2/2}``. In that basis
multiplication by ``y`` and ``d/dy`` are bidiagonal, so polynomial
coefficient operators become banded matrices with no quadrature error.

A finite-difference discretization of the same quadratic form serves as an
independent check on the Galerkin eigenvalue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .symbolic_fields import OdeOp, q_tau

ASYMMETRY_RTOL = 1e-8
DEFAULT_TOL = 1e-10
N_CAP = 2**13
B_WINDOW = 4.0


class IntegrityError(RuntimeError):
    """Assembled matrix is not symmetric to working precision."""


class ConvergenceError(RuntimeError):
    """An iterative solve did not meet its tolerance; ``best`` holds the last iterate."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class BandMatrix:
    """Real symmetric band matrix in LAPACK lower storage.

    ``band[d, j]`` holds ``M[j + d, j]``. ``factors`` optionally records a
    factorization ``M = sum_i w_i F_i^T F_i`` used to evaluate Rayleigh
    quotients without cancellation.
    """

    band: np.ndarray
    factors: tuple = field(default=(), compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.band.shape[1]

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1

    @classmethod
    def from_matrix(cls, A, factors=(), bandwidth=None):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        coo = A.tocoo()
        if bandwidth is None:
            off = np.abs(coo.row - coo.col)
            bandwidth = int(off[coo.data != 0].max()) if coo.nnz else 0
        band = np.zeros((bandwidth + 1, n))
        lower = coo.row >= coo.col
        r, c, v = coo.row[lower], coo.col[lower], coo.data[lower]
        keep = (r - c) <= bandwidth
        np.add.at(band, (r[keep] - c[keep], c[keep]), v[keep])
        return cls(band, tuple(factors))

    def to_sparse(self) -> sp.csr_matrix:
        n, b = self.n, self.bandwidth
        diags = [self.band[0]]
        offsets = [0]
        for d in range(1, b + 1):
            diags += [self.band[d, : n - d], self.band[d, : n - d]]
            offsets += [-d, d]
        return sp.diags(diags, offsets, shape=(n, n), format="csr")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def matvec(self, c) -> np.ndarray:
        return self.to_sparse() @ np.asarray(c)

    def norm(self) -> float:
        """Max absolute row sum (bounds the spectral norm)."""
        return float(abs(self.to_sparse()).sum(axis=1).max())

    def quadratic_form(self, c) -> float:
        c = np.asarray(c, dtype=float)
        if self.factors:
            return float(sum(w * np.sum((F @ c) ** 2) for w, F in self.factors))
        return float(c @ self.matvec(c))


@dataclass(frozen=True)
class GroundState:
    lam: float
    coeffs: np.ndarray
    N: int
    residual: float
    tau: float | None = None
    k: int | None = None
    gap: float | None = None
    basis: str = "hermite"
    grid: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "N": self.N,
            "residual": self.residual,
            "tau": self.tau,
            "k": self.k,
            "gap": self.gap,
            "basis": self.basis,
        }


@dataclass(frozen=True)
class NormProfile:
    ynorm: float
    dnorm: float
    overlap: float
    gnorm: float
    supnorm: float
    sup_near0: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ladder_matrices(N: int, pad: int = 0):
    """Sparse matrices of ``y`` and ``d/dy`` on the first ``N + pad`` Hermite functions."""
    n = N + pad
    if N < 1 or pad < 0:
        raise ValueError("need N >= 1 and pad >= 0")
    off = np.sqrt(np.arange(1, n) / 2.0)
    Y = sp.diags([off, off], [-1, 1], shape=(n, n), format="csr")
    D = sp.diags([-off, off], [-1, 1], shape=(n, n), format="csr")
    return Y, D


def _poly_of(Y, coeffs) -> sp.csr_matrix:
    n = Y.shape[0]
    out = sp.csr_matrix((n, n))
    for c in coeffs[::-1]:
        out = out @ Y + c * sp.identity(n, format="csr")
    return out


def assemble(op: OdeOp, N: int) -> BandMatrix:
    """Galerkin matrix of a real, formally self-adjoint polynomial ODE operator.

    Builds ``sum_m a_m(Y) D^m`` at size ``N + pad`` and keeps the leading
    ``N x N`` block, which is exact for ``pad >= degree + order``.
    """
    if len(op.variables) != 1:
        raise ValueError("assemble needs a one-variable operator")
    deg = max((a.degree() for a in op.terms.values()), default=0)
    pad = deg + op.order
    Y, D = ladder_matrices(N, pad)
    n = N + pad
    A = sp.csr_matrix((n, n))
    for (m,), a in op.terms.items():
        coeffs = a.coefficients_1d()
        if np.max(np.abs(coeffs.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(coeffs))):
            raise IntegrityError("operator has complex coefficients")
        term = _poly_of(Y, coeffs.real)
        for _ in range(m):
            term = term @ D
        A = A + term
    A = A.tocsr()[:N, :N]
    scale = max(abs(A).max(), 1e-300)
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > ASYMMETRY_RTOL * scale:
        raise IntegrityError(f"operator is not self-adjoint (asymmetry {asym:.3e})")
    return BandMatrix.from_matrix((A + A.T) * 0.5)


def factor_matrices(k: int, N: int):
    """Exact Galerkin images of ``(d + y)`` and ``y^k (d - y)`` on span{h_0..h_{N-1}}.

    Matrices have all rows needed (``N + k + 1``) and ``N`` columns.
    """
    pad = k + 2
    Y, D = ladder_matrices(N, pad)
    Gp = (D + Y).tocsr()[:, :N]
    Yk = sp.identity(N + pad, format="csr")
    for _ in range(k):
        Yk = Yk @ Y
    G = (Yk @ (D - Y)).tocsr()[:, :N]
    return Gp, G


def assemble_factored(k: int, tau: float, N: int) -> BandMatrix:
    """``Gp^T Gp + tau^{-k} G^T G``: symmetric positive semidefinite by construction."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    eps = float(tau) ** (-k)
    Gp, G = factor_matrices(k, N)
    M = (Gp.T @ Gp + eps * (G.T @ G)).tocsr()
    return BandMatrix.from_matrix(M, factors=((1.0, Gp), (eps, G)), bandwidth=min(2 * k + 2, N - 1))


def ground_state(M: BandMatrix, tol: float = DEFAULT_TOL, tau=None, k=None) -> GroundState:
    """Smallest eigenpair of a symmetric band matrix (LAPACK ``dsbevx``).

    The eigenvalue is recomputed as a Rayleigh quotient through the stored
    factors when available, which keeps tiny eigenvalues accurate relative to
    themselves rather than to the matrix norm. The eigenvector is sign-fixed
    so that its first component is non-negative.
    """
    n = M.n
    hi = min(1, n - 1)
    w, v = scipy.linalg.eig_banded(
        M.band, lower=True, select="i", select_range=(0, hi), check_finite=True
    )
    c = v[:, 0]
    c = c / np.linalg.norm(c)
    pivot = c[0] if abs(c[0]) > 1e-300 else c[np.argmax(np.abs(c))]
    if pivot < 0:
        c = -c
    lam = M.quadratic_form(c) if M.factors else float(w[0])
    residual = float(np.linalg.norm(M.matvec(c) - lam * c))
    gap = float(w[1] - w[0]) if len(w) > 1 else None
    gs = GroundState(lam=lam, coeffs=c, N=n, residual=residual, tau=tau, k=k, gap=gap)
    if residual > tol * max(M.norm(), 1e-300):
        raise ConvergenceError(f"residual {residual:.3e} exceeds tolerance", best=gs)
    return gs


def adaptive_ground_state(k: int, tau: float, tol: float = DEFAULT_TOL, N0: int = 32,
                          N_cap: int = N_CAP) -> GroundState:
    """Double ``N`` until ``|lam_N - lam_2N| <= tol * lam_2N``; return the ``2N`` state."""
    if k < 1 or tau < 1:
        raise ValueError("need k >= 1 and tau >= 1")
    N = N0
    prev = ground_state(assemble_factored(k, tau, N), tau=tau, k=k)
    while 2 * N <= N_cap:
        N *= 2
        cur = ground_state(assemble_factored(k, tau, N), tau=tau, k=k)
        if abs(prev.lam - cur.lam) <= tol * cur.lam:
            return cur
        prev = cur
    raise ConvergenceError(f"no convergence up to N={N_cap} (k={k}, tau={tau})", best=prev)


def eval_eigenfunction(c, ys) -> np.ndarray:
    """``sum_n c_n h_n(y)`` by the normalized three-term recurrence.

    The recurrence runs on unscaled values with the Gaussian factor applied at
    the end; intermediate values are rescaled to stay in range, so large
    ``|y|`` does not underflow.
    """
    c = np.asarray(c, dtype=float)
    ys = np.asarray(ys, dtype=float)
    shape = ys.shape
    y = ys.ravel()
    logscale = np.zeros_like(y)
    h_prev = np.zeros_like(y)
    h = np.full_like(y, np.pi**-0.25)
    acc = c[0] * h if len(c) else np.zeros_like(y)
    for n in range(len(c) - 1):
        h_next = math.sqrt(2.0 / (n + 1)) * y * h - math.sqrt(n / (n + 1)) * h_prev
        h_prev, h = h, h_next
        acc = acc + c[n + 1] * h
        big = np.abs(h) > 1e150
        if big.any():
            s = np.abs(h[big])
            h[big] /= s
            h_prev[big] /= s
            acc[big] /= s
            logscale[big] += np.log(s)
    out = acc * np.exp(logscale - 0.5 * y * y)
    return out.reshape(shape)


def sup_grid(N: int) -> np.ndarray:
    half = max(8.0, math.sqrt(2.0 * N) + 4.0)
    m = int(round(half / 0.01))
    return np.linspace(-half, half, 2 * m + 1)


def derived_norms(c, B_window: float = B_WINDOW) -> NormProfile:
    """Moments, Gaussian overlap and sampled sup norms of ``sum c_n h_n``."""
    c = np.asarray(c, dtype=float)
    N = len(c)
    Y, D = ladder_matrices(N, 1)
    cp = np.concatenate([c, [0.0]])
    ynorm = float(np.linalg.norm(Y @ cp))
    dnorm = float(np.linalg.norm(D @ cp))
    overlap = float(abs(c[0]))
    gnorm = float(np.linalg.norm(c[1:]))
    supnorm = float(np.max(np.abs(eval_eigenfunction(c, sup_grid(N)))))
    near = np.linspace(-B_window, B_window, 1601)
    sup_near0 = float(np.max(np.abs(eval_eigenfunction(c, near))))
    return NormProfile(ynorm, dnorm, overlap, gnorm, supnorm, sup_near0)


def _fd_factor(nodes: np.ndarray, h: float, a, b) -> sp.csr_matrix:
    """Rows ``a(m) (f[j+1]-f[j])/h + b(m) (f[j]+f[j+1])/2`` at interval midpoints.

    Columns are the interior nodes; the end values are fixed to zero.
    """
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    am, bm = a(mid), b(mid)
    M = len(mid)
    left = -am / h + bm / 2  # coefficient on f[j]
    right = am / h + bm / 2  # coefficient on f[j+1]
    # interior unknown i (node i+1) appears in row i (as right) and row i+1 (as left)
    A = sp.diags([right[:-1], left[1:]], [0, -1], shape=(M, M - 1), format="csr")
    return A


def _sturm_count(d, e2, x) -> int:
    """Number of eigenvalues of the tridiagonal (d, e) below ``x``."""
    count = 0
    q = 1.0
    tiny = 1e-300
    for i in range(len(d)):
        q = d[i] - x - (e2[i - 1] / q if i else 0.0)
        if q == 0.0:
            q = tiny
        if q < 0:
            count += 1
    return count


def _bisect(d, e2, idx, lo, hi, atol):
    while hi - lo > atol:
        mid = 0.5 * (lo + hi)
        if _sturm_count(d, e2, mid) > idx:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def tridiagonal_ground_state(d, e, factors=(), tol=DEFAULT_TOL):
    """Two smallest eigenvalues by Sturm bisection, eigenvector by inverse iteration."""
    d = np.asarray(d, dtype=float)
    e = np.asarray(e, dtype=float)
    n = len(d)
    ae = np.abs(np.concatenate([[0.0], e])) + np.abs(np.concatenate([e, [0.0]]))
    lo, hi = float(np.min(d - ae)), float(np.max(d + ae))
    norm = max(abs(lo), abs(hi))
    atol = 4 * np.finfo(float).eps * norm
    e2 = e * e
    lam1 = _bisect(d, e2, 0, lo, hi, atol)
    lam2 = _bisect(d, e2, 1, lam1 - atol, hi, max(atol, 1e-9 * abs(hi))) if n > 1 else None

    ab = np.zeros((3, n))
    ab[0, 1:] = e
    ab[2, :-1] = e
    v = np.ones(n) / math.sqrt(n)
    shift = lam1 - max(atol, 1e-12 * norm)
    ab[1] = d - shift
    for _ in range(4):
        v = scipy.linalg.solve_banded((1, 1), ab, v)
        v /= np.linalg.norm(v)
    T = sp.diags([e, d, e], [-1, 0, 1], format="csr")
    if factors:
        lam = float(sum(w * np.sum((F @ v) ** 2) for w, F in factors))
    else:
        lam = float(v @ (T @ v))
    residual = float(np.linalg.norm(T @ v - lam * v))
    if residual > tol * norm:
        raise ConvergenceError(f"residual {residual:.3e} exceeds tolerance", best=(lam, v))
    gap = None if lam2 is None else lam2 - lam
    return lam, v, residual, gap


def fd_ground_state(k: int, tau: float, R: float = 12.0, M: int = 4096,
                    tol: float = DEFAULT_TOL) -> GroundState:
    """Finite-difference oracle for the lowest eigenvalue.

    Discretizes ``||(d+y) f||^2 + tau^{-k} ||y^k (d-y) f||^2`` on ``[-R, R]``
    with ``M`` intervals and zero end values. Each first-order factor is a
    forward difference with midpoint coefficients, so the matrix is a sum of
    normal-equation products: tridiagonal, symmetric and positive semidefinite.
    The eigensolver here (bisection plus inverse iteration) is independent of
    the banded LAPACK path used for the Galerkin matrix.
    """
    if k < 1 or not tau > 0:
        raise ValueError("need k >= 1 and tau > 0")
    if R <= 0 or M < 16:
        raise ValueError("need R > 0 and M >= 16")
    eps = float(tau) ** (-k)
    nodes = np.linspace(-R, R, M + 1)
    h = 2.0 * R / M
    Gp = _fd_factor(nodes, h, np.ones_like, lambda y: y)
    G = _fd_factor(nodes, h, lambda y: y**k, lambda y: -(y ** (k + 1)))
    T = (Gp.T @ Gp + eps * (G.T @ G)).tocsr()
    d = T.diagonal()
    e = T.diagonal(-1)
    lam, v, residual, gap = tridiagonal_ground_state(d, e, ((1.0, Gp), (eps, G)), tol)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return GroundState(lam=lam, coeffs=v, N=M, residual=residual, tau=tau, k=k, gap=gap,
                       basis="grid", grid=nodes[1:-1])


def gaussian_rayleigh(k: int, tau: float) -> float:
    """``<Q g, g>`` for the normalized Gaussian: ``4 Gamma(k + 3/2) / sqrt(pi) * tau^{-k}``."""
    return 4.0 * math.gamma(k + 1.5) / math.sqrt(math.pi) * float(tau) ** (-k)


def coercivity_ratios(M: BandMatrix, k: int, tau: float, samples: Sequence[np.ndarray]):
    """``<Mc,c> / (tau^{-k} (1 + ||yc||^2 + ||dc||^2))`` for each unit vector c."""
    N = M.n
    Y, D = ladder_matrices(N, 1)
    eps = float(tau) ** (-k)
    out = []
    for c in samples:
        cp = np.concatenate([c, [0.0]])
        denom = eps * (1.0 + np.sum((Y @ cp) ** 2) + np.sum((D @ cp) ** 2))
        out.append(M.quadratic_form(c) / denom)
    return np.array(out)


def ground_state_for(op: OdeOp, N: int, tol: float = DEFAULT_TOL) -> GroundState:
    """Ground state of an arbitrary self-adjoint polynomial ODE operator."""
    return ground_state(assemble(op, N), tol)


def q_tau_matrix(k: int, tau: float, N: int) -> BandMatrix:
    return assemble(q_tau(k, tau), N)
