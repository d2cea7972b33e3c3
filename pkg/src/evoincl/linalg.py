"""Dense complex linear algebra with metric-aware inner products.

Every space carries a Hermitian positive-definite metric ``W`` so that
``<x|y> = x^H W y``.  Adjoints, Hermitian parts and eigenvalues are taken
with respect to these metrics.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

COND_LIMIT = 1e12


class SingularOperator(np.linalg.LinAlgError):
    """Raised when an operator is too ill-conditioned to invert."""


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Finite-dimensional Hilbert space ``C^dim`` with metric matrix.

    Parameters
    ----------
    dim : int
        Dimension of the space.
    metric : ndarray, optional
        Hermitian positive-definite ``dim x dim`` matrix. Defaults to the
        identity.
    """

    dim: int
    metric: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        W = np.eye(self.dim) if self.metric is None else np.asarray(self.metric)
        if W.shape != (self.dim, self.dim):
            raise ValueError("metric has wrong shape")
        scale = max(np.abs(W).max(), 1.0)
        if np.abs(W - W.conj().T).max() > 1e-12 * scale:
            raise ValueError("metric is not Hermitian")
        W = 0.5 * (W + W.conj().T)
        if np.linalg.eigvalsh(W).min() <= 0:
            raise ValueError("metric is not positive definite")
        W.setflags(write=False)
        object.__setattr__(self, "metric", W)
        object.__setattr__(self, "diagonal", bool(np.all(W == np.diag(np.diag(W)))))

    @classmethod
    def euclidean(cls, dim):
        return cls(dim, np.eye(dim))

    @classmethod
    def weighted(cls, weights):
        weights = np.asarray(weights, dtype=float)
        return cls(len(weights), np.diag(weights))

    def inner(self, x, y):
        """Inner product ``x^H W y``, conjugate-linear in ``x``.

        Works on trailing axes, so stacks of vectors are paired row-wise.
        """
        x = np.asarray(x)
        y = np.asarray(y)
        if self.diagonal:
            return np.sum(x.conj() * y * np.diag(self.metric), axis=-1)
        return np.sum(x.conj() * (y @ self.metric.T), axis=-1)

    def norm(self, x):
        return np.sqrt(np.maximum(np.real(self.inner(x, x)), 0.0))

    def compatible(self, other):
        return self is other or (
            self.dim == other.dim and np.array_equal(self.metric, other.metric)
        )

    def direct_sum(self, other):
        return StateSpace(self.dim + other.dim, sla.block_diag(self.metric, other.metric))


@dataclass(frozen=True, eq=False)
class LinOp:
    """Bounded linear map between two :class:`StateSpace` objects."""

    domain: StateSpace
    codomain: StateSpace
    matrix: np.ndarray

    def __post_init__(self):
        A = np.array(self.matrix, dtype=complex)
        if A.shape != (self.codomain.dim, self.domain.dim):
            raise ValueError(
                f"matrix shape {A.shape} does not match "
                f"({self.codomain.dim}, {self.domain.dim})"
            )
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @classmethod
    def identity(cls, space):
        return cls(space, space, np.eye(space.dim))

    def __call__(self, x):
        return np.asarray(x) @ self.matrix.T

    def __matmul__(self, other):
        if not self.domain.compatible(other.codomain):
            raise ValueError("incompatible spaces in composition")
        return LinOp(other.domain, self.codomain, self.matrix @ other.matrix)

    def __add__(self, other):
        return LinOp(self.domain, self.codomain, self.matrix + other.matrix)

    def __sub__(self, other):
        return LinOp(self.domain, self.codomain, self.matrix - other.matrix)

    def scale(self, c):
        return LinOp(self.domain, self.codomain, c * self.matrix)

    @property
    def is_square(self):
        return self.domain.compatible(self.codomain)


def adjoint(T):
    """Metric adjoint ``T* = W_dom^{-1} T^H W_cod``.

    Satisfies ``<T x|y>_cod = <x|T* y>_dom``.
    """
    Wd = T.domain.metric
    Wc = T.codomain.metric
    M = np.linalg.solve(Wd, T.matrix.conj().T @ Wc)
    return LinOp(T.codomain, T.domain, M)


def condition(T):
    """2-norm condition number of ``T`` in the metric-induced norms."""
    Ld = np.linalg.cholesky(T.domain.metric)
    Lc = np.linalg.cholesky(T.codomain.metric)
    # ||T||_{W} = ||Lc^H T Ld^{-H}||_2
    B = Lc.conj().T @ T.matrix @ np.linalg.inv(Ld.conj().T)
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] == 0:
        return np.inf
    return s[0] / s[-1]


def solve(T, b):
    """Solve ``T x = b``.

    Raises
    ------
    SingularOperator
        If ``T`` is not square or its condition number exceeds ``1e12``.
    """
    if T.domain.dim != T.codomain.dim:
        raise SingularOperator("operator is not square")
    cond = condition(T)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularOperator(f"condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    b = np.asarray(b, dtype=complex)
    x = np.linalg.solve(T.matrix, b.T).T
    return x


def hermitian_part(T):
    Ts = adjoint(T)
    return LinOp(T.domain, T.domain, 0.5 * (T.matrix + Ts.matrix))


def hermitian_min_eig(T):
    """Smallest eigenvalue of the Hermitian part of ``T`` in the metric.

    Computed as the generalized eigenproblem ``W H x = lam W x`` with
    ``W H = (W T + T^H W)/2``.
    """
    if not T.is_square:
        raise ValueError("operator must be square")
    W = T.domain.metric
    WT = W @ T.matrix
    S = 0.5 * (WT + WT.conj().T)
    return float(sla.eigh(S, W, eigvals_only=True, subset_by_index=[0, 0])[0])


def batch_hermitian_min_eig(mats, metric):
    """Vectorized :func:`hermitian_min_eig` over a stack of matrices."""
    mats = np.asarray(mats)
    L = np.linalg.cholesky(metric)
    Li = np.linalg.inv(L)
    WT = metric @ mats
    S = 0.5 * (WT + np.conj(np.swapaxes(WT, -1, -2)))
    C = Li @ S @ Li.conj().T
    C = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
    return np.linalg.eigvalsh(C)[..., 0]


def gram_orthonormalize(vectors, inner, tol=1e-12):
    """Orthonormalize columns with respect to an inner-product matrix.

    Parameters
    ----------
    vectors : ndarray, shape (dim, k)
    inner : ndarray, shape (dim, dim)
        Hermitian positive-definite Gram matrix of the ambient inner product.

    Returns
    -------
    ndarray, shape (dim, r)
        Orthonormal basis of the span (``r <= k``), built from the
        eigen-decomposition of the Gram matrix of ``vectors``.
    """
    V = np.asarray(vectors, dtype=complex)
    Gm = V.conj().T @ inner @ V
    Gm = 0.5 * (Gm + Gm.conj().T)
    w, U = np.linalg.eigh(Gm)
    keep = w > tol * max(w.max(), 1e-300)
    Q = V @ (U[:, keep] / np.sqrt(w[keep]))
    # one re-orthonormalization pass against roundoff
    Gq = Q.conj().T @ inner @ Q
    Lq = np.linalg.cholesky(0.5 * (Gq + Gq.conj().T))
    return np.linalg.solve(Lq.conj(), Q.T).T
