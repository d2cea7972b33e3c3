"""Abstract boundary data spaces and boundary-coupled operators in 1-D.

The staggered grid on ``[0, L]`` carries ``H0`` (the ``n + 1`` nodes, trapezoid
metric) and ``H1`` (the ``n`` cell midpoints).  ``G`` is the forward
difference ``H0 -> H1`` and ``D0 = -G*`` its metric adjoint, i.e. the
divergence with zero boundary flux.  On a grid the maximal divergence ``D``
is the relation ``v -> D0 v + E beta`` whose boundary rows are free: the
selection ``beta = (q(0), q(L))`` is the boundary flux.  With these
conventions

* ``G = -D0*`` holds exactly, ``G_c`` is ``G`` on ``V0 = {u_0 = u_n = 0}``,
* Green's identity reads ``<G u|v> + <u|D0 v + E beta> = conj(u_n) beta_n - conj(u_0) beta_0``,
* ``BD(G)`` and ``BD(D)`` are two-dimensional and ``•G``, ``•D`` are
  mutually inverse unitaries up to roundoff.

Boundary relations are posed in endpoint coordinates: the trace
``a = (u_0, u_n)`` and the outward flux ``b = (-beta_0, beta_n)``.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .accel import anderson_root
from .linalg import LinOp, SingularOperator, StateSpace, gram_orthonormalize
from .monotone import (
    AbsSubdiff,
    MonotoneRelation,
    SignalAmbient,
)
from .timegrid import Signal, SpectralSignal, fourier_laplace, inverse_fourier_laplace

SKEW_TOL = 1e-10
RESOLVE_TOL = 1e-7


class DegenerateBasis(ValueError):
    """Raised when a boundary data space does not have dimension 2."""


class PostconditionFailed(RuntimeError):
    """Raised when a resolvent evaluation misses its residual bound."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# skew pair ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SkewPair:
    """Staggered-grid realization of ``(G_c, D_c)`` and ``(G, D)``.

    Attributes
    ----------
    n : int
        Number of cells.
    length : float
    H0, H1 : StateSpace
        Node and midpoint spaces.
    G : LinOp
        Full forward difference ``H0 -> H1``.
    D0 : LinOp
        ``-G*``; the divergence with zero boundary flux (this is ``D_c``).
    E : ndarray, shape (n + 1, 2)
        Boundary-flux injection: ``D v = D0 v + E beta``.
    interior : ndarray
        Indices of ``V0``, the nodes where ``G_c`` does not constrain values.
    """

    n: int
    length: float
    H0: StateSpace
    H1: StateSpace
    G: LinOp
    D0: LinOp
    E: np.ndarray
    interior: np.ndarray

    @property
    def dx(self):
        return self.length / self.n

    @property
    def nodes(self):
        return np.linspace(0.0, self.length, self.n + 1)

    @property
    def midpoints(self):
        return (np.arange(self.n) + 0.5) * self.dx

    @property
    def Gc_mask(self):
        """Boolean mask of the ``G_c`` domain (zero trace) on ``H0``."""
        m = np.zeros(self.n + 1, dtype=bool)
        m[self.interior] = True
        return m

    def apply_D(self, v, beta):
        """A selection of ``D v``: ``D0 v + E beta``."""
        return np.asarray(v) @ self.D0.matrix.T + np.asarray(beta) @ self.E.T

    def flux_of(self, v, w):
        """Selection ``beta`` for which ``w = D0 v + E beta`` on the boundary rows."""
        r = np.asarray(w) - np.asarray(v) @ self.D0.matrix.T
        return np.stack([r[..., 0] / self.E[0, 0], r[..., -1] / self.E[-1, 1]], axis=-1)

    def outward(self, beta):
        beta = np.asarray(beta)
        return np.stack([-beta[..., 0], beta[..., 1]], axis=-1)

    def skew_residual(self, n_samples=100, seed=0):
        """Max of ``|<G_c u|v> + <u|D v>|`` over random ``u in V0`` and ``(v, beta)``."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_samples):
            u = np.zeros(self.n + 1, dtype=complex)
            k = len(self.interior)
            u[self.interior] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
            v = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
            beta = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            lhs = self.H1.inner(self.G(u), v) + self.H0.inner(u, self.apply_D(v, beta))
            scale = self.H0.norm(u) * (self.H1.norm(v) / self.dx + np.abs(beta).max())
            worst = max(worst, abs(lhs) / scale)
        return float(worst)


def build_1d_pair(n, L=1.0):
    """Staggered-grid gradient/divergence pair on ``[0, L]`` with ``n`` cells.

    Raises
    ------
    ValueError
        If ``n < 4``.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    dx = L / n
    w0 = np.full(n + 1, dx)
    w0[0] = w0[-1] = dx / 2
    H0 = StateSpace.weighted(w0)
    H1 = StateSpace.weighted(np.full(n, dx))
    Gm = (np.eye(n, n + 1, 1) - np.eye(n, n + 1)) / dx
    G = LinOp(H0, H1, Gm)
    D0m = -np.diag(1.0 / w0) @ Gm.T @ np.diag(np.full(n, dx))
    D0 = LinOp(H1, H0, D0m)
    E = np.zeros((n + 1, 2))
    E[0, 0] = -1.0 / w0[0]
    E[-1, 1] = 1.0 / w0[-1]
    pair = SkewPair(n, float(L), H0, H1, G, D0, E, np.arange(1, n))
    res = pair.skew_residual(20)
    if res > SKEW_TOL:
        raise AssertionError(f"skew-adjointness residual {res:.2e}")
    return pair


# boundary data spaces ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BDSpace:
    """Graph-orthonormal basis of ``BD(G)`` or ``BD(D)`` for the pair ``(lam G, lam D)``.

    For ``which == "G"`` the basis is an ``(n + 1, 2)`` array of node
    functions.  For ``which == "D"`` an element is a graph pair ``(v, w)``
    with ``w`` a selection of ``lam D v``; ``basis`` stacks ``v`` over ``w``
    (shape ``(2n + 1, 2)``).
    """

    pair: SkewPair
    which: str
    lam: float
    basis: np.ndarray
    route: str

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def gram_metric(self):
        return graph_metric(self.pair, self.which, self.lam)

    def orthonormality_defect(self):
        B = self.basis
        M = B.conj().T @ self.gram_metric @ B
        return float(np.abs(M - np.eye(self.dim)).max())

    @property
    def traces(self):
        """``Gamma``: endpoint values of the ``BD(G)`` basis (2 x 2)."""
        if self.which != "G":
            raise ValueError("traces are defined on BD(G)")
        return self.basis[[0, -1], :]


def graph_metric(pair, which, lam=1.0):
    """Metric of the graph inner product of ``lam G`` (on ``H0``) or ``lam D`` (pairs)."""
    W0, W1 = pair.H0.metric, pair.H1.metric
    if which == "G":
        Gs = lam * pair.G.matrix
        return W0 + Gs.T @ W1 @ Gs
    if which == "D":
        return sla.block_diag(W1, W0)
    raise ValueError("which must be 'G' or 'D'")


def bd_basis(pair, which="G", lam=1.0, route="complement"):
    """Basis of ``BD(G) = D(G_c)^perp`` or ``BD(D) = D(D_c)^perp``.

    Parameters
    ----------
    route : {"complement", "kernel"}
        ``"complement"`` removes the ``V0`` component of the two endpoint
        indicators (graph-orthogonal projection) and orthonormalizes;
        ``"kernel"`` takes the null space of the interior rows of
        ``1 - D G`` (for ``D``: solves ``(1 - G D0) v = G E beta``).

    Raises
    ------
    DegenerateBasis
        If the resulting dimension is not 2.
    """
    n = pair.n
    Gs = lam * pair.G.matrix
    D0s = lam * pair.D0.matrix
    Wg = graph_metric(pair, which, lam)
    if which == "G":
        if route == "complement":
            it = pair.interior
            V = np.zeros((n + 1, 2), dtype=complex)
            V[0, 0] = V[-1, 1] = 1.0
            Wg_ii = Wg[np.ix_(it, it)]
            Wg_ib = Wg[np.ix_(it, [0, n])]
            V[it, :] = -np.linalg.solve(Wg_ii, Wg_ib)
        elif route == "kernel":
            K = (np.eye(n + 1) - D0s @ Gs)[pair.interior, :]
            V = sla.null_space(K)
        else:
            raise ValueError(f"unknown route {route!r}")
    elif which == "D":
        if route == "complement":
            # (v, w) is graph-orthogonal to {(phi, lam D0 phi)} iff v = lam G w
            Es = pair.E
            V = np.zeros((2 * n + 1, 2), dtype=complex)
            for j in range(2):
                rhs = Gs @ Es[:, j]
                v = np.linalg.solve(np.eye(n) - Gs @ D0s, rhs)
                V[:n, j] = v
                V[n:, j] = D0s @ v + Es[:, j]
        elif route == "kernel":
            # null space of [1, -lam G] on pairs whose w rows agree with lam D0 v
            # away from the boundary
            top = np.hstack([np.eye(n), -Gs])
            it = pair.interior
            mid = np.hstack([D0s[it, :], -np.eye(n + 1)[it, :]])
            V = sla.null_space(np.vstack([top, mid]))
        else:
            raise ValueError(f"unknown route {route!r}")
    else:
        raise ValueError("which must be 'G' or 'D'")
    Q = gram_orthonormalize(V, Wg)
    if Q.shape[1] != 2:
        raise DegenerateBasis(f"BD({which}) has dimension {Q.shape[1]}, expected 2")
    if which == "G":
        Q = _canonical(Q)
    return BDSpace(pair, which, float(lam), Q, route)


def _canonical(Q):
    # rotate so that the traces Gamma are lower triangular with positive
    # diagonal: the second basis function vanishes at the left end
    Gam = Q[[0, -1], :]
    U, R = np.linalg.qr(Gam.conj().T)
    ph = np.diag(R) / np.abs(np.diag(R))
    return Q @ (U * ph[None, :])


def subspace_gap(A, B, metric):
    """``||P_A - P_B||_2`` for column spaces orthonormal in ``metric``."""
    L = np.linalg.cholesky(metric)
    Pa = L.conj().T @ A
    Pb = L.conj().T @ B
    return float(np.linalg.norm(Pa @ Pa.conj().T - Pb @ Pb.conj().T, 2))


def continuum_kernel(pair):
    """Sampled ``cosh``/``sinh`` pair, the continuum kernel of ``u - u''``."""
    x = pair.nodes
    return np.stack([np.cosh(x), np.sinh(x)], axis=1)


def kernel_angle(space):
    """Largest principal angle between ``BD(G)`` and the sampled continuum kernel."""
    Wg = space.gram_metric
    C = gram_orthonormalize(continuum_kernel(space.pair).astype(complex), Wg)
    return float(np.arcsin(min(1.0, subspace_gap(space.basis, C, Wg))))


def kernel_residual(space):
    """``max_e |interior rows of (1 - lam D0 lam G) e|`` relative to ``|e|_graph = 1``."""
    if space.which != "G":
        raise ValueError("kernel residual is defined on BD(G)")
    p, lam = space.pair, space.lam
    K = np.eye(p.n + 1) - (lam * p.D0.matrix) @ (lam * p.G.matrix)
    r = (K @ space.basis)[p.interior, :]
    return float(np.sqrt(np.max(np.sum(np.abs(r) ** 2 * p.dx, axis=0))))


def project_bd(space, u):
    """Graph-orthogonal projection coefficients onto ``space``.

    ``u`` is an array of node functions (trailing axis ``n + 1``) for
    ``BD(G)``, or stacked graph pairs ``(v, w)`` (trailing axis ``2n + 1``)
    for ``BD(D)``.
    """
    u = np.asarray(u)
    return (u @ space.gram_metric.T) @ space.basis.conj()


def reconstruct(space, coeffs):
    return np.asarray(coeffs) @ space.basis.T


@dataclass(frozen=True)
class BulletMaps:
    """Matrices of ``•G: BD(G) -> BD(D)`` and ``•D: BD(D) -> BD(G)`` in the bases."""

    G: np.ndarray
    D: np.ndarray
    unitarity_defect: float
    adjoint_defect: float
    inverse_defect: float

    def to_dict(self):
        return {
            "unitarity_defect": self.unitarity_defect,
            "adjoint_defect": self.adjoint_defect,
            "inverse_defect": self.inverse_defect,
        }


def bullet_maps(bdg, bdd):
    """Compute ``•G`` and ``•D`` and their unitarity/adjointness defects."""
    pair, lam = bdg.pair, bdg.lam
    n = pair.n
    Gs = lam * pair.G.matrix
    # •G u = (lam G u, u) as a graph pair of lam D
    imgG = np.vstack([Gs @ bdg.basis, bdg.basis])
    bG = project_bd(bdd, imgG.T).T
    # •D (v, w) = w
    imgD = bdd.basis[n:, :]
    bD = project_bd(bdg, imgD.T).T
    I = np.eye(2)
    return BulletMaps(
        bG,
        bD,
        float(np.linalg.norm(bG.conj().T @ bG - I, 2)),
        float(np.linalg.norm(bG.conj().T - bD, 2)),
        float(np.linalg.norm(bD @ bG - I, 2)),
    )


def bullet_G(pair, lam=1.0):
    """Matrix of ``•G`` with defects (see :func:`bullet_maps`)."""
    return bullet_maps(bd_basis(pair, "G", lam), bd_basis(pair, "D", lam))


def bullet_D(pair, lam=1.0):
    m = bullet_G(pair, lam)
    return BulletMaps(m.D, m.G, m.unitarity_defect, m.adjoint_defect, m.inverse_defect)


# endpoint relations -------------------------------------------------------------


class EndpointRelation:
    """Boundary relation ``g_e`` between traces ``a`` and outward fluxes ``b``.

    The central capability is :meth:`metric_resolve`: given a Hermitian
    positive ``S`` and a signal ``r`` of shape ``(N, 2)``, find ``a`` with
    ``a + S b = r`` and ``b in scale * g_e(a)``.
    """

    kind = "abstract"
    static = True
    linear = False
    autonomous = True

    def matrix(self):
        """``K`` with ``b = K a`` when the relation is static and linear."""
        raise NotImplementedError

    def symbols(self, grid):
        """Per-bin ``2 x 2`` symbols when the relation is linear."""
        K = self.matrix()
        return np.broadcast_to(K, (grid.padded_length, 2, 2))

    def metric_resolve(self, scale, S, r, grid=None):
        raise NotImplementedError

    def flux(self, scale, S, r, a):
        """``b = S^{-1}(r - a)``."""
        return np.linalg.solve(S, (np.asarray(r) - np.asarray(a)).T).T

    def to_dict(self):
        return {"kind": self.kind, "params": {}}


class LinearEndpoint(EndpointRelation):
    """Static ``b = K a``; monotone iff ``Re K >= 0``."""

    kind = "linear"
    linear = True

    def __init__(self, K):
        K = np.asarray(K, dtype=complex)
        if K.shape != (2, 2):
            raise ValueError("K must be 2 x 2")
        self.K = K

    def matrix(self):
        return self.K

    def metric_resolve(self, scale, S, r, grid=None):
        M = np.eye(2) + scale * S @ self.K
        return np.linalg.solve(M, np.asarray(r).T).T

    def to_dict(self):
        return {"kind": self.kind, "params": {"K": [[[z.real, z.imag] for z in row] for row in self.K]}}


class ZeroEndpoint(LinearEndpoint):
    """``b = 0``: zero outward flux (Neumann-type)."""

    kind = "zero"

    def __init__(self):
        super().__init__(np.zeros((2, 2)))

    def metric_resolve(self, scale, S, r, grid=None):
        return np.array(r, dtype=complex)

    def to_dict(self):
        return {"kind": self.kind, "params": {}}


class DirichletEndpoint(EndpointRelation):
    """Normal cone of ``{0}``: zero trace, arbitrary flux."""

    kind = "dirichlet"

    def metric_resolve(self, scale, S, r, grid=None):
        return np.zeros_like(np.asarray(r, dtype=complex))


class StaticEndpoint(EndpointRelation):
    """Any static monotone relation on ``C^2`` given by its resolvent.

    The metric resolvent is found by forward-backward iteration
    ``a <- J_{c scale g}(a - c S^{-1}(a - r))`` with ``c = lambda_min(S)``,
    accelerated by Anderson mixing.
    """

    kind = "static"

    def __init__(self, rel, tol=1e-13, maxiter=20000):
        self.rel = rel
        self.tol = tol
        self.maxiter = maxiter

    def metric_resolve(self, scale, S, r, grid=None):
        r = np.asarray(r, dtype=complex)
        Sinv = np.linalg.inv(S)
        c = float(np.linalg.eigvalsh(S)[0])

        def R(a):
            return a - self.rel.resolve(c * scale, a - c * ((a - r) @ Sinv.T))

        norm = lambda x: float(np.abs(x).max()) if x.size else 0.0
        tol = self.tol * (1 + norm(r))
        out = anderson_root(R, self.rel.resolve(scale, r), 1.0, norm, tol, self.maxiter, memory=8)
        if not out.converged:
            from .monotone import NoConvergence

            raise NoConvergence(f"boundary metric resolvent stalled at {out.residual:.2e}")
        return out.x

    def to_dict(self):
        return {"kind": self.kind, "relation": self.rel.to_dict()}


class FrictionEndpoint(StaticEndpoint):
    """Dry friction ``g_e = d(mu_0 |a_0| + mu_1 |a_1|)`` per endpoint.

    For real data the metric resolvent is found exactly by enumerating the
    nine stick/slip patterns; complex data falls back to forward-backward.
    """

    kind = "friction"

    def __init__(self, mu):
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (2,)).copy()
        if np.any(mu < 0):
            raise ValueError("friction coefficients must be non-negative")
        self.mu = mu
        self.linear = bool(np.all(mu == 0))
        super().__init__(AbsSubdiff(StateSpace.euclidean(2), mu))

    def matrix(self):
        if not self.linear:
            raise ValueError("friction law is not linear")
        return np.zeros((2, 2))

    def metric_resolve(self, scale, S, r, grid=None):
        r = np.asarray(r, dtype=complex)
        if self.linear:
            return r.copy()
        rr = np.atleast_2d(r)
        if np.abs(S.imag).max() > 0 or np.abs(rr.imag).max() > 1e-14 * (1 + np.abs(rr).max()):
            return super().metric_resolve(scale, S, r, grid)
        a = _friction_cases(scale * self.mu, S.real, rr.real)
        return a.reshape(r.shape).astype(complex)

    def to_dict(self):
        return {"kind": self.kind, "params": {"mu": self.mu.tolist()}}


def _friction_cases(m, S, r):
    """Solve ``a + S b = r``, ``b_i in m_i sign(a_i)`` row-wise for real data."""
    N = r.shape[0]
    best = np.full(N, np.inf)
    out = np.zeros_like(r)
    tol = 1e-12 * (1 + np.abs(r).max() + np.abs(S).max() * m.max())
    for s0 in (0, 1, -1):
        for s1 in (0, 1, -1):
            s = (s0, s1)
            # unknown z_i = b_i for stick (s_i = 0) and a_i for slip
            A = np.zeros((2, 2))
            rhs = r.copy()
            for j in range(2):
                if s[j] == 0:
                    A[:, j] = S[:, j]
                else:
                    A[j, j] += 1.0
                    rhs -= np.outer(np.ones(N), S[:, j] * s[j] * m[j])
            try:
                z = np.linalg.solve(A, rhs.T).T
            except np.linalg.LinAlgError:
                continue
            a = np.zeros_like(r)
            viol = np.zeros(N)
            for j in range(2):
                if s[j] == 0:
                    viol = np.maximum(viol, np.abs(z[:, j]) - m[j])
                else:
                    a[:, j] = z[:, j]
                    viol = np.maximum(viol, -s[j] * z[:, j])
            take = viol < best
            best = np.where(take, viol, best)
            out[take] = a[take]
    if np.any(best > tol):
        raise RuntimeError("no consistent stick/slip pattern found")
    return out


class ImpedanceEndpoint(EndpointRelation):
    """Linear, time-nonlocal ``b = d0 a(d0^{-1}) a`` per endpoint.

    ``a(z) = sum_k c_k z^k`` with real coefficients.  On the grid the relation
    acts per spectral bin with symbol ``delta_j a(1/delta_j)``; for
    ``a(z) = alpha z`` this is the static ``b = alpha a``.
    """

    kind = "impedance"
    linear = True

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != 1 or len(self.coeffs) == 0:
            raise ValueError("coeffs must be a non-empty 1-D list")
        self.static = bool(len(self.coeffs) <= 2 and (len(self.coeffs) < 1 or self.coeffs[0] == 0))

    def scalar_symbol(self, delta):
        z = 1.0 / np.asarray(delta)
        az = np.polynomial.polynomial.polyval(z, self.coeffs)
        return np.asarray(delta) * az

    def matrix(self):
        if not self.static:
            raise ValueError("impedance law is not static")
        alpha = self.coeffs[1] if len(self.coeffs) > 1 else 0.0
        return alpha * np.eye(2)

    def symbols(self, grid):
        s = self.scalar_symbol(grid.symbol)
        return s[:, None, None] * np.eye(2)[None, :, :]

    def metric_resolve(self, scale, S, r, grid=None):
        r = np.asarray(r, dtype=complex)
        if self.static:
            return np.linalg.solve(np.eye(2) + scale * S @ self.matrix(), r.T).T
        if grid is None or r.ndim != 2 or r.shape[0] != grid.length:
            raise ValueError("a time-nonlocal relation acts on full signals")
        sp = StateSpace.euclidean(2)
        R = fourier_laplace(Signal(grid, sp, r))
        H = self.symbols(grid)
        M = np.eye(2)[None] + scale * np.einsum("ab,jbc->jac", S, H)
        A = np.linalg.solve(M, R.coeffs[:, :, None])[:, :, 0]
        return inverse_fourier_laplace(SpectralSignal(grid, sp, A)).values

    def to_dict(self):
        return {"kind": self.kind, "params": {"coeffs": self.coeffs.tolist()}}


def endpoint_from_config(cfg):
    """Endpoint relation from ``{"kind": ..., "params": {...}}``."""
    kind = cfg.get("kind")
    p = cfg.get("params", {})
    if kind == "zero":
        return ZeroEndpoint()
    if kind == "dirichlet":
        return DirichletEndpoint()
    if kind == "linear":
        if "K" in p:
            K = np.asarray(p["K"], dtype=float)
            if K.ndim == 3:
                K = K[..., 0] + 1j * K[..., 1]
        else:
            K = float(p.get("beta", 1.0)) * np.eye(2)
        return LinearEndpoint(K)
    if kind == "friction":
        return FrictionEndpoint(p.get("mu", 1.0))
    if kind == "impedance":
        if "coeffs" in p:
            return ImpedanceEndpoint(p["coeffs"])
        return ImpedanceEndpoint([0.0, float(p.get("alpha", 0.0))])
    raise ValueError(f"unknown boundary relation kind {kind!r}")


# the relation h in BD(G) coordinates ------------------------------------------------


class BDRelation(MonotoneRelation):
    """``h`` on ``BD(G)``-valued signals induced by an endpoint relation.

    ``(x, y) in h`` iff ``(Gamma x, b) in scale * g_e`` with ``y = Gamma^H b``,
    where ``Gamma`` holds the traces of the ``BD(G)`` basis.
    """

    kind = "bd_relation"

    def __init__(self, endpoint, bdg, grid, scale=1.0):
        super().__init__(SignalAmbient(grid, StateSpace.euclidean(2)))
        self.endpoint = endpoint
        self.Gamma = bdg.traces
        self.S = self.Gamma @ self.Gamma.conj().T
        self.S = 0.5 * (self.S + self.S.conj().T)
        self.Ginv = np.linalg.inv(self.Gamma)
        self.scale = scale
        self.grid = grid
        self.is_autonomous_claimed = endpoint.autonomous

    def resolve(self, lam, y):
        r = np.asarray(y, dtype=complex) @ self.Gamma.T
        a = self.endpoint.metric_resolve(lam * self.scale, self.S, r, self.grid)
        return a @ self.Ginv.T

    def pair_from_endpoint(self, a, b):
        """BD coordinates ``(x, y)`` of an endpoint pair ``(a, b)``."""
        return np.asarray(a) @ self.Ginv.T, np.asarray(b) @ self.Gamma.conj()

    def to_dict(self):
        return {"kind": self.kind, "endpoint": self.endpoint.to_dict()}


# the operator A -----------------------------------------------------------------------


@dataclass
class _LamData:
    lam: float
    bdg: BDSpace
    bdd: BDSpace
    bullet: BulletMaps
    lu1: tuple
    lu2: tuple
    DV0: np.ndarray
    h: BDRelation


@dataclass
class ResolveReport:
    """Post-condition residuals of one ``resolve_A`` call."""

    lam: float
    residual: float
    boundary_residual: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "lam": self.lam,
            "residual": self.residual,
            "boundary_residual": self.boundary_residual,
            "passed": bool(self.passed),
        }


class BoundaryOperator(MonotoneRelation):
    """``A = [[0, D], [G, 0]]`` with boundary condition ``(pi u, •D pi v) in h``.

    States are signals with values in ``H0 ⊕ H1`` (``u`` on nodes, ``v`` on
    midpoints), stored as arrays of shape ``(N, 2n + 1)``.

    Parameters
    ----------
    pair : SkewPair
    grid : TimeGrid
    endpoint : EndpointRelation
        Boundary relation ``g_e`` in endpoint coordinates; the operator
        ``lam A`` uses ``lam g_e``.
    check : bool
        Verify post-conditions on every resolvent call.
    """

    kind = "boundary_operator"

    def __init__(self, pair, grid, endpoint, check=True, tol=RESOLVE_TOL):
        self.pair = pair
        self.grid = grid
        self.endpoint = endpoint
        self.space = pair.H0.direct_sum(pair.H1)
        super().__init__(SignalAmbient(grid, self.space))
        self.check = check
        self.tol = tol
        self.is_autonomous_claimed = endpoint.autonomous
        self._cache = {}
        self._lock = threading.Lock()
        self.last_report = None
        if endpoint.linear and endpoint.static:
            self._A = self._static_matrix(endpoint.matrix())
            L = np.linalg.cholesky(self.space.metric)
            B = L.conj().T @ self._A @ np.linalg.inv(L.conj().T)
            self.lipschitz = float(np.linalg.norm(B, 2))
        else:
            self._A = None

    # structure --------------------------------------------------------------
    @property
    def n(self):
        return self.pair.n

    def split(self, x):
        x = np.asarray(x)
        return x[..., : self.n + 1], x[..., self.n + 1 :]

    def join(self, u, v):
        return np.concatenate([u, v], axis=-1)

    def _static_matrix(self, K):
        p = self.pair
        n = p.n
        # beta from b = K a with a = (u_0, u_n) and b = (-beta_0, beta_n)
        T = np.zeros((2, n + 1), dtype=complex)
        T[0, 0] = T[1, -1] = 1.0
        flip = np.diag([-1.0, 1.0])
        Bu = flip @ K @ T  # beta as a function of u
        A = np.zeros((2 * n + 1, 2 * n + 1), dtype=complex)
        A[: n + 1, n + 1 :] = p.D0.matrix
        A[: n + 1, : n + 1] = p.E @ Bu
        A[n + 1 :, : n + 1] = p.G.matrix
        return A

    @property
    def matrix(self):
        """Dense matrix of ``A`` when the boundary relation is static and linear."""
        if self._A is None:
            raise ValueError("A is not a linear map for this boundary relation")
        return self._A

    def linear_symbols(self):
        """Per-bin matrices of ``A`` for linear (possibly time-nonlocal) relations."""
        if not self.endpoint.linear:
            raise ValueError("boundary relation is not linear")
        if self._A is not None:
            return np.broadcast_to(self._A, (self.grid.padded_length,) + self._A.shape)
        H = self.endpoint.symbols(self.grid)
        return np.stack([self._static_matrix(Hj) for Hj in H])

    def apply(self, x):
        return np.asarray(x, dtype=complex) @ self.matrix.T

    # per-lambda data --------------------------------------------------------------
    def lam_data(self, lam):
        key = float(lam)
        with self._lock:
            d = self._cache.get(key)
        if d is not None:
            return d
        p = self.pair
        n = p.n
        Gs = lam * p.G.matrix
        D0s = lam * p.D0.matrix
        bdg = bd_basis(p, "G", lam)
        bdd = bd_basis(p, "D", lam)
        bm = bullet_maps(bdg, bdd)
        # (1 - lam D lam G_c)^{-1}: unknowns u on V0 and the flux selection
        M1 = np.zeros((n + 1, n + 1), dtype=complex)
        K = np.eye(n + 1) - D0s @ Gs
        M1[:, : n - 1] = K[:, p.interior]
        M1[:, n - 1 :] = -p.E
        # (1 - lam G_c lam D)^{-1}: lam D restricted to values in V0
        DV0 = D0s.copy()
        DV0[[0, n], :] = 0.0
        M2 = np.eye(n) - Gs @ DV0
        for M in (M1, M2):
            if np.linalg.cond(M) > 1e12:
                raise SingularOperator("elliptic system is singular")
        h = BDRelation(self.endpoint, bdg, self.grid, scale=lam)
        d = _LamData(float(lam), bdg, bdd, bm, sla.lu_factor(M1), sla.lu_factor(M2), DV0, h)
        with self._lock:
            self._cache.setdefault(key, d)
        return d

    # resolvent -------------------------------------------------------------------
    def resolve_A(self, lam, f, g):
        """``(u, v, beta) = (1 + lam A)^{-1}(f, g)``.

        Parameters
        ----------
        f, g : ndarray
            Node and midpoint signals, shapes ``(N, n + 1)`` and ``(N, n)``.

        Returns
        -------
        u, v : ndarray
        dv : ndarray
            The selection of ``D v`` realized by the solution.

        Notes
        -----
        Follows the construction ``u~ = (1 - DG_c)^{-1} f - D(1 - G_cD)^{-1} g``,
        ``v~ = (1 - G_cD)^{-1} g - G_c(1 - DG_c)^{-1} f`` for the pair
        ``(lam G, lam D)``, then ``z = (1 + h_lam)^{-1}(•D pi v~)``,
        ``u = pi* z + u~`` and ``v = v~ - pi* •G z``.  For ``g`` with zero
        flux trace ``•D pi v~ = -•D pi G_c u~`` as in the classical formula.
        """
        if not lam > 0:
            raise ValueError("lam must be positive")
        p = self.pair
        n = p.n
        d = self.lam_data(lam)
        f = np.atleast_2d(np.asarray(f, dtype=complex))
        g = np.atleast_2d(np.asarray(g, dtype=complex))
        Gs = lam * p.G.matrix
        # U1 = (1 - DG_c)^{-1} f with its flux selection
        X = sla.lu_solve(d.lu1, f.T).T
        U1 = np.zeros_like(f)
        U1[:, p.interior] = X[:, : n - 1]
        # w = (1 - G_c D)^{-1} g
        w = sla.lu_solve(d.lu2, g.T).T
        Dw = w @ d.DV0.T
        ut = U1 - Dw
        vt = w - U1 @ Gs.T
        Dvt = f - ut  # selection of lam D v~ consistent with u~ + D v~ = f
        cD = project_bd(d.bdd, np.concatenate([vt, Dvt], axis=1))
        y0 = cD @ d.bullet.D.T
        z = d.h.resolve(1.0, y0)
        Pz = z @ d.bdg.basis.T
        u = Pz + ut
        v = vt - Pz @ Gs.T
        Dv = Dvt - Pz
        if self.check:
            self.last_report = self._postcheck(d, f, g, u, v, Dv)
            if not self.last_report.passed:
                raise PostconditionFailed(
                    f"resolve_A residual {self.last_report.residual:.2e}, "
                    f"boundary {self.last_report.boundary_residual:.2e}",
                    self.last_report,
                )
        return u, v, Dv / lam

    def _postcheck(self, d, f, g, u, v, Dv):
        p = self.pair
        lam = d.lam
        Gs = lam * p.G.matrix
        D0s = lam * p.D0.matrix
        # interior rows of D v are fixed; boundary rows define the selection
        r1 = u + Dv - f
        r1i = (v @ D0s.T - Dv)[:, p.interior]
        r2 = v + u @ Gs.T - g
        num = max(np.abs(r1).max(), np.abs(r1i).max(), np.abs(r2).max())
        den = max(np.abs(f).max(), np.abs(g).max(), 1e-300)
        res = float(num / den)
        # boundary fixed point pi u = (1 + h)^{-1}(•D pi v + pi u)
        x = project_bd(d.bdg, u)
        y = project_bd(d.bdd, np.concatenate([v, Dv], axis=1)) @ d.bullet.D.T
        x2 = d.h.resolve(1.0, x + y)
        scale = max(np.abs(x).max(), np.abs(y).max(), den * 1e-8, 1e-300)
        bres = float(np.abs(x2 - x).max() / scale)
        ok = res <= self.tol and bres <= self.tol
        return ResolveReport(lam, res, bres, ok)

    def resolve(self, lam, y):
        y = np.asarray(y, dtype=complex)
        f, g = self.split(y)
        u, v, _ = self.resolve_A(lam, f, g)
        return self.join(u, v).reshape(y.shape)

    def selection(self, lam, y):
        """Resolvent together with the realized value of ``A`` at it."""
        y = np.asarray(y, dtype=complex)
        f, g = self.split(y)
        u, v, dv = self.resolve_A(lam, f, g)
        return self.join(u, v), self.join(dv, u @ self.pair.G.matrix.T)

    def endpoint_pair(self, u, v, dv):
        """Trace ``a`` and outward flux ``b`` of a state with ``D`` selection ``dv``."""
        a = np.asarray(u)[..., [0, -1]]
        beta = self.pair.flux_of(v, dv)
        return a, self.pair.outward(beta)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "length": self.pair.length,
                "boundary": self.endpoint.to_dict()}


# Green identity check ---------------------------------------------------------------


@dataclass
class IdentityReport:
    passed: bool
    worst: float
    per_cutoff: dict
    samples: int
    seed: int

    def to_dict(self):
        return {"name": "boundary_pairing_identity", "passed": bool(self.passed),
                "worst": self.worst, "per_cutoff": self.per_cutoff,
                "samples": self.samples, "seed": self.seed}


def pairing_identity_check(Aop, n_samples=100, seed=0, lam=1.0, cutoffs=None, tol=1e-6):
    """Compare the interior pairing with the boundary pairing on sampled pairs.

    Pairs ``(u, v)``, ``(x, y)`` in the domain are produced by ``resolve_A``
    from random data.  The left side is
    ``Re sum_{k<=a} w_k <A(u,v) - A(x,y) | (u,v) - (x,y)>`` with ``A``
    evaluated through ``G`` and the realized ``D`` selection; the right side
    is ``Re sum_{k<=a} w_k <pi(u - x) | •D pi(v - y)>`` in ``BD(G)``
    coordinates of the unscaled pair.
    """
    rng = np.random.default_rng(seed)
    grid = Aop.grid
    N = grid.length
    n = Aop.n
    cut = cutoffs or [N // 4, N // 2, 3 * N // 4, N]
    d1 = Aop.lam_data(1.0)
    w = grid.weights
    worst = 0.0
    per = {int(a): 0.0 for a in cut}

    def sample():
        f = rng.standard_normal((N, n + 1)) + 1j * rng.standard_normal((N, n + 1))
        g = rng.standard_normal((N, n)) + 1j * rng.standard_normal((N, n))
        if Aop.endpoint.kind == "friction":
            f, g = f.real + 0j, g.real + 0j
        return Aop.resolve_A(lam, f, g)

    for _ in range(n_samples):
        u, v, dv = sample()
        x, y, dy = sample()
        du, dvv, ddv = u - x, v - y, dv - dy
        Au = Aop.pair.H0.inner(ddv, du)
        Av = Aop.pair.H1.inner(du @ Aop.pair.G.matrix.T, dvv)
        left_pt = (Au + Av).real
        cx = project_bd(d1.bdg, du)
        cy = project_bd(d1.bdd, np.concatenate([dvv, ddv], axis=1)) @ d1.bullet.D.T
        right_pt = np.sum(cx.conj() * cy, axis=1).real
        size = (Aop.pair.H0.norm(ddv) + Aop.pair.H1.norm(du @ Aop.pair.G.matrix.T)) * (
            Aop.pair.H0.norm(du) + Aop.pair.H1.norm(dvv)
        )
        for a in cut:
            L = float(np.sum(w[:a] * left_pt[:a]))
            R = float(np.sum(w[:a] * right_pt[:a]))
            scale = float(np.sum(w[:a] * size[:a])) + 1e-300
            rel = abs(L - R) / scale
            per[int(a)] = max(per[int(a)], rel)
            worst = max(worst, rel)
    return IdentityReport(worst <= tol, worst, per, n_samples, seed)


def boundary_from_config(cfg, grid):
    """``BoundaryOperator`` from ``{"n", "L", "boundary": {...}}``."""
    pair = build_1d_pair(int(cfg.get("n", 32)), float(cfg.get("L", 1.0)))
    return BoundaryOperator(pair, grid, endpoint_from_config(cfg.get("boundary", {"kind": "zero"})))
