"""Maximal monotone relations defined through their resolvents.

A relation ``A`` is given by the map ``(lam, y) -> J_lam(y) = (1 + lam A)^{-1} y``.
Elements of the ambient space are numpy arrays: vectors of shape ``(dim,)``
for static relations and arrays of shape ``(N, dim)`` for relations on
signal spaces.  Yosida approximations, sampled graph pairs, minimal sections
and the hypothesis checkers are all built on top of ``resolve``.
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import FixedPointResult, anderson_root
from .linalg import LinOp, StateSpace, adjoint


class MissingZeroPair(ValueError):
    """Raised when a relation lacks the pair ``(0, 0)``."""


class UnboundedSection(ValueError):
    """Raised when Yosida values blow up, i.e. ``x`` is outside the domain."""


class NoConvergence(RuntimeError):
    """Raised when an iteration exhausts its budget."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics


# ambient spaces ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorAmbient:
    """A :class:`StateSpace` viewed as the ambient space of a static relation."""

    space: StateSpace

    @property
    def shape(self):
        return (self.space.dim,)

    def inner(self, x, y):
        return complex(self.space.inner(x, y))

    def norm(self, x):
        return float(np.sqrt(max(self.inner(x, x).real, 0.0)))

    def random(self, rng, scale=1.0, real=False):
        z = rng.standard_normal(self.shape)
        if not real:
            z = z + 1j * rng.standard_normal(self.shape)
        return scale * z


@dataclass(frozen=True, eq=False)
class SignalAmbient:
    """Weighted signal space ``H_nu`` over a grid with node state space."""

    grid: object
    space: StateSpace

    @property
    def shape(self):
        return (self.grid.length, self.space.dim)

    def pointwise(self, x, y):
        return self.space.inner(x, y)

    def inner(self, x, y, upto=None):
        p = self.pointwise(x, y)
        w = self.grid.weights
        if upto is not None:
            p, w = p[:upto], w[:upto]
        return complex(np.sum(w * p))

    def norm(self, x, upto=None):
        return float(np.sqrt(max(self.inner(x, x, upto).real, 0.0)))

    def random(self, rng, scale=1.0, real=False):
        z = rng.standard_normal(self.shape)
        if not real:
            z = z + 1j * rng.standard_normal(self.shape)
        return scale * z


# relations ---------------------------------------------------------------------


class MonotoneRelation:
    """Base class: a relation exposed through its resolvent.

    Attributes
    ----------
    ambient : VectorAmbient or SignalAmbient
    contains_zero_pair : bool
    is_autonomous_claimed : bool
    lipschitz : float or None
        Lipschitz constant when the relation is a single-valued map with full
        domain; such relations also implement :meth:`apply`.
    kind : str
    """

    kind = "abstract"
    contains_zero_pair = True
    is_autonomous_claimed = False
    lipschitz = None
    real_only = False

    def __init__(self, ambient):
        self.ambient = ambient

    def resolve(self, lam, y):
        raise NotImplementedError

    def yosida(self, lam, y):
        """``(y - J_lam y)/lam``; subclasses may override with a cancellation-free form."""
        y = np.asarray(y, dtype=complex)
        return (y - self.resolve(lam, y)) / lam

    exact_yosida = False

    def apply(self, x):
        raise NotImplementedError(f"{self.kind} is not a single-valued map")

    def to_dict(self):
        return {"kind": self.kind}


class ZeroRelation(MonotoneRelation):
    """``A = 0``; the resolvent is the identity."""

    kind = "zero"
    lipschitz = 0.0

    def __init__(self, ambient):
        super().__init__(ambient)
        self.is_autonomous_claimed = isinstance(ambient, SignalAmbient)

    def resolve(self, lam, y):
        return np.array(y, dtype=complex)

    def apply(self, x):
        return np.zeros_like(np.asarray(x, dtype=complex))

    exact_yosida = True

    def yosida(self, lam, y):
        return np.zeros_like(np.asarray(y, dtype=complex))


class LinearRelation(MonotoneRelation):
    """Single-valued linear map ``x -> T x`` with ``Re T >= 0`` in the metric."""

    kind = "linear"

    def __init__(self, space, matrix):
        super().__init__(VectorAmbient(space))
        self.op = LinOp(space, space, matrix)
        W = space.metric
        S = W @ self.op.matrix
        S = 0.5 * (S + S.conj().T)
        import scipy.linalg as sla

        if sla.eigh(S, W, eigvals_only=True)[0] < -1e-12 * max(1.0, np.abs(S).max()):
            raise ValueError("linear relation is not monotone")
        self.lipschitz = float(np.linalg.norm(self.op.matrix, 2) * np.sqrt(np.linalg.cond(W)))
        self._inv = {}

    def resolve(self, lam, y):
        key = float(lam)
        if key not in self._inv:
            d = self.op.domain.dim
            self._inv[key] = np.linalg.inv(np.eye(d) + lam * self.op.matrix)
        return np.asarray(y, dtype=complex) @ self._inv[key].T

    exact_yosida = True

    def yosida(self, lam, y):
        # T (1 + lam T)^{-1} y
        return self.op(self.resolve(lam, y))

    def apply(self, x):
        return self.op(x)

    def to_dict(self):
        m = self.op.matrix
        return {"kind": self.kind, "matrix": [[[z.real, z.imag] for z in row] for row in m]}


def identity_map(space, scale=1.0):
    return LinearRelation(space, scale * np.eye(space.dim))


def _metric_diag(space):
    if not space.diagonal:
        raise ValueError("componentwise relations need a diagonal metric")
    return np.real(np.diag(space.metric))


class AbsSubdiff(MonotoneRelation):
    """Subdifferential of ``phi(x) = sum_i mu_i |x_i|`` (metric-aware).

    For complex entries ``|.|`` is the modulus and the resolvent is the
    modulus soft-threshold with thresholds ``lam * mu_i / w_i``.
    """

    kind = "abs_subdiff"

    def __init__(self, space, mu):
        super().__init__(VectorAmbient(space))
        self.w = _metric_diag(space)
        self.mu = np.broadcast_to(np.asarray(mu, dtype=float), (space.dim,)).copy()
        if np.any(self.mu < 0):
            raise ValueError("mu must be non-negative")

    def resolve(self, lam, y):
        y = np.asarray(y, dtype=complex)
        return soft_threshold(y, lam * self.mu / self.w)

    exact_yosida = True

    def yosida(self, lam, y):
        # projection of y/lam onto the discs of radius mu_i / w_i
        y = np.asarray(y, dtype=complex) / lam
        r = self.mu / self.w
        a = np.abs(y)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            s = np.where(a > r, r / np.where(a > 0, a, 1.0), 1.0)
        return s * y

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu.tolist()}


def soft_threshold(y, t):
    a = np.abs(y)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.where(a > t, 1.0 - t / np.where(a > 0, a, 1.0), 0.0)
    return s * y


class ClampNormalCone(MonotoneRelation):
    """Normal cone of the box ``lo <= Re x_i, Im x_i <= hi``.

    The resolvent is the projection onto the box for every ``lam``.
    """

    kind = "clamp_normal_cone"

    def __init__(self, space, lo, hi):
        super().__init__(VectorAmbient(space))
        _metric_diag(space)
        self.lo = np.broadcast_to(np.asarray(lo, dtype=float), (space.dim,)).copy()
        self.hi = np.broadcast_to(np.asarray(hi, dtype=float), (space.dim,)).copy()
        if np.any(self.lo > self.hi):
            raise ValueError("empty box")
        self.contains_zero_pair = bool(np.all(self.lo <= 0) and np.all(self.hi >= 0))

    def resolve(self, lam, y):
        y = np.asarray(y, dtype=complex)
        return np.clip(y.real, self.lo, self.hi) + 1j * np.clip(y.imag, self.lo, self.hi)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class PointwiseLift(MonotoneRelation):
    """Canonical extension of a static relation to signals, node by node."""

    kind = "pointwise_lift"

    def __init__(self, base, grid):
        if not base.contains_zero_pair:
            raise MissingZeroPair(f"{base.kind} does not contain (0, 0)")
        super().__init__(SignalAmbient(grid, base.ambient.space))
        self.base = base
        self.is_autonomous_claimed = True
        self.lipschitz = base.lipschitz

    def resolve(self, lam, y):
        return self.base.resolve(lam, np.asarray(y, dtype=complex))

    @property
    def exact_yosida(self):
        return self.base.exact_yosida

    def yosida(self, lam, y):
        return self.base.yosida(lam, np.asarray(y, dtype=complex))

    def apply(self, x):
        return self.base.apply(np.asarray(x, dtype=complex))

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict()}


def lift_pointwise(B, grid):
    """Lift a static relation to the signal space on ``grid``.

    Raises
    ------
    MissingZeroPair
        If ``(0, 0)`` is not in ``B``.
    """
    return PointwiseLift(B, grid)


class SpectralLinearRelation(MonotoneRelation):
    """Linear time-invariant relation on signals given by per-bin symbols.

    ``symbols`` has shape ``(M, d, d)`` on the padded window of ``grid``;
    the resolvent is the per-bin solve ``(I + lam H_j)^{-1}``.
    """

    kind = "spectral_linear"

    def __init__(self, grid, space, symbols):
        super().__init__(SignalAmbient(grid, space))
        self.symbols = np.asarray(symbols, dtype=complex)
        self.is_autonomous_claimed = True
        self.lipschitz = float(np.abs(np.linalg.norm(self.symbols, 2, axis=(1, 2))).max())
        self._inv = {}

    def _spectral(self, mats, y):
        from .timegrid import Signal, fourier_laplace, inverse_fourier_laplace, SpectralSignal

        u = Signal(self.ambient.grid, self.ambient.space, y)
        U = fourier_laplace(u)
        V = np.einsum("jab,jb->ja", mats, U.coeffs)
        return inverse_fourier_laplace(SpectralSignal(u.grid, u.space, V)).values

    def resolve(self, lam, y):
        key = float(lam)
        if key not in self._inv:
            d = self.symbols.shape[1]
            self._inv[key] = np.linalg.inv(np.eye(d) + lam * self.symbols)
        return self._spectral(self._inv[key], y)

    def apply(self, x):
        return self._spectral(self.symbols, x)


# Yosida, pairs, minimal section -------------------------------------------------


def yosida(R, lam, y):
    """``A_lam(y) = (y - J_lam(y)) / lam``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    return R.yosida(lam, y)


@dataclass(frozen=True)
class RelationPair:
    """A graph element ``(x, y)`` of a relation."""

    x: np.ndarray
    y: np.ndarray


def sample_pair(R, lam, z):
    """Graph element ``(J_lam z, A_lam z)``."""
    z = np.asarray(z, dtype=complex)
    x = R.resolve(lam, z)
    return RelationPair(x, (z - x) / lam)


def default_lambda_seq(lam0=1.0, gamma=0.5, levels=40):
    return [lam0 * gamma**k for k in range(levels)]


def minimal_section(R, x, lam_seq=None, bound=1e6):
    """Minimal-norm element ``A^0(x)`` approximated by ``A_lam(x)`` at the smallest ``lam``.

    Returns
    -------
    value : ndarray
    monotone_flag : bool
        ``True`` when ``|A_lam x|`` was non-decreasing along the sequence.

    Raises
    ------
    UnboundedSection
        If ``|A_lam x|`` exceeds ``bound``.
    """
    lam_seq = sorted(lam_seq or default_lambda_seq(), reverse=True)
    prev = -np.inf
    ok = True
    val = None
    scale = 1.0 + R.ambient.norm(np.asarray(x, dtype=complex))
    for lam in lam_seq:
        val = yosida(R, lam, x)
        n = R.ambient.norm(val)
        if n > bound * scale:
            raise UnboundedSection(f"|A_lam(x)| = {n:.3e} at lam = {lam:.3e}")
        if n < prev - 1e-9 * max(1.0, prev):
            ok = False
        prev = n
    return val, ok


# checks ------------------------------------------------------------------------


@dataclass
class CheckReport:
    """Outcome of a sampled hypothesis check."""

    name: str
    passed: bool
    worst: float
    threshold: float
    samples: int
    seed: int
    witness: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst": float(self.worst),
            "threshold": float(self.threshold),
            "samples": int(self.samples),
            "seed": int(self.seed),
            "witness": self.witness,
            "details": self.details,
        }


def _random_input(R, rng, scale):
    return R.ambient.random(rng, scale, real=R.real_only)


# pairings below this fraction of |dx + lam dy|^2 are roundoff: y is formed
# as a difference quotient of resolvent values
PAIRING_FLOOR = 1e-6


def _pair_scale(amb, dx, dy, lam):
    nx, ny = amb.norm(dx), amb.norm(dy)
    return nx * ny + PAIRING_FLOOR * (nx + lam * ny) ** 2


def check_monotone(R, lam=1.0, n=200, seed=0, scales=(0.1, 1.0, 10.0), tol=1e-9):
    """Sampled ``min Re<u - x|v - y>`` over pairs of graph elements."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    wit = {}
    for i in range(n):
        s = scales[i % len(scales)]
        p = sample_pair(R, lam, _random_input(R, rng, s))
        q = sample_pair(R, lam, _random_input(R, rng, s))
        dx, dy = p.x - q.x, p.y - q.y
        val = R.ambient.inner(dx, dy).real
        ref = _pair_scale(R.ambient, dx, dy, lam)
        rel = val / ref if ref > 0 else 0.0
        if rel < worst:
            worst = rel
            wit = {"sample": i, "pairing": val, "scale": ref}
    return CheckReport("monotone", worst >= -tol, worst, -tol, n, seed, wit)


def check_autonomous(R, shifts=(-1, -5, -17), n=20, seed=0, lam=1.0, tol=1e-8):
    """Compare ``J(shift(z, j))`` with ``shift(J(z), j)`` on interior nodes.

    For advances (``j > 0``) the sampled ``z`` vanishes on its first ``j``
    nodes so that no data is truncated.
    """
    from .timegrid import Signal, shift

    amb = R.ambient
    if not isinstance(amb, SignalAmbient):
        raise TypeError("autonomy is checked on signal-space relations")
    rng = np.random.default_rng(seed)
    worst = 0.0
    wit = {}
    for i in range(n):
        z = _random_input(R, rng, 1.0)
        for j in shifts:
            zz = z.copy()
            if j > 0:
                zz[:j] = 0
            sz = Signal(amb.grid, amb.space, zz)
            a = R.resolve(lam, shift(sz, j).values)
            b = shift(Signal(amb.grid, amb.space, R.resolve(lam, zz)), j).values
            N = amb.grid.length
            lo, hi = (-j, N) if j < 0 else (0, N - j)
            err = np.abs(a[lo:hi] - b[lo:hi]).max() / max(np.abs(zz).max(), 1e-300)
            if err > worst:
                worst = err
                wit = {"sample": i, "shift": int(j), "max_abs_diff": float(err)}
    return CheckReport("autonomous", worst <= tol, worst, tol, n, seed, wit, {"shifts": list(shifts)})


def check_H3(R, a_index=None, n=100, seed=0, lam=1.0, tol=1e-7, scales=(0.1, 1.0, 10.0)):
    """Sampled causal positivity ``sum_{k<=a} w_k Re<u_k - x_k|v_k - y_k> >= 0``."""
    amb = R.ambient
    if not isinstance(amb, SignalAmbient):
        raise TypeError("H3 is checked on signal-space relations")
    N = amb.grid.length
    cut = [a_index] if a_index is not None else [N // 4, N // 2, 3 * N // 4]
    rng = np.random.default_rng(seed)
    worst = np.inf
    wit = {}
    for i in range(n):
        s = scales[i % len(scales)]
        p = sample_pair(R, lam, _random_input(R, rng, s))
        q = sample_pair(R, lam, _random_input(R, rng, s))
        dx, dy = p.x - q.x, p.y - q.y
        ref = _pair_scale(amb, dx, dy, lam)
        for a in cut:
            val = amb.inner(dx, dy, upto=a).real
            rel = val / ref if ref > 0 else 0.0
            if rel < worst:
                worst = rel
                wit = {"sample": i, "a_index": int(a), "pairing": val, "scale": ref}
    return CheckReport("H3", worst >= -tol, worst, -tol, n, seed, wit, {"a_index": cut})


def check_nonexpansive(R, lam=1.0, n=1000, seed=0, scales=(0.1, 1.0, 10.0)):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n):
        s = scales[i % len(scales)]
        y1 = _random_input(R, rng, s)
        y2 = _random_input(R, rng, s)
        d = R.ambient.norm(y1 - y2)
        r = R.ambient.norm(R.resolve(lam, y1) - R.resolve(lam, y2)) / d
        worst = max(worst, r)
    return CheckReport("nonexpansive", worst <= 1 + 1e-9, worst, 1 + 1e-9, n, seed)


# sandwich ------------------------------------------------------------------------


def operator_norm(S, iters=200, seed=0):
    """``||S||`` in the metric norms by power iteration on ``S* S``."""
    Ss = adjoint(S)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(S.domain.dim) + 0j
    nrm = S.domain.norm(x)
    if nrm == 0:
        return 0.0
    x /= nrm
    val = 0.0
    for _ in range(iters):
        y = Ss(S(x))
        ny = S.domain.norm(y)
        if ny == 0:
            return 0.0
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - val) <= 1e-14 * new:
            val = new
            break
        val = new
    return float(val)


@dataclass
class SandwichPath:
    lams: list
    xs: list
    deltas: list
    inner_iterations: list
    converged: bool
    tol: float = 0.0


class Sandwich(MonotoneRelation):
    """``S T S*`` for bounded ``T`` with full domain and ``(0, 0) in T``.

    The resolvent ``x = J_mu(y)`` is computed along decreasing ``lam`` by
    solving ``x + mu S T_lam(S* x) = y`` with a damped (and Anderson-mixed)
    fixed-point iteration, stopping once consecutive levels differ by at
    most ``tol``.
    """

    kind = "sandwich"

    def __init__(self, S, T, lam_seq=None, tol=1e-8, inner_tol=None, inner_maxiter=5000):
        if not T.contains_zero_pair:
            raise MissingZeroPair("sandwich needs (0, 0) in T")
        super().__init__(VectorAmbient(S.codomain))
        self.S = S
        self.Sstar = adjoint(S)
        self.T = T
        self.lam_seq = sorted(lam_seq or default_lambda_seq(), reverse=True)
        self.tol = tol
        self.inner_tol = inner_tol if inner_tol is not None else 1e-3 * tol
        self.inner_maxiter = inner_maxiter
        self.Snorm = operator_norm(S)
        self.is_autonomous_claimed = False
        self.last_path = None

    def _level(self, mu, lam, y, x0):
        S, Ss, T = self.S, self.Sstar, self.T
        amb = self.ambient
        # both steps contract: T_lam is lam-cocoercive, and for Lipschitz T
        # the map x + mu S T_lam S* x is monotone plus (1 + mu |S|^2 Lip T)-Lipschitz
        omega = 0.9 * lam / (mu * self.Snorm**2 + 1e-300)
        if T.lipschitz is not None:
            omega = max(omega, 1.0 / (1.0 + mu * self.Snorm**2 * T.lipschitz) ** 2)
        omega = min(1.0, omega)

        def F(x):
            return x + mu * S(yosida(T, lam, Ss(x))) - y

        # attainable residual: roundoff in S* x is amplified by the Lipschitz
        # constant of T_lam, which is at most 1/lam (or that of T itself)
        lip_t = 1.0 / lam if T.lipschitz is None else min(1.0 / lam, T.lipschitz)
        scale = 1 + amb.norm(y)
        floor = 10 * np.finfo(float).eps * (1 + mu * self.Snorm**2 * lip_t) * (scale + amb.norm(x0))
        tol = max(self.inner_tol * scale, floor)
        budget = min(self.inner_maxiter, 1000)
        res = anderson_root(F, x0, omega, amb.norm, tol, budget,
                            memory=min(20, 2 * amb.space.dim + 1))
        if not res.converged:
            # mixing stalls when omega is tiny and the active set moves; fall back
            # to forward-backward on the dual variable p = J_lam(S* x)
            dual = self._dual_level(mu, lam, y, F, tol)
            dual.iterations += res.iterations
            if dual.converged or dual.residual < res.residual:
                res = dual
        return res

    def _dual_level(self, mu, lam, y, F, tol):
        """Solve ``p + (lam + mu S* S) T p ∋ S* y`` and map back to ``x``.

        With ``w = (lam + mu S* S)^{-1}(S* y - p) ∈ T p`` one has
        ``S* x = p + lam w`` and ``x = y - mu S w``.  The forward-backward
        map ``p -> J_g(p - g P^{-1}(p - z))`` contracts at a rate set by the
        condition number of ``P = lam + mu S* S`` rather than by ``1/lam``.
        """
        S, Ss, T = self.S, self.Sstar, self.T
        tspace = T.ambient.space
        d = tspace.dim
        P = lam * np.eye(d) + mu * (Ss.matrix @ S.matrix)
        Pinv = np.linalg.inv(P)
        L = float(np.linalg.norm(Pinv, 2)) * np.sqrt(np.linalg.cond(tspace.metric))
        g = 1.0 / L
        z = Ss(y)
        tnorm = lambda v: float(tspace.norm(v))

        def xof(p):
            return y - mu * S(Pinv @ (z - p))

        def R(p):
            return p - T.resolve(g, p - g * (Pinv @ (p - z)))

        p0 = T.resolve(lam, Ss(y))
        out = anderson_root(R, p0, 1.0, tnorm, tol, self.inner_maxiter,
                            memory=min(20, 2 * d + 1),
                            stop=lambda p, r: self.ambient.norm(F(xof(p))))
        x = xof(out.x)
        r = self.ambient.norm(F(x))
        return FixedPointResult(x, out.iterations, r, r <= tol, out.history)

    def resolve_path(self, mu, y):
        y = np.asarray(y, dtype=complex)
        if self.Snorm == 0:
            return y.copy(), SandwichPath([], [y], [], [], True)
        x = y.copy()
        lams, xs, deltas, its = [], [], [], []
        converged = False
        for lam in self.lam_seq:
            if len(xs) >= 2:
                # x_lam is close to affine in lam: extrapolate the warm start
                l1, l2 = lams[-1], lams[-2]
                x = xs[-1] + (xs[-1] - xs[-2]) * (lam - l1) / (l1 - l2)
            res = self._level(mu, lam, y, x)
            if not res.converged:
                raise NoConvergence(
                    f"sandwich inner iteration failed at lam={lam:.3e}",
                    {"last_delta": deltas[-1] if deltas else None},
                )
            if xs:
                deltas.append(self.ambient.norm(res.x - xs[-1]))
            lams.append(lam)
            xs.append(res.x)
            its.append(res.iterations)
            x = res.x
            if deltas and deltas[-1] <= self.tol:
                converged = True
                break
        path = SandwichPath(lams, xs, deltas, its, converged, self.tol)
        self.last_path = path
        if not converged:
            raise NoConvergence(
                f"sandwich lambda path did not settle; last delta {deltas[-1]:.3e}",
                {"last_delta": deltas[-1]},
            )
        return x, path

    def resolve(self, mu, y):
        return self.resolve_path(mu, y)[0]

    def to_dict(self):
        return {"kind": self.kind, "T": self.T.to_dict(), "tol": self.tol}


def sandwich(S, T, lam_seq=None, tol=1e-8):
    """The relation ``S T S*`` exposed through its resolvent."""
    return Sandwich(S, T, lam_seq, tol)


def cauchy_fit(path):
    """Fit ``|x_lam - x_lam'|^2 <= C (lam + lam')`` along a sandwich path.

    Returns the smallest admissible ``C`` on the path, the log-log slope of
    ``|x_lam - x_lam'|^2`` against ``lam + lam'`` and the ``R^2`` of that
    regression.  The regression uses only steps above the path's stopping
    tolerance: smaller steps certify convergence (often exact, once the
    active set of a nonsmooth ``T`` settles) and carry no rate information.
    With fewer than three such steps ``slope`` and ``r2`` are ``nan``.
    The fit is a heuristic diagnostic, not a rate certificate.
    """
    s = np.array([path.lams[i] + path.lams[i + 1] for i in range(len(path.deltas))])
    d2 = np.array(path.deltas) ** 2
    C = float(np.max(d2 / s)) if len(s) else 0.0
    keep = np.array(path.deltas) > max(path.tol, 1e-150)
    if keep.sum() < 3:
        return {"C": C, "slope": float("nan"), "r2": float("nan"), "points": int(keep.sum())}
    X, Y = np.log(s[keep]), np.log(d2[keep])
    A = np.vstack([np.ones_like(X), X]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    pred = A @ coef
    ss_res = np.sum((Y - pred) ** 2)
    ss_tot = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"C": C, "slope": float(coef[1]), "r2": float(r2), "points": int(keep.sum())}


# configuration -------------------------------------------------------------------


def relation_from_config(cfg, space, grid=None):
    """Build a built-in relation from ``{"kind": ..., ...}``."""
    kind = cfg.get("kind")
    if kind == "zero":
        rel = ZeroRelation(VectorAmbient(space))
    elif kind == "linear":
        m = np.asarray(cfg.get("matrix", np.eye(space.dim) * cfg.get("scale", 1.0)), dtype=complex)
        rel = LinearRelation(space, m)
    elif kind == "abs_subdiff":
        rel = AbsSubdiff(space, cfg.get("mu", 1.0))
    elif kind == "clamp_normal_cone":
        rel = ClampNormalCone(space, cfg.get("lo", -1.0), cfg.get("hi", 1.0))
    elif kind == "pointwise_lift":
        if grid is None:
            raise ValueError("pointwise_lift needs a grid")
        return lift_pointwise(relation_from_config(cfg["base"], space), grid)
    elif kind == "sandwich":
        S = np.asarray(cfg["S"], dtype=complex)
        inner_space = StateSpace.euclidean(S.shape[1])
        T = relation_from_config(cfg["T"], inner_space)
        rel = sandwich(LinOp(inner_space, space, S), T, tol=cfg.get("tol", 1e-8))
    else:
        raise ValueError(f"unknown relation kind {kind!r}")
    return rel
