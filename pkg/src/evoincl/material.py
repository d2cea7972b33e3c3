"""Operator-valued material laws ``z -> M(z)`` as expression trees.

A law is evaluated at the discrete symbol points ``z_j = 1/delta_j`` of a
:class:`~evoincl.timegrid.TimeGrid` to apply ``M(d0^{-1})`` and
``d0 M(d0^{-1})`` to signals.  Trees whose constants are all diagonal are
evaluated entrywise, which keeps block-diagonal laws cheap.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .linalg import COND_LIMIT, LinOp, SingularOperator, StateSpace, batch_hermitian_min_eig
from .timegrid import fourier_laplace, inverse_fourier_laplace, SpectralSignal


class ZeroArgument(ValueError):
    """Raised when a material law is evaluated at ``z = 0``."""


class NotPositive(ValueError):
    """Raised when the positivity constant of a law is not positive."""


# expression nodes -----------------------------------------------------------


class Node:
    def diagonal(self):
        raise NotImplementedError

    def evaluate(self, z, d, diag):
        raise NotImplementedError

    def to_config(self, names):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Const(Node):
    matrix: np.ndarray
    name: str = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def diagonal(self):
        m = self.matrix
        return np.array_equal(m, np.diag(np.diag(m)))

    def evaluate(self, z, d, diag):
        if diag:
            return np.broadcast_to(np.diag(self.matrix), (len(z), d))
        return np.broadcast_to(self.matrix, (len(z), d, d))

    def to_config(self, names):
        if self.name is None:
            raise ValueError("unnamed constant cannot be serialized")
        names[self.name] = self.matrix
        return {"const": self.name}


@dataclass(frozen=True, eq=False)
class ZMul(Node):
    child: Node

    def diagonal(self):
        return self.child.diagonal()

    def evaluate(self, z, d, diag):
        v = self.child.evaluate(z, d, diag)
        return z.reshape((-1,) + (1,) * (v.ndim - 1)) * v

    def to_config(self, names):
        return {"zmul": self.child.to_config(names)}


@dataclass(frozen=True, eq=False)
class Sum(Node):
    children: tuple

    def diagonal(self):
        return all(c.diagonal() for c in self.children)

    def evaluate(self, z, d, diag):
        out = None
        for c in self.children:
            v = c.evaluate(z, d, diag)
            out = v.copy() if out is None else out + v
        return out

    def to_config(self, names):
        return {"sum": [c.to_config(names) for c in self.children]}


@dataclass(frozen=True, eq=False)
class Product(Node):
    children: tuple

    def diagonal(self):
        return all(c.diagonal() for c in self.children)

    def evaluate(self, z, d, diag):
        out = None
        for c in self.children:
            v = c.evaluate(z, d, diag)
            if out is None:
                out = v.copy()
            else:
                out = out * v if diag else out @ v
        return out

    def to_config(self, names):
        return {"product": [c.to_config(names) for c in self.children]}


@dataclass(frozen=True, eq=False)
class Inverse(Node):
    child: Node

    def diagonal(self):
        return self.child.diagonal()

    def evaluate(self, z, d, diag):
        v = self.child.evaluate(z, d, diag)
        if diag:
            a = np.abs(v)
            if np.any(a.min(axis=-1) * COND_LIMIT < a.max(axis=-1)) or np.any(a.max(axis=-1) == 0):
                raise SingularOperator("inverse node is singular at some z")
            return 1.0 / v
        if np.any(np.linalg.cond(v) > COND_LIMIT):
            raise SingularOperator("inverse node is singular at some z")
        return np.linalg.inv(v)

    def to_config(self, names):
        return {"inverse": self.child.to_config(names)}


def const(matrix, name=None):
    return Const(matrix, name)


def zmul(node):
    return ZMul(node)


def add(*nodes):
    return Sum(tuple(nodes))


def mul(*nodes):
    return Product(tuple(nodes))


def inv(node):
    return Inverse(node)


# material law ----------------------------------------------------------------


@dataclass(frozen=True)
class H1Report:
    """Sampled positivity constant of ``Re z^{-1} M(z)``.

    ``c_hat`` is the minimum over the continuum disk samples, ``symbol_c_hat``
    the minimum over the solver's symbol points (``nan`` without a grid).
    """

    c_hat: float
    argmin_z: complex
    samples: int
    symbol_c_hat: float
    n_boundary: int
    n_interior: int
    nu: float

    @property
    def passed(self):
        return self.c_hat > 0 and not (self.symbol_c_hat <= 0)

    def to_dict(self):
        return {
            "c_hat": self.c_hat,
            "argmin_z": [self.argmin_z.real, self.argmin_z.imag],
            "samples": self.samples,
            "symbol_c_hat": self.symbol_c_hat,
            "n_boundary": self.n_boundary,
            "n_interior": self.n_interior,
            "nu": self.nu,
            "passed": self.passed,
            "note": "sampled lower bound; no certification between samples",
        }


@dataclass(frozen=True, eq=False)
class MaterialLaw:
    """Analytic operator-valued function ``z -> M(z)`` on a state space.

    Parameters
    ----------
    space : StateSpace
    expr : Node
        Expression tree over the formal variable ``z``.
    nu_min : float
        Smallest admissible weight ``nu``.
    """

    space: StateSpace
    expr: Node
    nu_min: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: object = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def is_diagonal(self):
        return self.space.diagonal and self.expr.diagonal()

    def eval_batch(self, zs):
        """Evaluate at many points; returns ``(K, d)`` if diagonal else ``(K, d, d)``."""
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        if np.any(zs == 0):
            raise ZeroArgument("material law evaluated at z = 0")
        d = self.space.dim
        return np.asarray(self.expr.evaluate(zs, d, self.is_diagonal))

    def eval_full(self, zs):
        v = self.eval_batch(zs)
        if self.is_diagonal:
            out = np.zeros(v.shape + (v.shape[-1],), dtype=complex)
            idx = np.arange(v.shape[-1])
            out[:, idx, idx] = v
            return out
        return v

    def _cached(self, key, build):
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        val = build()
        with self._lock:
            self._cache.setdefault(key, val)
            return self._cache[key]

    def symbols(self, grid):
        return self._cached(("M", grid), lambda: self.eval_batch(grid.symbol_points))

    def symbol_c_hat(self, grid):
        def build():
            z = grid.symbol_points
            return float(_min_re_law(self, z)[0])

        return self._cached(("c", grid), build)

    def validate(self, nu, n=20, seed=0):
        """Evaluate at ``n`` random disk points; raises on singularity."""
        if nu < self.nu_min:
            raise ValueError(f"nu={nu} below nu_min={self.nu_min}")
        rng = np.random.default_rng(seed)
        r = 0.5 / nu
        z = r + r * np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
        z[z == 0] = r
        self.eval_batch(z)


def identity_law(space):
    return MaterialLaw(space, const(np.eye(space.dim), "I"))


def power_series_law(space, coeffs, order=None, center=0.0, nu_min=0.0):
    """Truncated series ``sum_{k<=K} a_k (z - r)^k`` as an expression tree."""
    coeffs = list(coeffs)
    if order is not None:
        coeffs = coeffs[: order + 1]
    d = space.dim
    mats = [np.eye(d) * c if np.isscalar(c) else np.asarray(c) for c in coeffs]
    node = const(mats[-1], f"a{len(mats) - 1}")
    for k in range(len(mats) - 2, -1, -1):
        shifted = zmul(node) if center == 0 else add(zmul(node), mul(const(-center * np.eye(d), "-r"), node))
        node = add(const(mats[k], f"a{k}"), shifted)
    return MaterialLaw(space, node, nu_min)


def eval(M, z):
    """``M(z)`` as a :class:`LinOp`."""
    return LinOp(M.space, M.space, M.eval_full([z])[0])


def _min_re_law(M, z):
    if M.is_diagonal:
        vals = np.real(M.eval_batch(z) / z[:, None]).min(axis=1)
    else:
        vals = batch_hermitian_min_eig(M.eval_full(z) / z[:, None, None], M.space.metric)
    k = int(np.argmin(vals))
    return vals[k], z[k]


def disk_samples(nu, n_boundary=1024, n_interior=512):
    """Boundary circle points (shrunk by ``1e-6``) and Halton interior points."""
    r = 0.5 / nu
    ang = 2 * np.pi * (np.arange(n_boundary) + 0.5) / n_boundary
    zb = r + r * (1 - 1e-6) * np.exp(1j * ang)
    h = qmc.Halton(d=2, scramble=False).random(n_interior + 1)[1:]
    zi = r + r * (1 - 1e-6) * np.sqrt(h[:, 0]) * np.exp(2j * np.pi * h[:, 1])
    return np.concatenate([zb, zi])


def check_H1(M, nu, n_boundary=1024, n_interior=512, grid=None):
    """Sample ``min Re z^{-1} M(z)`` over the disk ``B(1/(2nu), 1/(2nu))``."""
    if nu < M.nu_min:
        raise ValueError(f"nu={nu} below nu_min={M.nu_min}")
    z = disk_samples(nu, n_boundary, n_interior)
    c, zmin = _min_re_law(M, z)
    sc = M.symbol_c_hat(grid) if grid is not None else float("nan")
    return H1Report(float(c), complex(zmin), len(z), sc, n_boundary, n_interior, float(nu))


def _apply_symbols(M, u, sym):
    U = fourier_laplace(u)
    if M.is_diagonal:
        V = sym * U.coeffs
    else:
        V = np.einsum("jab,jb->ja", sym, U.coeffs)
    return inverse_fourier_laplace(SpectralSignal(u.grid, u.space, V))


def apply(M, u):
    """``M(d0^{-1}) u`` via per-bin multiplication by ``M(1/delta_j)``."""
    return _apply_symbols(M, u, M.symbols(u.grid))


def apply_d0M(M, u):
    """``d0 M(d0^{-1}) u`` via per-bin multiplication by ``delta_j M(1/delta_j)``."""
    sym = M.symbols(u.grid)
    delta = u.grid.symbol
    sym = delta[:, None] * sym if M.is_diagonal else delta[:, None, None] * sym
    return _apply_symbols(M, u, sym)


def resolvent_symbols(M, grid, tau):
    """Per-bin inverses of ``I + tau delta_j M(1/delta_j)`` (cached)."""

    def build():
        sym = M.symbols(grid)
        delta = grid.symbol
        if M.is_diagonal:
            B = 1.0 + tau * delta[:, None] * sym
            a = np.abs(B)
            if np.any(a.min(axis=-1) * COND_LIMIT < a.max(axis=-1)):
                raise SingularOperator("I + tau d0 M is singular at some bin")
            return 1.0 / B
        d = M.space.dim
        B = np.eye(d) + tau * delta[:, None, None] * sym
        if np.any(np.linalg.cond(B) > COND_LIMIT):
            raise SingularOperator("I + tau d0 M is singular at some bin")
        return np.linalg.inv(B)

    return M._cached(("R", grid, float(tau)), build)


def solve_linear(M, f, tau):
    """Solve ``(1 + tau d0 M(d0^{-1})) u = f`` bin by bin.

    Raises
    ------
    NotPositive
        If the symbol positivity constant is not positive.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0:
        return f
    if M.symbol_c_hat(f.grid) <= 0:
        raise NotPositive("Re z^{-1} M(z) is not positive at the symbol points")
    return _apply_symbols(M, f, resolvent_symbols(M, f.grid, tau))


def from_config(cfg, space, constants=None, nu_min=0.0):
    """Build a law from a JSON-compatible expression.

    Node forms: ``{"const": name | number}``, ``{"zmul": e}``,
    ``{"sum": [e, ...]}``, ``{"product": [e, ...]}``, ``{"inverse": e}``.
    The name ``"I"`` denotes the identity; other names are looked up in
    ``constants`` (matrices or scalars).
    """
    constants = dict(constants or {})
    d = space.dim

    def build(e):
        if not isinstance(e, dict) or len(e) != 1:
            raise ValueError(f"malformed material-law node: {e!r}")
        (kind, arg), = e.items()
        if kind == "const":
            if isinstance(arg, (int, float)):
                return const(float(arg) * np.eye(d), repr(float(arg)))
            if arg == "I":
                return const(np.eye(d), "I")
            if arg not in constants:
                raise ValueError(f"unknown constant {arg!r}")
            m = constants[arg]
            m = float(m) * np.eye(d) if np.isscalar(m) else np.asarray(m, dtype=complex)
            if m.shape != (d, d):
                raise ValueError(f"constant {arg!r} has shape {m.shape}, expected {(d, d)}")
            return const(m, arg)
        if kind == "zmul":
            return zmul(build(arg))
        if kind in ("sum", "product"):
            if not isinstance(arg, list) or not arg:
                raise ValueError(f"{kind} needs a non-empty list")
            kids = tuple(build(a) for a in arg)
            return Sum(kids) if kind == "sum" else Product(kids)
        if kind == "inverse":
            return inv(build(arg))
        raise ValueError(f"unknown material-law node kind {kind!r}")

    return MaterialLaw(space, build(cfg), nu_min)


def load_constant_csv(path):
    """Read a real matrix constant from a comma-separated file."""
    return np.loadtxt(path, delimiter=",", ndmin=2)
