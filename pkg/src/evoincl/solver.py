"""Solution of ``(u, f) in d0 M(d0^{-1}) + A`` on a time grid.

Backends
--------
``"fb"``
    Yosida continuation: for ``lam_k = lambda0 * gamma**k`` the regularized
    problem ``d0 M u + A_lam u = f`` is solved by forward-backward splitting
    with step ``lam``, accelerated by Anderson mixing.
``"dr"``
    Douglas-Rachford splitting of the resolvents of ``d0 M`` and ``A``.

Linear problems bypass both: an affine law ``M(z) = M0 + z M1`` with a
pointwise linear ``A`` is stepped exactly in time (backward Euler is the
exact inverse of the discrete ``d0``), other linear problems are solved bin
by bin.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .accel import anderson_root
from .material import NotPositive, apply_d0M, check_H1, solve_linear
from .monotone import (
    LinearRelation,
    NoConvergence,
    PointwiseLift,
    SignalAmbient,
    SpectralLinearRelation,
    VectorAmbient,
    ZeroRelation,
    check_autonomous,
    check_H3,
    lift_pointwise,
)
from .timegrid import (
    Signal,
    SpectralSignal,
    fourier_laplace,
    inverse_fourier_laplace,
    wnorm,
)


class HypothesisFailed(RuntimeError):
    """A hypothesis check failed; ``report`` holds the failing report."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolveOptions:
    """Solver settings; all are exposed on the command line and in configs."""

    lambda0: float = 1.0
    gamma: float = 0.5
    max_levels: int = 20
    tol_inner: float = 1e-8
    tol_outer: float = 1e-6
    max_inner: int = 10000
    backend: str = "fb"
    memory: int = 10
    dr_step: float = None
    shortcut: bool = True
    fixed_levels: int = None
    extrapolate: bool = True

    def __post_init__(self):
        if self.backend not in ("fb", "dr"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not (0 < self.gamma < 1) or self.lambda0 <= 0:
            raise ValueError("need lambda0 > 0 and 0 < gamma < 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))

    def to_dict(self):
        return asdict(self)


@dataclass
class LevelRecord:
    lam: float
    iterations: int
    residual: float
    yosida_norm: float
    deviation: float

    def as_row(self):
        return [self.lam, self.iterations, self.residual, self.yosida_norm, self.deviation]


@dataclass
class SolveDiagnostics:
    """Convergence record of one solve.

    ``lambda_path`` rows are ``(lam, inner iterations, residual,
    |A_lam(u_lam)|, deviation from the previous level)``; residuals are
    relative to ``wnorm(f)`` and deviations to ``wnorm(u_lam)``.
    """

    backend: str
    path: str
    converged: bool = False
    lambda_path: list = field(default_factory=list)
    sup_yosida_norm: float = 0.0
    final_residual: float = 0.0
    iterations: int = 0
    warnings: list = field(default_factory=list)
    extrapolated_deviation: list = field(default_factory=list)
    selection: np.ndarray = field(default=None, repr=False)

    @property
    def levels(self):
        return len(self.lambda_path)

    def cauchy_fit(self):
        """Least-squares ``C`` in ``dev_k^2 ~ C (lam_k + lam_{k-1})`` (heuristic)."""
        rows = self.lambda_path
        if len(rows) < 3:
            return None
        lam = np.array([r.lam for r in rows])
        dev = np.array([r.deviation for r in rows[1:]])
        x = lam[1:] + lam[:-1]
        C = float(np.dot(x, dev**2) / np.dot(x, x))
        return {"C": C, "heuristic": True}

    def to_dict(self):
        return {
            "backend": self.backend,
            "path": self.path,
            "converged": bool(self.converged),
            "levels": self.levels,
            "iterations": int(self.iterations),
            "sup_yosida_norm": float(self.sup_yosida_norm),
            "final_residual": float(self.final_residual),
            "lambda_path": {
                "columns": ["lambda", "inner_iterations", "residual", "yosida_norm", "deviation"],
                "rows": [r.as_row() for r in self.lambda_path],
            },
            "extrapolated_deviation": [float(v) for v in self.extrapolated_deviation],
            "cauchy_fit": self.cauchy_fit(),
            "warnings": list(self.warnings),
        }


class EvoProblem:
    """An evolutionary inclusion ``(u, f) in d0 M(d0^{-1}) + A``.

    Parameters
    ----------
    grid : TimeGrid
    M : MaterialLaw
    A : MonotoneRelation
        On signals over ``grid``; a static relation is lifted pointwise.
    h1 : H1Report, optional
        Computed with ``check_H1`` when omitted.
    check : bool
        Run ``check_autonomous`` and ``check_H3`` on ``A``.
    seed : int
        Seed of the hypothesis samplers.

    Raises
    ------
    NotPositive
        If the positivity constant at the solver's symbol points is not positive.
    HypothesisFailed
        If ``A`` fails a sampled check.
    """

    def __init__(self, grid, M, A, h1=None, check=True, seed=0, name="problem", n_check=10):
        if isinstance(A.ambient, VectorAmbient):
            A = lift_pointwise(A, grid)
        if not isinstance(A.ambient, SignalAmbient):
            raise TypeError("A must act on signals")
        if A.ambient.space.dim != M.space.dim:
            raise ValueError("A and M act on different spaces")
        self.grid = grid
        self.M = M
        self.A = A
        self.name = name
        self.space = M.space
        self.h1 = h1 if h1 is not None else check_H1(M, grid.nu, grid=grid)
        if not self.h1.symbol_c_hat > 0:
            raise NotPositive(f"symbol_c_hat = {self.h1.symbol_c_hat:.3e} is not positive")
        self.reports = {"H1": self.h1.to_dict()}
        if check:
            self.run_checks(seed, n_check)

    def run_checks(self, seed=0, n=10):
        for fn, name in ((check_autonomous, "autonomous"), (check_H3, "H3")):
            rep = fn(self.A, n=n, seed=seed)
            self.reports[name] = rep.to_dict()
            if not rep.passed:
                raise HypothesisFailed(f"A fails {name}: worst {rep.worst:.3e}", rep)

    @property
    def c(self):
        return self.h1.symbol_c_hat

    def signal(self, values):
        return Signal(self.grid, self.space, np.asarray(values, dtype=complex))

    def wn(self, values):
        return float(wnorm(self.signal(values)))

    def residual(self, u, a, f):
        """``d0 M u + a - f`` for a selection ``a`` of ``A`` at ``u``."""
        return apply_d0M(self.M, self.signal(u)).values + a - f

    def to_dict(self):
        return {"name": self.name, "grid": {"nu": self.grid.nu, "step": self.grid.step,
                "length": self.grid.length, "pad": self.grid.pad},
                "A": self.A.to_dict(), "reports": self.reports}


# linear structure --------------------------------------------------------------------


def static_matrix(A):
    """Matrix of ``A`` when it acts node by node as a fixed linear map."""
    from .boundary import BoundaryOperator

    if isinstance(A, ZeroRelation):
        return np.zeros((A.ambient.space.dim,) * 2, dtype=complex)
    if isinstance(A, PointwiseLift):
        if isinstance(A.base, LinearRelation):
            return np.asarray(A.base.op.matrix)
        if isinstance(A.base, ZeroRelation):
            return np.zeros((A.base.ambient.space.dim,) * 2, dtype=complex)
    if isinstance(A, BoundaryOperator) and A._A is not None:
        return A.matrix
    return None


def spectral_symbols(A, grid):
    """Per-bin matrices of a linear time-invariant ``A`` or ``None``."""
    from .boundary import BoundaryOperator

    K = static_matrix(A)
    if K is not None:
        return np.broadcast_to(K, (grid.padded_length,) + K.shape)
    if isinstance(A, SpectralLinearRelation):
        return A.symbols
    if isinstance(A, BoundaryOperator) and A.endpoint.linear:
        return A.linear_symbols()
    return None


def affine_law(M, nu):
    """``(M0, M1)`` with ``M(z) = M0 + z M1`` if the law is affine, else ``None``."""
    r = 0.5 / nu
    z = np.array([r, 0.5 * r, 0.25 * r, r * (0.5 + 0.5j)])
    V = M.eval_full(z)
    M1 = (V[0] - V[1]) / (z[0] - z[1])
    M0 = V[0] - z[0] * M1
    pred = M0[None] + z[:, None, None] * M1[None]
    if np.abs(pred - V).max() > 1e-12 * max(1.0, np.abs(V).max()):
        return None
    return M0, M1


def _solve_time_domain(p, M0, M1, K, f):
    h = p.grid.step
    B = M0 / h + M1 + K
    lu = np.linalg.inv(B)
    u = np.zeros_like(f)
    prev = np.zeros(f.shape[1], dtype=complex)
    for k in range(f.shape[0]):
        prev = lu @ (f[k] + M0 @ prev / h)
        u[k] = prev
    return u


def _solve_spectral(p, H, f):
    grid = p.grid
    Msym = p.M.symbols(grid)
    d = p.space.dim
    if p.M.is_diagonal:
        Msym = Msym[:, :, None] * np.eye(d)[None]
    B = grid.symbol[:, None, None] * Msym + H
    F = fourier_laplace(p.signal(f))
    U = np.linalg.solve(B, F.coeffs[:, :, None])[:, :, 0]
    return inverse_fourier_laplace(SpectralSignal(grid, p.space, U)).values


# main entry --------------------------------------------------------------------------


def solve(p, f, opts=None, u0=None):
    """Solve ``d0 M(d0^{-1}) u + A u ∋ f``.

    Parameters
    ----------
    p : EvoProblem
    f : Signal or ndarray, shape (N, d)
    opts : SolveOptions or dict, optional
    u0 : ndarray, optional
        Initial guess for the iterative backends.

    Returns
    -------
    u : Signal
    diag : SolveDiagnostics
        ``diag.selection`` holds the realized value of ``A`` at ``u``.

    Raises
    ------
    NotPositive
        If ``p.h1.symbol_c_hat <= 0``.
    NoConvergence
        If an inner iteration exhausts its budget or the continuation does
        not settle within ``max_levels``; ``exc.diagnostics`` has the record.

    Notes
    -----
    The iterative backends return a point of the domain of ``A``: for
    ``"fb"`` the resolvent ``J_lam(u_lam)`` of the last level, whose
    selection is ``A_lam(u_lam)``; for ``"dr"`` the shadow ``J(z)``.
    """
    if isinstance(opts, dict) or opts is None:
        opts = SolveOptions.from_dict(opts)
    if not p.h1.symbol_c_hat > 0:
        raise NotPositive("symbol_c_hat is not positive")
    fv = np.array(f.values if isinstance(f, Signal) else f, dtype=complex)
    if fv.shape != (p.grid.length, p.space.dim):
        raise ValueError(f"rhs has shape {fv.shape}, expected {(p.grid.length, p.space.dim)}")
    if opts.shortcut and opts.backend == "fb":
        out = _solve_linear_problem(p, fv, opts)
        if out is not None:
            return out
    if opts.backend == "dr":
        return _solve_dr(p, fv, opts, u0)
    return _solve_fb(p, fv, opts, u0)


def _solve_linear_problem(p, f, opts):
    K = static_matrix(p.A)
    aff = affine_law(p.M, p.grid.nu) if K is not None else None
    if aff is not None:
        u = _solve_time_domain(p, aff[0], aff[1], K, f)
        path = "linear-time"
        sel = u @ K.T
    else:
        H = spectral_symbols(p.A, p.grid)
        if H is None:
            return None
        u = _solve_spectral(p, H, f)
        path = "linear-spectral"
        sel = p.A.apply(u) if K is not None else _spectral_apply(p, H, u)
    d = SolveDiagnostics("fb", path, True)
    d.selection = sel
    nf = p.wn(f)
    d.final_residual = p.wn(p.residual(u, sel, f)) / nf if nf > 0 else 0.0
    d.sup_yosida_norm = p.wn(sel)
    return p.signal(u), d


def _spectral_apply(p, H, u):
    U = fourier_laplace(p.signal(u))
    V = np.einsum("jab,jb->ja", H, U.coeffs)
    return inverse_fourier_laplace(SpectralSignal(p.grid, p.space, V)).values


def _level_solver(p, f, lam, u_start, tol, opts):
    """Forward-backward with step ``lam`` for ``d0 M u + A_lam u = f``."""
    A, M = p.A, p.M
    last = {}

    def F(u):
        if A.exact_yosida:
            a = A.yosida(lam, u)
            x = u - lam * a
        else:
            x = A.resolve(lam, u)
            a = (u - x) / lam
        last["u"], last["a"], last["x"] = u, a, x
        T = solve_linear(M, p.signal(x + lam * f), lam).values
        return u - T

    def stop(u, Fu):
        if last.get("u") is not u:
            F(u)
        return p.wn(p.residual(u, last["a"], f))

    out = anderson_root(F, u_start, 1.0, p.wn, tol, opts.max_inner, memory=opts.memory, stop=stop)
    if last.get("u") is not out.x:
        F(out.x)
    return out, last["x"], last["a"]


def _solve_fb(p, f, opts, u0):
    nf = p.wn(f)
    d = SolveDiagnostics("fb", "yosida")
    if nf == 0:
        d.converged = True
        d.selection = np.zeros_like(f)
        return p.signal(np.zeros_like(f)), d
    tol = opts.tol_inner * nf
    u = np.zeros_like(f) if u0 is None else np.array(u0, dtype=complex)
    hist = []
    ext_prev = None
    x = a = None
    n_levels = opts.fixed_levels or opts.max_levels
    gm = opts.gamma
    for k in range(n_levels):
        lam = opts.lambda0 * gm**k
        start = u
        if len(hist) >= 2:
            start = u + gm * (hist[-1][0] - hist[-2][0])
        out, x, a = _level_solver(p, f, lam, start, tol, opts)
        d.iterations += out.iterations
        h = out.history
        if any(h[i + 1] > h[i] * (1 + 1e-12) for i in range(1, len(h) - 1)):
            if "inner residual increased" not in d.warnings:
                d.warnings.append("inner residual increased")
        ya = p.wn(a)
        dev = p.wn(out.x - u) / max(p.wn(out.x), 1e-300) if hist else math.inf
        d.lambda_path.append(LevelRecord(lam, out.iterations, out.residual / nf, ya, dev))
        d.sup_yosida_norm = max(d.sup_yosida_norm, ya)
        u = out.x
        hist.append((u, x, a))
        if not out.converged:
            d.selection = a
            raise NoConvergence(f"inner iteration stalled at lam={lam:.3e} "
                                f"(residual {out.residual / nf:.2e})", d)
        if len(hist) >= 2:
            # first-order Richardson in lam: the Yosida bias is O(lam)
            (_, x1, a1), (_, x2, a2) = hist[-2], hist[-1]
            ext = ((x2 - gm * x1) / (1 - gm), (a2 - gm * a1) / (1 - gm))
            if ext_prev is not None:
                edev = p.wn(ext[0] - ext_prev[0]) / max(p.wn(ext[0]), 1e-300)
                d.extrapolated_deviation.append(edev)
                if opts.fixed_levels is None and edev <= opts.tol_outer:
                    d.converged = True
                    break
            ext_prev = ext
    else:
        d.converged = opts.fixed_levels is not None
    if ext_prev is not None and opts.extrapolate:
        x, a = ext
    ys = [r.yosida_norm for r in d.lambda_path]
    if len(ys) >= 4 and ys[-1] > 10 * np.median(ys[: len(ys) // 2]):
        d.warnings.append("Yosida norm growing along the path")
    d.selection = a
    d.final_residual = p.wn(p.residual(x, a, f)) / nf
    if not d.converged:
        raise NoConvergence(f"continuation did not settle in {n_levels} levels", d)
    return p.signal(x), d


def _solve_dr(p, f, opts, u0):
    nf = p.wn(f)
    d = SolveDiagnostics("dr", "douglas-rachford")
    if nf == 0:
        d.converged = True
        d.selection = np.zeros_like(f)
        return p.signal(np.zeros_like(f)), d
    g = opts.dr_step or 1.0 / p.grid.nu_prime
    A, M = p.A, p.M
    last = {}

    def F(z):
        x = A.resolve(g, z)
        y = solve_linear(M, p.signal(2 * x - z + g * f), g).values
        last["z"], last["x"] = z, x
        return x - y

    def stop(z, Fz):
        if last.get("z") is not z:
            F(z)
        x = last["x"]
        return p.wn(p.residual(x, (z - x) / g, f))

    z0 = np.zeros_like(f) if u0 is None else np.array(u0, dtype=complex)
    tol = opts.tol_inner * nf
    out = anderson_root(F, z0, 1.0, p.wn, tol, opts.max_inner, memory=opts.memory, stop=stop)
    if last.get("z") is not out.x:
        F(out.x)
    x = last["x"]
    a = (out.x - x) / g
    d.iterations = out.iterations
    d.selection = a
    d.sup_yosida_norm = p.wn(a)
    d.final_residual = out.residual / nf
    d.lambda_path.append(LevelRecord(g, out.iterations, d.final_residual, d.sup_yosida_norm, 0.0))
    d.converged = bool(out.converged)
    if not d.converged:
        raise NoConvergence(f"Douglas-Rachford stalled at residual {d.final_residual:.2e}", d)
    return p.signal(x), d


# contracts -----------------------------------------------------------------------------


@dataclass
class LipschitzReport:
    ratio: float
    bound: float
    passed: bool
    slack: float

    def to_dict(self):
        return {"name": "lipschitz", **asdict(self)}


def lipschitz_check(p, f, g, opts=None, slack=0.05):
    """Check ``wnorm(u_f - u_g) <= wnorm(f - g) / symbol_c_hat * (1 + slack)``."""
    ff = f.values if isinstance(f, Signal) else np.asarray(f)
    gg = g.values if isinstance(g, Signal) else np.asarray(g)
    bound = 1.0 / p.c
    den = p.wn(ff - gg)
    if den == 0:
        return LipschitzReport(0.0, bound, True, slack)
    u, _ = solve(p, ff, opts)
    v, _ = solve(p, gg, opts)
    ratio = p.wn(u.values - v.values) / den
    return LipschitzReport(float(ratio), float(bound), bool(ratio <= bound * (1 + slack)), slack)


@dataclass
class CausalityReport:
    defect: float
    a_index: int
    worst_node: int
    passed: bool
    tol: float

    def to_dict(self):
        return {"name": "causality", **asdict(self)}


def causality_check(p, f, a_index, perturbation, opts=None, tol=1e-6):
    """Compare solutions for ``f`` and ``f + perturbation`` on nodes ``k < a_index``.

    The perturbation must vanish on those nodes.  For the continuation
    backend both solves use the same number of levels.
    """
    if isinstance(opts, dict) or opts is None:
        opts = SolveOptions.from_dict(opts)
    ff = np.asarray(f.values if isinstance(f, Signal) else f, dtype=complex)
    pp = np.asarray(perturbation.values if isinstance(perturbation, Signal) else perturbation,
                    dtype=complex)
    if np.any(pp[:a_index] != 0):
        raise ValueError("perturbation must vanish up to a_index")
    pn = p.wn(pp)
    if pn == 0:
        return CausalityReport(0.0, int(a_index), -1, True, tol)
    u, d = solve(p, ff, opts)
    o2 = opts
    if d.path == "yosida":
        o2 = SolveOptions(**{**opts.to_dict(), "fixed_levels": d.levels})
    v, _ = solve(p, ff + pp, o2)
    diff = u.values[:a_index] - v.values[:a_index]
    defect = wnorm(Signal(p.grid, p.space, np.vstack([diff, np.zeros_like(ff[a_index:])]))) / pn
    node = int(np.argmax(np.abs(diff).max(axis=1))) if a_index > 0 else -1
    return CausalityReport(float(defect), int(a_index), node, bool(defect <= tol), tol)
