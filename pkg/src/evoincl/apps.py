"""1-D demo problems: a wave with impedance boundary and a Kelvin-Voigt bar with dry friction.

Both use the staggered pair of :mod:`evoincl.boundary`.  In the wave
problem the state is ``(u, q)`` (nodes, midpoints) and

    d0 u + D q = d0^{-1} f,    d0 q + G u = 0,

with the boundary law ``b = d0 a(d0^{-1}) a`` between the trace ``a`` of
``u`` and the outward flux ``b`` of ``q``.  In one dimension the vector
field of the impedance law is ``a(d0^{-1}) u N`` with ``N`` the extension
``2x/L - 1`` of the outward normal.

The visco-elastic state is ``(v, sigma) = (d0 u, -T)`` with
``T = C G u + D_visc G v`` and the friction law ``(v, -T N) in d(mu |.|)``
at both ends.
"""

import csv
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .boundary import (
    BoundaryOperator,
    FrictionEndpoint,
    ImpedanceEndpoint,
    build_1d_pair,
)
from .linalg import StateSpace
from .material import MaterialLaw, add, check_H1, const, inv, mul, zmul
from .monotone import SpectralLinearRelation, check_monotone
from .solver import EvoProblem, HypothesisFailed
from .timegrid import Signal, TimeGrid, fourier_laplace, integrate, inverse_fourier_laplace
from .timegrid import SpectralSignal

__all__ = [
    "HypothesisFailed",
    "WaveImpedanceConfig",
    "ViscoFrictionConfig",
    "build_wave_impedance",
    "build_viscoelastic_friction",
    "check_impedance_condition",
    "postprocess",
    "forcing_values",
]


@dataclass
class Forcing:
    """Separable load ``amplitude * g(t) * exp(-((x - center) / width)^2)``.

    Profiles: ``"zero"``; ``"pulse"`` (one sine period on ``[0, t_end]``, zero
    mean); ``"bump"`` (``sin^2`` on ``[0, t_end]``); ``"ramp"`` (``t / T``).
    """

    profile: str = "pulse"
    amplitude: float = 1.0
    t_end: float = 1.0
    center: float = 0.5
    width: float = 0.15

    def __post_init__(self):
        if self.profile not in ("zero", "pulse", "bump", "ramp"):
            raise ValueError(f"unknown forcing profile {self.profile!r}")


def forcing_values(fc, t, x, T):
    """Node values of the load, shape ``(len(t), len(x))``."""
    if fc.profile == "zero":
        return np.zeros((len(t), len(x)))
    on = t <= fc.t_end
    if fc.profile == "pulse":
        g = np.sin(2 * np.pi * t / fc.t_end) * on
    elif fc.profile == "bump":
        g = np.sin(np.pi * t / fc.t_end) ** 2 * on
    else:
        g = t / T
    s = np.exp(-(((x - fc.center) / fc.width) ** 2))
    return fc.amplitude * np.outer(g, s)


def _forcing(d):
    return d if isinstance(d, Forcing) else Forcing(**(d or {}))


@dataclass
class WaveImpedanceConfig:
    """Wave problem; ``coeffs`` overrides the default law ``a(z) = alpha z``."""

    n: int = 32
    L: float = 1.0
    T: float = 4.0
    N: int = 128
    nu: float = 2.0
    alpha: float = 0.5
    coeffs: list = None
    order: int = None
    pad: int = 2
    forcing: Forcing = field(default_factory=Forcing)

    def __post_init__(self):
        self.forcing = _forcing(self.forcing)
        if self.nu * self.T / self.N >= 0.5:
            raise ValueError("need nu * h < 0.5")
        if self.n < 4 or self.N < 2:
            raise ValueError("grid too small")

    @property
    def law(self):
        c = list(self.coeffs) if self.coeffs is not None else [0.0, self.alpha]
        return c[: self.order + 1] if self.order is not None else c


@dataclass
class ViscoFrictionConfig:
    n: int = 32
    L: float = 1.0
    T: float = 4.0
    N: int = 128
    nu: float = 2.5
    rho: float = 1.0
    C: float = 1.0
    Dvisc: float = 0.5
    mu_friction: float = 0.2
    pad: int = 2
    forcing: Forcing = field(default_factory=lambda: Forcing("bump", 4.0, 1.0, 0.5, 0.15))

    def __post_init__(self):
        self.forcing = _forcing(self.forcing)
        if self.rho <= 0 or self.Dvisc <= 0 or self.C < 0:
            raise ValueError("need rho > 0, Dvisc > 0, C >= 0")
        if self.mu_friction < 0:
            raise ValueError("mu_friction must be non-negative")
        if not self.nu > self.C / self.Dvisc:
            raise ValueError("need nu > C / Dvisc")
        if self.nu * self.T / self.N >= 0.5:
            raise ValueError("need nu * h < 0.5")


def _grid(cfg):
    return TimeGrid(cfg.nu, cfg.T / cfg.N, cfg.N, pad=cfg.pad)


def _config(cls, cfg):
    if isinstance(cfg, cls):
        return cfg
    return cls(**(cfg or {}))


# impedance positivity ------------------------------------------------------------


@dataclass
class ImpedanceReport:
    name: str
    passed: bool
    worst: float
    samples: int
    seed: int
    witness: dict

    def to_dict(self):
        return asdict(self)


def check_impedance_condition(pair, grid, law, n=50, seed=0, tol=1e-9):
    """Sample ``Re sum_k w_k (<G u|phi> + <u|D phi>) >= 0`` for ``phi = d0 a(d0^{-1}) u N``.

    ``phi`` is the flux field whose node values are ``s N`` with
    ``s = d0 a(d0^{-1}) u`` (computed per bin) and whose midpoint values are
    the averages of neighbouring nodes.  The form is normalized by
    ``wnorm(u)^2`` (nodes) times the largest symbol modulus.
    """
    imp = ImpedanceEndpoint(law)
    sym = imp.scalar_symbol(grid.symbol)
    scale = max(float(np.abs(sym).max()), 1e-300)
    rng = np.random.default_rng(seed)
    N, m = grid.length, pair.n + 1
    Nx = 2 * pair.nodes / pair.length - 1
    sp = StateSpace.euclidean(m)
    worst, wit = np.inf, {}
    for i in range(n):
        u = rng.standard_normal((N, m))
        if i % 2:
            u = u + 1j * rng.standard_normal((N, m))
        U = fourier_laplace(Signal(grid, sp, u))
        s = inverse_fourier_laplace(SpectralSignal(grid, sp, sym[:, None] * U.coeffs)).values
        node = s * Nx[None, :]
        phi = 0.5 * (node[:, 1:] + node[:, :-1])
        beta = node[:, [0, -1]]
        Dphi = pair.apply_D(phi, beta)
        val = (pair.H1.inner(u @ pair.G.matrix.T, phi) + pair.H0.inner(u, Dphi)).real
        form = float(np.sum(grid.weights * val))
        ref = float(np.sum(grid.weights * pair.H0.inner(u, u).real)) * scale
        rel = form / ref
        if rel < worst:
            worst, wit = rel, {"sample": i, "form": form, "scale": ref}
    return ImpedanceReport("impedance_positivity", bool(worst >= -tol), float(worst), n, seed, wit)


# builders --------------------------------------------------------------------------


def _attach(p, app, cfg, pair, rhs):
    p.app = app
    p.config = cfg
    p.pair = pair
    p.rhs = rhs
    return p


def build_wave_impedance(cfg=None, seed=0, n_check=10):
    """Wave equation with boundary law ``(d0^2 a(d0^{-1}) u + grad u) N = 0``.

    Returns
    -------
    EvoProblem
        With attributes ``app``, ``config``, ``pair`` and ``rhs`` (the
        right-hand side ``(integrate(f), 0)``); ``reports`` holds the
        hypothesis checks.

    Raises
    ------
    HypothesisFailed
        If the impedance positivity sampler or a monotonicity check fails.
    """
    cfg = _config(WaveImpedanceConfig, cfg)
    grid = _grid(cfg)
    pair = build_1d_pair(cfg.n, cfg.L)
    space = pair.H0.direct_sum(pair.H1)
    reports = {}
    pos = check_impedance_condition(pair, grid, cfg.law, seed=seed)
    reports["impedance_positivity"] = pos.to_dict()
    if not pos.passed:
        raise HypothesisFailed(f"impedance law fails positivity (worst {pos.worst:.3e})", pos)
    endpoint = ImpedanceEndpoint(cfg.law)
    ep_space = StateSpace.euclidean(2)
    H = endpoint.symbols(grid)
    for name, S in (("h_monotone", H), ("h_adjoint_monotone", np.conj(np.swapaxes(H, 1, 2)))):
        rep = check_monotone(SpectralLinearRelation(grid, ep_space, S), n=20, seed=seed)
        reports[name] = rep.to_dict()
        if not rep.passed:
            raise HypothesisFailed(f"{name} fails (worst {rep.worst:.3e})", rep)
    A = BoundaryOperator(pair, grid, endpoint)
    M = MaterialLaw(space, const(np.eye(space.dim), "I"))
    h1 = check_H1(M, cfg.nu, grid=grid)
    p = EvoProblem(grid, M, A, h1=h1, seed=seed, name="wave", n_check=n_check)
    p.reports.update(reports)
    f = forcing_values(cfg.forcing, grid.times, pair.nodes, cfg.T)
    rhs = np.zeros((grid.length, space.dim), dtype=complex)
    rhs[:, : cfg.n + 1] = integrate(Signal(grid, pair.H0, f.astype(complex))).values
    return _attach(p, "wave", cfg, pair, rhs)


def visco_law(space, n, rho, C, Dvisc):
    """``M(z) = blockdiag(rho, z (z C / D + 1)^{-1} D^{-1})`` on ``H0 ⊕ H1``."""
    d = space.dim
    P0 = np.diag(np.r_[np.ones(n + 1), np.zeros(n)])
    P1 = np.eye(d) - P0
    inner = inv(add(zmul(const(C / Dvisc * P1, "C/D P1")), const(np.eye(d), "I")))
    expr = add(const(rho * P0, "rho P0"), zmul(mul(inner, const(P1 / Dvisc, "D^-1 P1"))))
    return MaterialLaw(space, expr, nu_min=C / Dvisc)


def build_viscoelastic_friction(cfg=None, seed=0, n_check=10):
    """Kelvin-Voigt bar with dry friction ``g = d(mu |.|)`` at both ends.

    Raises
    ------
    HypothesisFailed
        If ``check_H1`` gives a non-positive constant or ``h`` fails a check.
    """
    from .boundary import BDRelation, bd_basis
    from .monotone import check_autonomous, check_H3

    cfg = _config(ViscoFrictionConfig, cfg)
    grid = _grid(cfg)
    pair = build_1d_pair(cfg.n, cfg.L)
    space = pair.H0.direct_sum(pair.H1)
    M = visco_law(space, cfg.n, cfg.rho, cfg.C, cfg.Dvisc)
    h1 = check_H1(M, cfg.nu, grid=grid)
    if not h1.symbol_c_hat > 0 or not h1.c_hat > 0:
        raise HypothesisFailed("material law fails positivity", h1)
    endpoint = FrictionEndpoint(cfg.mu_friction)
    h = BDRelation(endpoint, bd_basis(pair, "G"), grid)
    reports = {}
    for fn, name in ((check_H3, "h_H3"), (check_autonomous, "h_autonomous")):
        rep = fn(h, n=n_check, seed=seed)
        reports[name] = rep.to_dict()
        if not rep.passed:
            raise HypothesisFailed(f"{name} fails (worst {rep.worst:.3e})", rep)
    A = BoundaryOperator(pair, grid, endpoint)
    p = EvoProblem(grid, M, A, h1=h1, seed=seed, name="friction", n_check=n_check)
    p.reports.update(reports)
    f = forcing_values(cfg.forcing, grid.times, pair.nodes, cfg.T)
    rhs = np.zeros((grid.length, space.dim), dtype=complex)
    rhs[:, : cfg.n + 1] = f
    return _attach(p, "friction", cfg, pair, rhs)


# post-processing -----------------------------------------------------------------------


@dataclass
class Artifacts:
    """Named time series (arrays with one row per time node) and scalar checks."""

    series: dict
    checks: dict

    def write(self, outdir, grid):
        os.makedirs(outdir, exist_ok=True)
        for name, arr in self.series.items():
            path = os.path.join(outdir, f"{name}.csv")
            arr = np.real_if_close(np.asarray(arr))
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                cols = 1 if arr.ndim == 1 else arr.shape[1]
                w.writerow(["t"] + [f"c{j}" for j in range(cols)])
                for t, row in zip(grid.times, arr.reshape(len(grid.times), -1)):
                    w.writerow([repr(float(t))] + [repr(float(np.real(v))) for v in row])


def _sq(space, x):
    return np.real(np.einsum("ka,ab,kb->k", np.conj(x), space.metric, x))


def stick_slip(p, u, selection, rel=1e-3):
    """Endpoint traces, outward fluxes and the worst stick-node velocity ratio."""
    n = p.pair.n
    v, sig = u[:, : n + 1], u[:, n + 1 :]
    a, b = p.A.endpoint_pair(v, sig, selection[:, : n + 1])
    mu = p.config.mu_friction
    scale = max(float(np.abs(v).max()), 1e-300)
    stick = np.abs(b) < mu * (1 - rel)
    worst = float((np.abs(a) * stick).max() / scale) if stick.any() else 0.0
    return {"trace": a, "flux": b, "stick_nodes": int(stick.sum()), "stick_velocity_ratio": worst}


def postprocess(p, u, diag=None):
    """Displacement, stress and energy series for a solved demo problem.

    For the wave problem the displacement is the first state component and
    the energy is ``(|u|^2 + |q|^2) / 2``.  For the bar ``u = integrate(v)``,
    the stress ``T = C G u + D_visc G v`` is recomputed and compared with the
    solved ``-sigma``; the energy is ``rho |v|^2 / 2 + C |G u|^2 / 2``.
    """
    uv = np.asarray(u.values if isinstance(u, Signal) else u)
    grid, pair = p.grid, p.pair
    n = pair.n
    G = pair.G.matrix
    if p.app == "wave":
        disp = uv[:, : n + 1]
        q = uv[:, n + 1 :]
        energy = 0.5 * (_sq(pair.H0, disp) + _sq(pair.H1, q))
        return Artifacts({"displacement": disp, "flux": q, "energy": energy}, {})
    cfg = p.config
    v, sig = uv[:, : n + 1], uv[:, n + 1 :]
    disp = integrate(Signal(grid, pair.H0, v)).values
    T = cfg.C * disp @ G.T + cfg.Dvisc * v @ G.T
    den = max(float(np.abs(sig).max()), 1e-300)
    mismatch = float(np.abs(T + sig).max() / den)
    energy = 0.5 * cfg.rho * _sq(pair.H0, v) + 0.5 * cfg.C * _sq(pair.H1, disp @ G.T)
    checks = {"stress_mismatch": mismatch}
    if diag is not None and diag.selection is not None:
        ss = stick_slip(p, uv, diag.selection)
        checks["stick_velocity_ratio"] = ss["stick_velocity_ratio"]
        checks["stick_nodes"] = ss["stick_nodes"]
    return Artifacts({"displacement": disp, "velocity": v, "stress": T, "energy": energy}, checks)
