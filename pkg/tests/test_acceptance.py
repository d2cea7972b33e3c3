"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every sub-check is recorded with its measured value; the runtime budget is
part of each criterion.  A summary is printed at the end of the session.
"""

import functools
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from conftest import (
    Criterion, dense_boundary_resolvent, grid_prox_abs,
    kelvin_voigt_oracle, rel_err, wave_oracle,
)
from evoincl.apps import build_viscoelastic_friction, build_wave_impedance, postprocess
from evoincl.boundary import (
    BDRelation, BoundaryOperator, DirichletEndpoint, FrictionEndpoint, ImpedanceEndpoint,
    LinearEndpoint, ZeroEndpoint, bd_basis, build_1d_pair, bullet_G, kernel_angle,
    pairing_identity_check,
)
from evoincl.linalg import LinOp, StateSpace, adjoint
from evoincl.material import apply_d0M, identity_law, power_series_law
from evoincl.monotone import (
    AbsSubdiff, ClampNormalCone, LinearRelation, VectorAmbient, ZeroRelation, cauchy_fit,
    check_nonexpansive, identity_map, lift_pointwise, minimal_section, sandwich, yosida,
)
from evoincl.solver import EvoProblem, SolveOptions, solve
from evoincl.timegrid import (
    Signal, TimeGrid, differentiate, integrate, spectral_multiply, winner, wnorm,
)

ROOT = Path(__file__).resolve().parent.parent


def crand(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# 1 -----------------------------------------------------------------------------


def test_criterion_1_weighted_calculus():
    crit = Criterion(1, "weighted calculus", 10)
    rng = np.random.default_rng(1)
    g = TimeGrid(1.0, 1 / 128, 1024)
    S2 = StateSpace.euclidean(2)

    worst = 0.0
    for _ in range(20):
        u = Signal(g, S2, crand(rng, (g.length, 2)))
        worst = max(worst, np.abs(differentiate(integrate(u)).values - u.values).max(),
                    np.abs(integrate(differentiate(u)).values - u.values).max())
    crit.check("integrate/differentiate inverse <= 1e-12", worst <= 1e-12, worst)

    causal = True
    for k in (0, 1, 100, 511, 1023):
        v = crand(rng, (g.length, 2))
        w = v.copy()
        w[k:] += crand(rng, (g.length - k, 2))
        a = integrate(Signal(g, S2, v)).values
        b = integrate(Signal(g, S2, w)).values
        causal &= np.array_equal(a[:k], b[:k])
    crit.check("integrate causal (bitwise)", causal)

    ratio = 0.0
    for i in range(1000):
        if i % 2:
            u = Signal(g, S2, crand(rng, (g.length, 2)))
        else:
            # slowly varying in the weighted sense: close to the extremal case
            om = rng.uniform(0, 0.5, 2)
            u = Signal(g, S2, np.exp(g.nu * g.times)[:, None] * np.cos(np.outer(g.times, om)))
        ratio = max(ratio, wnorm(integrate(u)) / wnorm(u))
    crit.check("wnorm(integrate u) <= wnorm(u)/nu' on 1000 signals (half near-extremal)",
               ratio <= 1 / g.nu_prime, f"{ratio:.6f} vs {1 / g.nu_prime:.6f}")

    t = g.times
    S1 = StateSpace.euclidean(1)
    dual = 0.0
    for lo, width in ((1.0, 2.0), (0.5, 4.0), (2.0, 1.0)):
        bump = np.where((t > lo) & (t < lo + width), np.sin(np.pi * (t - lo) / width) ** 4, 0.0)
        u = Signal(g, S1, bump)
        spectral = spectral_multiply(u, g.symbol[:, None])
        dual = max(dual, np.abs(spectral.values - differentiate(u).values).max())
    crit.check("dual-path derivative <= 1e-9", dual <= 1e-9, dual)
    crit.finish()


# 2 -----------------------------------------------------------------------------

S3 = StateSpace.weighted([1.0, 2.0, 0.5])
GRID2 = TimeGrid(1.0, 1 / 16, 64)


def monotone_matrix(space, rng):
    # W^{-1}(P + K) with P >= 0 and K skew is monotone in the metric
    B = rng.standard_normal((space.dim, space.dim))
    K = rng.standard_normal((space.dim, space.dim))
    return np.linalg.solve(space.metric, B @ B.T * 0.5 + (K - K.T))


def builtin_relations(rng):
    pair = build_1d_pair(16)
    return {
        "zero": ZeroRelation(VectorAmbient(S3)),
        "linear": LinearRelation(S3, monotone_matrix(S3, rng)),
        "abs": AbsSubdiff(S3, [0.5, 1.0, 2.0]),
        "clamp": ClampNormalCone(S3, -1.0, 1.5),
        "lift(abs)": lift_pointwise(AbsSubdiff(S3, 0.8), GRID2),
        "bd(friction)": BDRelation(FrictionEndpoint([0.4, 0.9]), bd_basis(pair), GRID2),
    }


def zoom_argmin(fun, center, width, m=201, rounds=8):
    """Minimize a 2-D function on successively refined uniform grids."""
    c = np.asarray(center, dtype=float)
    for _ in range(rounds):
        xs = c[0] + np.linspace(-width, width, m)
        ys = c[1] + np.linspace(-width, width, m)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        F = fun(X, Y)
        i, j = np.unravel_index(np.argmin(F), F.shape)
        c = np.array([xs[i], ys[j]])
        width *= 8.0 / m
    return c


def test_criterion_2_resolvent_and_yosida():
    crit = Criterion(2, "resolvent and Yosida", 30)
    rng = np.random.default_rng(2)
    rels = builtin_relations(rng)

    for name, R in rels.items():
        rep = check_nonexpansive(R, n=1000, seed=3)
        crit.check(f"nonexpansive {name} (1000 pairs)", rep.worst <= 1 + 1e-9, rep.worst)

    for name, R in rels.items():
        worst = 0.0
        for lam in (0.1, 1.0, 10.0):
            for _ in range(50):
                x = R.ambient.random(rng, 3.0, real=R.real_only)
                y = R.ambient.random(rng, 3.0, real=R.real_only)
                d = R.ambient.norm(yosida(R, lam, x) - yosida(R, lam, y))
                worst = max(worst, lam * d / R.ambient.norm(x - y))
        crit.check(f"yosida 1/lam-Lipschitz {name}", worst <= 1 + 1e-9, worst)

    # minimal sections with known closed forms
    mu = np.array([0.5, 1.0, 2.0])
    w = np.real(np.diag(S3.metric))
    lams = [2.0 ** -k for k in range(40)]
    sections = {
        "identity": (identity_map(S3), lambda x: x),
        "abs": (AbsSubdiff(S3, mu), lambda x: np.where(x != 0, mu / w * x / np.where(x != 0, np.abs(x), 1), 0)),
        "clamp": (ClampNormalCone(S3, -1.0, 1.5), lambda x: np.zeros_like(x)),
    }
    for name, (R, A0) in sections.items():
        ok = True
        worst = -np.inf
        for i in range(100):
            x = R.ambient.random(rng, 2.0)
            if name == "clamp":
                x = np.clip(x.real, -1.0, 1.5) + 1j * np.clip(x.imag, -1.0, 1.5)
            if name == "abs" and i % 4 == 0:
                x[i % 3] = 0.0
            norms = [R.ambient.norm(yosida(R, lam, x)) for lam in lams]
            ok &= all(b >= a - 1e-12 * max(1.0, a) for a, b in zip(norms, norms[1:]))
            _, flag = minimal_section(R, x, lams)
            ok &= flag
            worst = max(worst, max(norms) - R.ambient.norm(A0(x)))
        crit.check(f"|A_lam x| non-decreasing, <= |A0 x| + 1e-8 ({name})", ok and worst <= 1e-8, worst)

    # grid prox oracles
    R = rels["abs"]
    err = 0.0
    for lam in (0.1, 1.0, 3.0):
        for _ in range(30):
            y = rng.standard_normal(3) * 3
            x = R.resolve(lam, y).real
            ref = [grid_prox_abs(y[i], lam * R.mu[i] / R.w[i]) for i in range(3)]
            err = max(err, np.abs(x - ref).max())
    crit.check("abs resolvent vs grid prox <= 1e-4", err <= 1e-4, err)

    R = rels["clamp"]
    xs = np.linspace(-1.0, 1.5, 250001)
    err = 0.0
    for _ in range(50):
        y = rng.standard_normal(3) * 3
        x = R.resolve(1.0, y).real
        ref = [xs[np.argmin((xs - yi) ** 2)] for yi in y]
        err = max(err, np.abs(x - ref).max())
    crit.check("clamp resolvent vs grid prox <= 1e-4", err <= 1e-4, err)

    R = rels["lift(abs)"]
    y = rng.standard_normal((GRID2.length, 3)) * 2
    x = R.resolve(0.5, y).real
    ref = np.array([[grid_prox_abs(y[k, i], 0.5 * 0.8 / w[i]) for i in range(3)]
                    for k in range(GRID2.length)])
    err = np.abs(x - ref).max()
    crit.check("lift(abs) resolvent vs grid prox <= 1e-4", err <= 1e-4, err)

    # friction endpoint: a = argmin 1/2 (a - r)^T S^{-1} (a - r) + s sum mu_i |a_i|
    ep = FrictionEndpoint([0.4, 0.9])
    err = 0.0
    for _ in range(60):
        B = rng.standard_normal((2, 2))
        S = B @ B.T + 0.3 * np.eye(2)
        Si = np.linalg.inv(S)
        r = rng.standard_normal(2) * 2
        s = rng.uniform(0.2, 3.0)
        a = ep.metric_resolve(s, S, r[None, :])[0].real

        def fun(X, Y):
            dx, dy = X - r[0], Y - r[1]
            q = Si[0, 0] * dx * dx + 2 * Si[0, 1] * dx * dy + Si[1, 1] * dy * dy
            return 0.5 * q + s * (0.4 * np.abs(X) + 0.9 * np.abs(Y))

        ref = zoom_argmin(fun, r, np.abs(r).max() + 1.0)
        err = max(err, np.abs(a - ref).max())
    crit.check("friction metric resolvent vs 2-D grid prox <= 1e-4", err <= 1e-4, err)
    crit.finish()


# 3 -----------------------------------------------------------------------------


def test_criterion_3_sandwich():
    crit = Criterion(3, "sandwich relation", 30)
    rng = np.random.default_rng(3)
    tol = 1e-8

    worst = lin_ratio = 0.0
    for d_in, d_out in ((2, 3), (3, 3), (3, 2)):
        Win = StateSpace.weighted(rng.uniform(0.5, 2, d_in))
        Wout = StateSpace.weighted(rng.uniform(0.5, 2, d_out))
        S = LinOp(Win, Wout, rng.standard_normal((d_out, d_in)))
        K = monotone_matrix(Win, rng)
        R = sandwich(S, LinearRelation(Win, K), tol=tol)
        STS = S.matrix @ K @ adjoint(S).matrix
        for _ in range(15):
            y = rng.standard_normal(d_out) + 1j * rng.standard_normal(d_out)
            mu = rng.uniform(0.1, 3.0)
            x = R.resolve(mu, y)
            ref = np.linalg.solve(np.eye(d_out) + mu * STS, y)
            worst = max(worst, np.abs(x - ref).max() / (1 + np.abs(y).max()))
            y2 = y + rng.standard_normal(d_out)
            dx = R.ambient.norm(R.resolve(mu, y2) - x)
            lin_ratio = max(lin_ratio, dx / R.ambient.norm(y2 - y))
    crit.check(f"linear closed forms <= tol {tol:g}", worst <= tol, worst)
    crit.check("nonexpansive (linear T, 45 pairs)", lin_ratio <= 1 + 1e-9, lin_ratio)

    ratio = 0.0
    r2s, skipped = [], 0
    for d in (2, 3, 4):
        S = LinOp(StateSpace.euclidean(d), StateSpace.euclidean(d + 1),
                  rng.standard_normal((d + 1, d)))
        R = sandwich(S, AbsSubdiff(StateSpace.euclidean(d), rng.uniform(0.2, 2, d)), tol=tol)
        for _ in range(20):
            y1 = rng.standard_normal(d + 1) * 2
            y2 = rng.standard_normal(d + 1) * 2
            x1, p1 = R.resolve_path(1.0, y1)
            x2, p2 = R.resolve_path(1.0, y2)
            ratio = max(ratio, np.linalg.norm(x1 - x2) / np.linalg.norm(y1 - y2))
            for p in (p1, p2):
                fit = cauchy_fit(p)
                if np.isnan(fit["r2"]):
                    skipped += 1
                else:
                    r2s.append(fit["r2"])
    crit.check("nonexpansive (abs, injective S, 60 pairs)", ratio <= 1 + 1e-9, ratio)
    crit.check("R^2 >= 0.9 on every path with >= 3 rate points",
               len(r2s) > 0 and min(r2s) >= 0.9,
               f"min {min(r2s):.4f}, median {np.median(r2s):.4f}, "
               f"{sum(r < 0.9 for r in r2s)} of {len(r2s)} fitted paths below 0.9, "
               f"{skipped} terminated in < 3 levels")
    crit.check("at least half of the paths carry a rate fit", len(r2s) >= skipped, len(r2s))
    crit.finish()


# 4 -----------------------------------------------------------------------------


def test_criterion_4_boundary_spaces():
    crit = Criterion(4, "boundary data spaces", 60)
    ns = (16, 32, 64, 128)
    pairs = {n: build_1d_pair(n) for n in ns}
    dims = [bd_basis(pairs[n], which).dim for n in ns for which in ("G", "D")]
    crit.check("dim BD(G) = dim BD(D) = 2", all(d == 2 for d in dims), dims)

    angles = [kernel_angle(bd_basis(pairs[n])) for n in ns]
    crit.check("angle to {cosh, sinh} decreasing", all(b < a for a, b in zip(angles, angles[1:])),
               [f"{a:.2e}" for a in angles])

    eps = [bullet_G(pairs[n]).unitarity_defect for n in ns]
    crit.check("unitarity defect non-increasing (1e-12 floor), eps(128) < 0.05",
               all(b <= max(a, 1e-12) for a, b in zip(eps, eps[1:])) and eps[-1] < 0.05,
               [f"{e:.1e}" for e in eps])

    grid = TimeGrid(1.0, 1 / 16, 32, 2)
    cut = list(range(1, grid.length + 1))
    eps_ = {"zero": ZeroEndpoint(), "linear": LinearEndpoint([[0.3, 0.2], [-0.2, 1.5]]),
            "friction": FrictionEndpoint(0.3), "dirichlet": DirichletEndpoint()}
    for n in ns:
        for name, ep in eps_.items():
            rep = pairing_identity_check(BoundaryOperator(pairs[n], grid, ep), n_samples=100,
                                         cutoffs=cut)
            crit.check(f"pairing identity n={n} {name} (100 pairs, every cutoff) <= 1e-6",
                       rep.worst <= 1e-6, rep.worst)
    crit.finish()


# 5 -----------------------------------------------------------------------------


def test_criterion_5_boundary_resolvent():
    crit = Criterion(5, "boundary resolvent", 120)
    rng = np.random.default_rng(5)
    grid = TimeGrid(1.0, 1 / 16, 32, 2)
    n = 32
    pair = build_1d_pair(n)
    endpoints = {"zero": ZeroEndpoint(), "linear": LinearEndpoint([[1.0, 0.3], [-0.3, 2.0]]),
                 "dirichlet": DirichletEndpoint(), "friction": FrictionEndpoint([0.3, 0.6]),
                 "impedance": ImpedanceEndpoint([0.3, 0.5, 0.2])}
    for name, ep in endpoints.items():
        A = BoundaryOperator(pair, grid, ep)
        res = bnd = 0.0
        for lam in (0.1, 1.0, 10.0):
            for _ in range(200):
                f = crand(rng, (grid.length, n + 1))
                g = crand(rng, (grid.length, n))
                if name == "friction":
                    f, g = f.real, g.real
                A.resolve_A(lam, f, g)
                res = max(res, A.last_report.residual)
                bnd = max(bnd, A.last_report.boundary_residual)
        crit.check(f"{name}: residual and boundary fixed point <= 1e-7 (600 solves)",
                   res <= 1e-7 and bnd <= 1e-7, f"{res:.1e}, {bnd:.1e}")

    for nn, N in ((16, 64), (32, 64)):
        g2 = TimeGrid(1.0, 1 / 16, N, 2)
        p2 = build_1d_pair(nn)
        err = 0.0
        for case, K in (("zero", None), ("linear", np.array([[1.0, 0.3], [-0.3, 2.0]])),
                        ("dirichlet", None)):
            ep = {"zero": ZeroEndpoint(), "dirichlet": DirichletEndpoint()}.get(case) or LinearEndpoint(K)
            A = BoundaryOperator(p2, g2, ep)
            for lam in (0.1, 1.0, 10.0):
                for _ in range(3):
                    f = crand(rng, (N, nn + 1))
                    g = crand(rng, (N, nn))
                    u, v, _ = A.resolve_A(lam, f, g)
                    ur, vr = dense_boundary_resolvent(nn, 1.0, lam, f, g, K, dirichlet=case == "dirichlet")
                    e = max(np.abs(u - ur).max(), np.abs(v - vr).max()) / max(np.abs(ur).max(), 1.0)
                    err = max(err, e)
        crit.check(f"dense monolithic oracle n={nn}, N={N} <= 1e-7", err <= 1e-7, err)
    crit.finish()


# shared solver problems ----------------------------------------------------------

GRID6 = TimeGrid(1.0, 1 / 32, 128, 2)
E1, E2, E3 = (StateSpace.euclidean(d) for d in (1, 2, 3))


def affine_law():
    # M(z) = M0 + z M1 with M0 >= 0 symmetric; the skew part sits in M1
    M0 = np.diag([1.0, 0.5, 0.0])
    M1 = np.array([[0.2, 0.4, 0.0], [-0.4, 0.3, 0.1], [0.0, -0.1, 1.0]])
    return power_series_law(E3, [M0, M1])


@functools.lru_cache(maxsize=None)
def problem(name):
    """``(problem, reference rhs, real_data, default backend)``."""
    if name == "free flow":
        p = EvoProblem(GRID6, identity_law(E2), ZeroRelation(VectorAmbient(E2)))
        f = np.column_stack([np.sin(3 * GRID6.times), np.cos(GRID6.times)])
        return p, f, False, "fb"
    if name == "scalar friction":
        p = EvoProblem(GRID6, identity_law(E1), AbsSubdiff(E1, 0.7))
        return p, (2 * GRID6.times / GRID6.horizon)[:, None], True, "dr"
    if name == "affine clamp":
        p = EvoProblem(GRID6, affine_law(), ClampNormalCone(E3, -0.3, 0.5))
        t = GRID6.times
        f = np.column_stack([np.sin(2 * t), 1 - np.cos(t), 0.5 * t])
        return p, f, False, "dr"
    if name == "wave":
        p = build_wave_impedance()
        return p, p.rhs, False, "fb"
    if name == "friction":
        p = build_viscoelastic_friction()
        return p, np.real(p.rhs), True, "dr"
    raise KeyError(name)


PROBLEMS = ("free flow", "scalar friction", "affine clamp", "wave", "friction")


@functools.lru_cache(maxsize=None)
def reference_solve(name, backend):
    p, f, _, _ = problem(name)
    return solve(p, f, {"backend": backend})


def accuracy(p, f, u, d):
    """Weighted-norm error bound credited to a solve (see the tolerance notes in README)."""
    o = SolveOptions()
    if d.path == "yosida":
        return o.tol_outer * p.wn(u.values)
    return max(d.final_residual, o.tol_inner) * p.wn(f) / p.c


def random_rhs(name, rng, slow=False):
    """Reference rhs plus noise, or plus a slowly varying ``e^{nu t}`` profile."""
    p, f, real, _ = problem(name)
    scale = np.abs(f).max()
    if slow:
        t = p.grid.times
        env = np.exp(p.grid.nu * (t - t[-1]))[:, None]
        z = env * np.cos(np.outer(t, rng.uniform(0, 0.5, f.shape[1])) + rng.uniform(0, 6.3, f.shape[1]))
    else:
        z = rng.standard_normal(f.shape) if real else crand(rng, f.shape)
    return f + 0.5 * scale * z


# 6 -----------------------------------------------------------------------------


def test_criterion_6_well_posedness():
    crit = Criterion(6, "well-posedness", 300)
    rng = np.random.default_rng(6)
    for name in PROBLEMS:
        p, f, real, backend = problem(name)
        u, d = reference_solve(name, backend)
        crit.check(f"{name}: converged ({backend}, {d.path})", d.converged, d.final_residual)

        # two initial guesses; DR also for linear problems so the guess matters
        u1, d1 = solve(p, f, {"backend": "dr"})
        z0 = rng.standard_normal(f.shape) if real else crand(rng, f.shape)
        u2, d2 = solve(p, f, {"backend": "dr"}, u0=5 * np.abs(f).max() * z0)
        dev = p.wn(u1.values - u2.values)
        tol = accuracy(p, f, u1, d1) + accuracy(p, f, u2, d2)
        crit.check(f"{name}: uniqueness from two initial guesses", dev <= tol,
                   f"{dev:.2e} <= {tol:.2e}")

        sols = []
        rhs = [random_rhs(name, rng, slow=k < 25) for k in range(51)]
        for g in rhs:
            sols.append(solve(p, g, {"backend": backend})[0].values)
        ratio = max(p.wn(sols[k + 1] - sols[k]) / p.wn(rhs[k + 1] - rhs[k]) for k in range(50))
        crit.check(f"{name}: Lipschitz ratio <= 1.05/c over 50 pairs", ratio <= 1.05 / p.c,
                   f"{ratio:.4f} vs 1/c = {1 / p.c:.4f}")
    crit.finish()


# 7 -----------------------------------------------------------------------------


def test_criterion_7_causality():
    from evoincl.material import check_H1
    from evoincl.solver import causality_check

    crit = Criterion(7, "causality", 120)
    rng = np.random.default_rng(7)
    for name in PROBLEMS:
        p, f, real, backend = problem(name)
        N = p.grid.length
        backends = [backend] + (["fb"] if name in ("scalar friction", "affine clamp") else [])
        for b in backends:
            worst = 0.0
            for a in (N // 4, N // 2):
                pert = np.zeros(f.shape, dtype=float if real else complex)
                z = rng.standard_normal(f[a:].shape) if real else crand(rng, f[a:].shape)
                pert[a:] = np.abs(f).max() * z
                worst = max(worst, causality_check(p, f, a, pert, {"backend": b}).defect)
            tol = 1e-12 if name == "free flow" else 1e-6
            crit.check(f"{name} ({b}): pre-cutoff defect <= {tol:g} * perturbation", worst <= tol,
                       worst)

    # causal positivity of d0 M: Re <d0 M u, u> on (0, a] >= c |u|^2 on (0, a]
    laws = {"identity": (identity_law(E2), GRID6), "affine": (affine_law(), GRID6),
            "1 + z^2": (power_series_law(E1, [1.0, 0.0, 1.0]), GRID6),
            "wave": (problem("wave")[0].M, problem("wave")[0].grid),
            "Kelvin-Voigt": (problem("friction")[0].M, problem("friction")[0].grid)}
    for name, (M, grid) in laws.items():
        c = check_H1(M, grid.nu, grid=grid).symbol_c_hat
        alias = np.exp(-grid.nu * grid.padded_length * grid.step)
        worst = np.inf
        for _ in range(20):
            u = Signal(grid, M.space, crand(rng, (grid.length, M.space.dim)))
            du = apply_d0M(M, u)
            for a in (grid.length // 8, grid.length // 4, grid.length // 2, grid.length):
                lhs = winner(du, u, upto=a).real
                rhs = c * wnorm(u, upto=a) ** 2
                slack = 10 * alias * wnorm(du) * wnorm(u)
                worst = min(worst, (lhs - rhs + slack) / (wnorm(u, upto=a) ** 2))
        crit.check(f"causal positivity {name} (c = {c:.3f}, aliasing slack)", worst >= 0, worst)
    crit.finish()


# 8 -----------------------------------------------------------------------------


def complementarity(p, u, d):
    """Worst violations of ``|b| <= mu`` and ``b = mu sign(a)`` on slipping nodes."""
    from evoincl.apps import stick_slip

    ss = stick_slip(p, u.values, d.selection)
    a, b = ss["trace"].real, ss["flux"].real
    mu = p.config.mu_friction
    scale = np.abs(u.values[:, : p.pair.n + 1]).max()
    cone = float(np.max(np.abs(b) - mu) / mu)
    slip = np.abs(a) > 1e-8 * scale
    sign = float(np.abs(b[slip] - mu * np.sign(a[slip])).max() / mu) if slip.any() else 0.0
    return cone, sign, ss, int(slip.sum())


def test_criterion_8_application_fidelity():
    crit = Criterion(8, "application fidelity", 180)
    p = build_wave_impedance({"alpha": 0.0})
    u, _ = solve(p, p.rhs)
    err = rel_err(u.values, wave_oracle(32, 1.0, 0.0, p.rhs, p.grid.step))
    crit.check("wave alpha=0 vs implicit Euler stepper <= 1e-4", err <= 1e-4, err)

    p = build_viscoelastic_friction({"mu_friction": 0.0})
    u, _ = solve(p, p.rhs)
    v, T = kelvin_voigt_oracle(32, 1.0, 1.0, 1.0, 0.5, p.rhs[:, :33], p.grid.step)
    err = max(rel_err(u.values[:, :33], v), rel_err(-u.values[:, 33:], T))
    crit.check("friction mu=0 vs Kelvin-Voigt stepper <= 1e-3", err <= 1e-3, err)

    for backend in ("dr", "fb"):
        p = problem("friction")[0]
        u, d = reference_solve("friction", backend)
        cone, sign, ss, nslip = complementarity(p, u, d)
        tol = 1e-6
        crit.check(f"stick-slip ({backend}): |b| <= mu at every node", cone <= tol, cone)
        crit.check(f"stick-slip ({backend}): b = mu sign(a) on {nslip} slipping nodes", sign <= tol, sign)
        crit.check(f"stick-slip ({backend}): {ss['stick_nodes']} stick nodes at rest",
                   ss["stick_nodes"] > 0 and ss["stick_velocity_ratio"] <= tol,
                   ss["stick_velocity_ratio"])
        E = postprocess(p, u, d).series["energy"]
        after = p.grid.times > p.config.forcing.t_end
        inc = float(np.diff(E[after]).max() / E.max())
        crit.check(f"friction energy non-increasing after forcing ({backend})", inc <= 1e-12, inc)

    for alpha in (0.0, 0.5):
        p = build_wave_impedance({"alpha": alpha})
        u, d = solve(p, p.rhs)
        E = postprocess(p, u, d).series["energy"]
        after = p.grid.times > p.config.forcing.t_end
        inc = float(np.diff(E[after]).max() / E.max())
        crit.check(f"wave energy non-increasing after forcing (alpha={alpha})", inc <= 1e-12, inc)
    crit.finish()


# 9 -----------------------------------------------------------------------------


def test_criterion_9_cross_backend():
    crit = Criterion(9, "forward-backward vs Douglas-Rachford", 180)
    for name in PROBLEMS:
        p, f, _, _ = problem(name)
        u1, d1 = reference_solve(name, "fb")
        u2, d2 = reference_solve(name, "dr")
        dev = p.wn(u1.values - u2.values)
        tol = 10 * (accuracy(p, f, u1, d1) + accuracy(p, f, u2, d2))
        crit.check(f"{name}: |u_fb - u_dr| <= 10x tolerance ({d1.path} vs {d2.path})", dev <= tol,
                   f"{dev:.2e} <= {tol:.2e}")
    p = build_wave_impedance({"coeffs": [0.0, 0.5, 0.1], "n": 16, "N": 64})
    u1, d1 = solve(p, p.rhs)
    u2, d2 = solve(p, p.rhs, {"backend": "dr"})
    dev = p.wn(u1.values - u2.values)
    tol = 10 * (accuracy(p, p.rhs, u1, d1) + accuracy(p, p.rhs, u2, d2))
    crit.check(f"nonlocal impedance wave: |u_fb - u_dr| <= 10x tolerance ({d1.path})", dev <= tol,
               f"{dev:.2e} <= {tol:.2e}")
    crit.finish()


# 10 ----------------------------------------------------------------------------


def run_cli(args, out, threads):
    env = {**os.environ, "EVO_THREADS": str(threads)}
    cmd = [sys.executable, "-m", "evoincl", *args, "--out", str(out)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True, cwd=ROOT)


def tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path):
    crit = Criterion(10, "determinism", 600)
    runs = {
        "solve free_flow": ["solve", "--config", str(ROOT / "configs" / "free_flow.json")],
        "solve scalar_friction (dr)": ["solve", "--config", str(ROOT / "configs" / "scalar_friction.json"),
                                       "--backend", "dr"],
        "demo wave": ["demo", "wave"],
        "demo friction (dr)": ["demo", "friction", "--backend", "dr"],
        "verify scalar_friction (dr)": ["verify", "--config",
                                        str(ROOT / "configs" / "scalar_friction.json"), "--backend", "dr"],
    }
    for i, (name, args) in enumerate(runs.items()):
        outs = []
        for j, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{i}-{j}"
            r = run_cli(args, out, threads)
            # stdout echoes the output directory passed in
            outs.append((r.returncode, r.stdout.replace(str(out), "<out>"), tree(out)))
        same = all(o == outs[0] for o in outs[1:])
        crit.check(f"{name}: exit {outs[0][0]}, byte-identical over 3 runs (EVO_THREADS 1, 1, 4)",
                   outs[0][0] == 0 and same and len(outs[0][2]) > 0, f"{len(outs[0][2])} files")
    crit.finish()
