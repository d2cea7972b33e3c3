"""Independent oracles shared by the test modules.

Nothing here calls into the package's solvers: matrices are assembled from
scratch and time stepping is done by explicit recursions.
"""

import time

import numpy as np
import pytest

# acceptance outcomes, filled by tests/test_acceptance.py
ACCEPTANCE = {}


class Criterion:
    """Collects named sub-checks of one acceptance criterion and its runtime."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.checks = []
        self.start = time.perf_counter()

    def check(self, name, ok, value=None):
        self.checks.append((name, bool(ok), value))
        return bool(ok)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        self.check(f"runtime {elapsed:.1f}s < {self.budget}s", elapsed < self.budget)
        failed = [c for c in self.checks if not c[1]]
        line = f"criterion {self.number:2d} {'PASS' if not failed else 'FAIL'}  {self.title} ({elapsed:.1f}s)"
        ACCEPTANCE[self.number] = (line, failed)
        print(line)
        for name, ok, value in self.checks:
            print(f"    {'ok ' if ok else 'BAD'} {name}" + ("" if value is None else f": {value}"))
        assert not failed, "; ".join(f"{n} ({v})" for n, _, v in failed)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    den = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / den)


def grid_prox_abs(y, t, width=None, m=400001):
    """``argmin_x 0.5 (x - y)^2 + t |x|`` by brute force on a uniform grid."""
    width = width or (abs(y) + t + 1.0)
    xs = np.linspace(-width, width, m)
    return float(xs[np.argmin(0.5 * (xs - y) ** 2 + t * np.abs(xs))])


def euler_prox_scalar(f, h, mu):
    """``(u_k - u_{k-1})/h + d(mu|.|)(u_k) ∋ f_k`` solved node by node."""
    u = np.zeros(len(f))
    prev = 0.0
    for k, fk in enumerate(f):
        y = prev + h * fk
        prev = np.sign(y) * max(abs(y) - h * mu, 0.0)
        u[k] = prev
    return u


def euler_linear(A, F, h):
    """Backward Euler for ``x' + A x = F`` with ``x_0 = 0``; ``F`` has shape ``(N, d)``."""
    d = A.shape[0]
    lhs = np.eye(d) / h + A
    x = np.zeros(d, dtype=complex)
    out = np.zeros((len(F), d), dtype=complex)
    for k in range(len(F)):
        x = np.linalg.solve(lhs, F[k] + x / h)
        out[k] = x
    return out


def staggered(n, L):
    """Forward difference, trapezoid weights and the zero-flux divergence."""
    dx = L / n
    w0 = np.full(n + 1, dx)
    w0[[0, -1]] = dx / 2
    G = np.zeros((n, n + 1))
    for i in range(n):
        G[i, i], G[i, i + 1] = -1 / dx, 1 / dx
    Dn = -(G.T * dx) / w0[:, None]
    return G, Dn, w0


def wave_oracle(n, L, alpha, F, h):
    """Staggered wave system ``u' + D q = F_u``, ``q' + G u = 0``.

    The boundary flux obeys ``-beta_0 = alpha u_0`` and ``beta_n = alpha u_n``.
    """
    G, Dn, w0 = staggered(n, L)
    d = 2 * n + 1
    A = np.zeros((d, d))
    A[: n + 1, n + 1 :] = Dn
    A[n + 1 :, : n + 1] = G
    A[0, 0] += alpha / w0[0]
    A[n, n] += alpha / w0[-1]
    return euler_linear(A, F, h)


def kelvin_voigt_oracle(n, L, rho, C, Dv, f, h, clamped=False):
    """Kelvin-Voigt bar by implicit Euler, traction-free or clamped at both ends.

    ``rho (v_k - v_{k-1})/h = Dn T_k + f_k`` with ``T = C G u + Dv G v`` and
    ``u_k = u_{k-1} + h v_k``.  Clamped ends keep ``v = 0`` there.
    Returns ``(v, T)``.
    """
    G, Dn, _ = staggered(n, L)
    K = Dn @ G
    lhs = rho / h * np.eye(n + 1) - (C * h + Dv) * K
    free = np.arange(1, n) if clamped else np.arange(n + 1)
    sub = lhs[np.ix_(free, free)]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    vs, Ts = [], []
    for fk in np.real(f):
        r = rho * v / h + C * K @ u + fk
        v = np.zeros(n + 1)
        v[free] = np.linalg.solve(sub, r[free])
        u = u + h * v
        vs.append(v)
        Ts.append(C * G @ u + Dv * G @ v)
    return np.array(vs), np.array(Ts)


def dense_boundary_resolvent(n, L, lam, f, g, K=None, dirichlet=False):
    """Per-node monolithic solve of ``(u, v) + lam A (u, v) = (f, g)``.

    The boundary is either a static flux law ``(-beta_0, beta_n) = K (u_0, u_n)``
    (``K = 0`` is zero flux) or Dirichlet ``u_0 = u_n = 0`` with free flux.
    """
    G, Dn, w0 = staggered(n, L)
    d = 2 * n + 1
    A = np.zeros((d, d), dtype=complex)
    A[: n + 1, n + 1 :] = Dn
    A[n + 1 :, : n + 1] = G
    rhs = np.concatenate([f, g], axis=1).T
    if not dirichlet:
        K = np.zeros((2, 2)) if K is None else np.asarray(K)
        # beta = (-b_0, b_n) enters node rows as -beta_0/w0_0 and beta_n/w0_n
        B = np.zeros((n + 1, n + 1), dtype=complex)
        ends = [0, n]
        for i, r in enumerate(ends):
            for j, c in enumerate(ends):
                B[r, c] = K[i, j] / w0[r]
        A[: n + 1, : n + 1] = B
        x = np.linalg.solve(np.eye(d) + lam * A, rhs).T
        return x[:, : n + 1], x[:, n + 1 :]
    # drop the boundary node unknowns and equations; their fluxes are free
    keep = [i for i in range(d) if i not in (0, n)]
    M = (np.eye(d) + lam * A)[np.ix_(keep, keep)]
    x = np.zeros((d, rhs.shape[1]), dtype=complex)
    x[keep] = np.linalg.solve(M, rhs[keep])
    x = x.T
    return x[:, : n + 1], x[:, n + 1 :]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        line, failed = ACCEPTANCE[k]
        terminalreporter.write_line(line)
        for name, _, value in failed:
            terminalreporter.write_line(f"    failed: {name}" + ("" if value is None else f" ({value})"))
