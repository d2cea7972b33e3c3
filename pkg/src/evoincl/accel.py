"""Safeguarded Anderson mixing for fixed-point and root-finding iterations."""

from dataclasses import dataclass

import numpy as np


@dataclass
class FixedPointResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list


def _real(z):
    z = np.asarray(z).ravel()
    return np.concatenate([z.real, z.imag])


def anderson_root(F, x0, beta, norm, tol, maxiter, memory=8, weight=None, stop=None):
    """Find a root of ``F`` by Anderson-accelerated damped steps ``x - beta F(x)``.

    Parameters
    ----------
    F : callable
        Residual map on arrays of the shape of ``x0``.
    beta : float
        Damping of the plain step.
    norm : callable
        Norm used for the stopping test and for accepting extrapolated steps.
    tol : float
        Stop once ``stop(x, F(x))`` (default ``norm(F(x))``) is ``<= tol``.
    memory : int
        Number of stored differences; ``0`` gives the plain damped iteration.
    weight : callable, optional
        Map applied to residuals before the least-squares solve.

    Notes
    -----
    Differences of ``F`` are formed from directly evaluated residuals, so
    the mixing stays accurate when ``beta`` is tiny.  An extrapolated
    iterate is kept only if its residual does not exceed the current one;
    otherwise the history is cleared and the plain step is taken.
    """
    x = np.array(x0, dtype=complex)
    wt = weight if weight is not None else (lambda r: r)
    measure = stop if stop is not None else (lambda x, f: norm(f))
    f = F(x)
    res = measure(x, f)
    hist = [res]
    dX, dF = [], []
    it = 0
    while res > tol and it < maxiter:
        it += 1
        plain = x - beta * f
        if memory > 0 and dF:
            # real coefficients: F is in general only real-linearizable
            A = np.stack([_real(wt(d)) for d in dF], axis=1)
            coef, *_ = np.linalg.lstsq(A, _real(wt(f)), rcond=None)
            x_new = plain - sum(c * (a - beta * b) for c, a, b in zip(coef, dX, dF))
            f_new = F(x_new)
            r_new = measure(x_new, f_new)
            if not r_new <= res:
                dX.clear()
                dF.clear()
                x_new = plain
                f_new = F(x_new)
                r_new = measure(x_new, f_new)
        else:
            x_new = plain
            f_new = F(x_new)
            r_new = measure(x_new, f_new)
        if memory > 0:
            dX.append(x_new - x)
            dF.append(f_new - f)
            if len(dF) > memory:
                dX.pop(0)
                dF.pop(0)
        x, f, res = x_new, f_new, r_new
        hist.append(res)
    return FixedPointResult(x, it, res, res <= tol, hist)


def anderson(G, x0, norm, tol, maxiter, memory=8, weight=None):
    """Accelerated fixed-point iteration ``x <- G(x)``; stops on ``norm(G(x) - x) <= tol``."""
    return anderson_root(lambda x: x - G(x), x0, 1.0, norm, tol, maxiter, memory, weight)


def newton_fd(F, x0, norm, tol, maxiter=50, step=1e-7):
    """Damped Newton on the real form of ``F`` with a forward-difference Jacobian.

    Intended for small, piecewise-smooth systems where first-order mixing
    stalls; a backtracking line search on ``norm(F)`` keeps it monotone.
    """
    x = np.array(x0, dtype=complex)
    shape = x.shape
    n = x.size
    f = F(x)
    res = norm(f)
    hist = [res]
    it = 0
    while res > tol and it < maxiter:
        it += 1
        h = step * (1.0 + np.abs(x).max())
        J = np.empty((2 * n, 2 * n))
        for k in range(2 * n):
            e = np.zeros(n, dtype=complex)
            e[k % n] = h if k < n else 1j * h
            J[:, k] = (_real(F(x + e.reshape(shape))) - _real(f)) / h
        try:
            d = np.linalg.lstsq(J, -_real(f), rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        dx = (d[:n] + 1j * d[n:]).reshape(shape)
        t = 1.0
        while t > 1e-10:
            xt = x + t * dx
            ft = F(xt)
            rt = norm(ft)
            if rt <= (1 - 1e-4 * t) * res:
                break
            t *= 0.5
        else:
            break
        x, f, res = xt, ft, rt
        hist.append(res)
    return FixedPointResult(x, it, res, res <= tol, hist)
