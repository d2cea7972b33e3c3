"""Discrete exponentially weighted time axis.

Signals live on ``t_k = k*h`` for ``k = 1..N`` and vanish for ``t <= 0``.
The weighted inner product uses ``w_k = h*exp(-2*nu*t_k)``.  The causal
pair ``integrate`` / ``differentiate`` (left-rectangle sum / backward
difference) are exact inverses of each other, and the backward difference
is diagonalized by a zero-padded DFT of the damped sequence
``exp(-nu*t_k)*u_k`` with symbol ``delta_j = (1 - exp(-(nu + i*theta_j)*h))/h``.
"""

import csv
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft

from .linalg import StateSpace

WRAP_BUDGET = 1e-10


class GridMismatch(ValueError):
    """Raised when two signals do not share grid and state space."""


def num_workers():
    """Worker count for FFTs, capped by the ``EVO_THREADS`` variable."""
    try:
        n = int(os.environ.get("EVO_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform causal grid on ``(0, N*h]`` with exponential weight ``nu``.

    Parameters
    ----------
    nu : float
        Exponential weight (``nu > 0``).
    step : float
        Time step ``h``; ``nu*h < 0.5`` is required.
    length : int
        Number of nodes ``N``.
    pad : int
        Zero-padding exponent; transforms act on ``N*2**pad`` samples.
    """

    nu: float
    step: float
    length: int
    pad: int = 1

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.length < 1:
            raise ValueError("length must be positive")
        if self.pad < 0:
            raise ValueError("pad must be non-negative")
        if self.nu * self.step >= 0.5:
            raise ValueError("nu*step must be below 0.5")

    @classmethod
    def from_horizon(cls, nu, T, N, pad=1):
        return cls(float(nu), float(T) / N, int(N), int(pad))

    @property
    def horizon(self):
        return self.step * self.length

    @cached_property
    def times(self):
        return self.step * np.arange(1, self.length + 1)

    @cached_property
    def weights(self):
        return self.step * np.exp(-2.0 * self.nu * self.times)

    @property
    def nu_prime(self):
        """Discrete accretivity constant ``(1 - exp(-2 nu h))/(2h)``."""
        return -np.expm1(-2.0 * self.nu * self.step) / (2.0 * self.step)

    @property
    def padded_length(self):
        return self.length * 2 ** self.pad

    @cached_property
    def theta(self):
        M = self.padded_length
        return 2.0 * np.pi * np.arange(M) / (M * self.step)

    @cached_property
    def symbol(self):
        """Backward-difference symbol ``delta_j`` on the padded window."""
        h = self.step
        return -np.expm1(-(self.nu + 1j * self.theta) * h) / h

    @cached_property
    def symbol_points(self):
        """Material-law evaluation points ``z_j = 1/delta_j``."""
        return 1.0 / self.symbol

    def index_of(self, a):
        """Number of nodes with ``t_k <= a``."""
        return int(np.searchsorted(self.times, a + 1e-9 * self.step, side="right"))


@dataclass(frozen=True, eq=False)
class Signal:
    """Trajectory of state vectors on a :class:`TimeGrid`.

    ``values`` has shape ``(N, dim)``; the signal is zero for ``t <= 0``.
    ``wrap_warning`` is set by spectral operations whose output leaks into
    the tail of the padded window.
    """

    grid: TimeGrid
    space: StateSpace
    values: np.ndarray
    wrap_warning: bool = field(default=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.ndim == 1 and self.space.dim == 1:
            v = v[:, None]
        if v.shape != (self.grid.length, self.space.dim):
            raise ValueError(
                f"values shape {v.shape} != ({self.grid.length}, {self.space.dim})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid, space):
        return cls(grid, space, np.zeros((grid.length, space.dim)))

    @classmethod
    def from_function(cls, grid, space, fn):
        return cls(grid, space, np.array([fn(t) for t in grid.times]).reshape(grid.length, -1))

    def like(self, values, wrap_warning=False):
        return Signal(self.grid, self.space, values, wrap_warning)

    def __add__(self, other):
        _check(self, other)
        return self.like(self.values + other.values, self.wrap_warning or other.wrap_warning)

    def __sub__(self, other):
        _check(self, other)
        return self.like(self.values - other.values, self.wrap_warning or other.wrap_warning)

    def __mul__(self, c):
        return self.like(c * self.values, self.wrap_warning)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values, self.wrap_warning)


def _check(u, v):
    if u.grid != v.grid or not u.space.compatible(v.space):
        raise GridMismatch("signals live on different grids or spaces")


def pointwise_inner(u, v):
    """Per-node inner products ``<u_k|v_k>`` in the state metric."""
    _check(u, v)
    return u.space.inner(u.values, v.values)


def winner(u, v, upto=None):
    """Weighted inner product ``sum_k w_k <u_k|v_k>``.

    Parameters
    ----------
    upto : int, optional
        Restrict the sum to the first ``upto`` nodes.
    """
    p = pointwise_inner(u, v)
    w = u.grid.weights
    if upto is not None:
        p = p[:upto]
        w = w[:upto]
    return complex(np.sum(w * p))


def wnorm(u, upto=None):
    return float(np.sqrt(max(winner(u, u, upto).real, 0.0)))


def shift(u, j):
    """Translation ``(shift(u, j))_k = u_{k+j}`` with zero fill."""
    N = u.grid.length
    out = np.zeros_like(u.values)
    if j >= 0:
        if j < N:
            out[: N - j] = u.values[j:]
    else:
        if -j < N:
            out[-j:] = u.values[: N + j]
    return u.like(out, u.wrap_warning)


def cutoff(u, a):
    """Keep values at ``t_k <= a``, zero elsewhere."""
    m = u.grid.index_of(a)
    out = np.zeros_like(u.values)
    out[:m] = u.values[:m]
    return u.like(out, u.wrap_warning)


def integrate(u):
    """Causal left-rectangle antiderivative ``h * cumsum(u)``."""
    return u.like(u.grid.step * np.cumsum(u.values, axis=0), u.wrap_warning)


def differentiate(u):
    """Backward difference ``(u_k - u_{k-1})/h`` with ``u_0 = 0``."""
    d = np.diff(u.values, axis=0, prepend=np.zeros((1, u.space.dim)))
    return u.like(d / u.grid.step, u.wrap_warning)


@dataclass(frozen=True, eq=False)
class SpectralSignal:
    """DFT coefficients of the damped, zero-padded sequence.

    ``coeffs`` has shape ``(N * 2**pad, dim)``; bin ``j`` carries the symbol
    ``grid.symbol[j]``.
    """

    grid: TimeGrid
    space: StateSpace
    coeffs: np.ndarray


def _phase(grid):
    M = grid.padded_length
    return np.exp(-2j * np.pi * np.arange(M) / M)


def damp(grid, values):
    """Padded damped sequence ``exp(-nu t_k) u_k`` of length ``N*2**pad``."""
    M = grid.padded_length
    x = np.zeros((M, values.shape[1]), dtype=complex)
    x[: grid.length] = np.exp(-grid.nu * grid.times)[:, None] * values
    return x


def fourier_laplace(u):
    """Forward transform ``X_j = M^{-1/2} sum_k x_k exp(-2 pi i j k / M)``."""
    x = damp(u.grid, u.values)
    X = scipy.fft.fft(x, axis=0, norm="ortho", workers=num_workers())
    X *= _phase(u.grid)[:, None]
    return SpectralSignal(u.grid, u.space, X)


def inverse_padded(grid, coeffs):
    """Undamped inverse transform on the full padded window."""
    X = coeffs * np.conj(_phase(grid))[:, None]
    x = scipy.fft.ifft(X, axis=0, norm="ortho", workers=num_workers())
    return x


def wrap_fraction(grid, x):
    """Fraction of damped mass in the last quarter of the padded window."""
    mass = np.sum(np.abs(x) ** 2, axis=1)
    total = mass.sum()
    if total == 0:
        return 0.0
    M = grid.padded_length
    return float(mass[M - M // 4 :].sum() / total)


def inverse_fourier_laplace(U):
    """Inverse of :func:`fourier_laplace`, restricted to the causal window.

    The returned signal has ``wrap_warning`` set when more than
    ``WRAP_BUDGET`` of the damped mass sits in the last quarter of the
    padded window.
    """
    grid = U.grid
    x = inverse_padded(grid, U.coeffs)
    flag = wrap_fraction(grid, x) > WRAP_BUDGET
    vals = np.exp(grid.nu * grid.times)[:, None] * x[: grid.length]
    return Signal(grid, U.space, vals, flag)


def spectral_multiply(u, symbols):
    """Apply per-bin matrices ``symbols[j]`` (shape ``(M, d, d)`` or ``(M, d)``)."""
    U = fourier_laplace(u)
    if symbols.ndim == 2:
        V = symbols * U.coeffs
    else:
        V = np.einsum("jab,jb->ja", symbols, U.coeffs)
    return inverse_fourier_laplace(SpectralSignal(u.grid, u.space, V))


def write_signal_csv(path, u):
    """Write ``t,re_0,im_0,...`` rows with round-trip precision."""
    N, d = u.values.shape
    header = ["t"]
    for i in range(d):
        header += [f"re_{i}", f"im_{i}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(u.grid.times, u.values):
            cells = [repr(float(t))]
            for z in row:
                cells += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(cells)


def read_signal_csv(path, grid, space=None):
    """Read a signal written by :func:`write_signal_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "t" or (len(header) - 1) % 2:
        raise ValueError("malformed signal CSV header")
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    if data.shape[0] != grid.length:
        raise ValueError("row count does not match grid length")
    vals = data[:, 1::2] + 1j * data[:, 2::2]
    if space is None:
        space = StateSpace.euclidean(vals.shape[1])
    return Signal(grid, space, vals)
