"""Periodic grid on the circle and the covariant operators built on it.

Fields are numpy arrays whose leading axis runs over the N grid points.
Fiber slots are trailing axes of length 3; the single base slot carries no
axis (coordinate component along d/dx) and is only tracked for the
Christoffel correction.
"""

from dataclasses import dataclass

import numpy as np

from .algebra import ad_matrix
from .errors import DomainError


@dataclass(frozen=True)
class Grid:
    N: int
    L: float = 2 * np.pi
    method: str = "fd4"  # or "spectral"

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("Grid needs N >= 16")
        if self.L <= 0:
            raise ValueError("Grid length L must be > 0")
        if self.method not in ("fd4", "spectral"):
            raise ValueError(f"unknown derivative method {self.method!r}")

    @property
    def dx(self):
        return self.L / self.N

    @property
    def x(self):
        return np.arange(self.N) * self.dx

    def wavenumbers(self):
        return 2 * np.pi * np.fft.rfftfreq(self.N, d=self.dx)


def _wrap(f):
    """Two ghost points on each side from periodicity; w[i + 2] = f[i]."""
    return np.concatenate((f[-2:], f, f[:2]), axis=0)


def deriv(f, grid):
    """d/dx of every component, 4th-order centered (or spectral) on the periodic grid."""
    f = np.asarray(f, dtype=float)
    if grid.method == "spectral":
        k = grid.wavenumbers()
        if grid.N % 2 == 0:
            k = k.copy()
            k[-1] = 0.0
        fh = np.fft.rfft(f, axis=0)
        return np.fft.irfft(1j * k.reshape((-1,) + (1,) * (f.ndim - 1)) * fh, n=grid.N, axis=0)
    w = _wrap(f)
    return (8.0 * (w[3:-1] - w[1:-3]) - (w[4:] - w[:-4])) / (12.0 * grid.dx)


def deriv2(f, grid):
    """Compact 5-point second derivative; damps the grid-scale mode unlike deriv(deriv(f))."""
    f = np.asarray(f, dtype=float)
    if grid.method == "spectral":
        k = grid.wavenumbers()
        fh = np.fft.rfft(f, axis=0)
        return np.fft.irfft(-(k**2).reshape((-1,) + (1,) * (f.ndim - 1)) * fh, n=grid.N, axis=0)
    w = _wrap(f)
    return (16.0 * (w[3:-1] + w[1:-3]) - (w[4:] + w[:-4]) - 30.0 * f) / (12.0 * grid.dx**2)


def ad_sym(X, A):
    """Action of ad on a bilinear form in both fiber slots: A^T X + X A."""
    return np.swapaxes(A, -1, -2) @ X + X @ A


def christoffel(g, grid):
    """1-dim Levi-Civita symbol Gamma = g'/(2g)."""
    return 0.5 * deriv(g, grid) / g


def covariant_deriv_G(G, a, L, grid):
    """(D_x G)_{ij} = dG_{ij}/dx - a^k C^p_{ki} G_{pj} - a^k C^p_{kj} G_{ip}."""
    return deriv(G, grid) - ad_sym(G, ad_matrix(L, a))


def covariant_deriv_tensor(T, signature, a, g, L, grid):
    """Covariant x-derivative of a tensor field with slot signature like ``"xff"``.

    ``'f'`` marks a fiber slot (one trailing axis of length 3, in order),
    ``'x'`` a base slot (no axis).  Fiber slots get ``-ad_a``, each base slot
    gets ``-Gamma``.
    """
    T = np.asarray(T, dtype=float)
    n_fiber = signature.count("f")
    n_base = signature.count("x")
    if len(signature) != n_fiber + n_base:
        raise ValueError(f"bad slot signature {signature!r}")
    if T.ndim != 1 + n_fiber or T.shape[0] != grid.N:
        raise ValueError("tensor shape does not match grid and slot signature")
    if np.shape(g) != (grid.N,) or np.shape(a) != (grid.N, 3):
        raise ValueError("mismatched grid lengths")
    out = deriv(T, grid)
    A = ad_matrix(L, a)
    for axis in range(1, n_fiber + 1):
        # sum_p A[p, i] T[..., p (at axis), ...]
        moved = np.moveaxis(T, axis, -1)
        contracted = np.einsum("n...p,npi->n...i", moved, A)
        out = out - np.moveaxis(contracted, -1, axis)
    if n_base:
        gam = christoffel(np.asarray(g, dtype=float), grid)
        out = out - n_base * gam.reshape((-1,) + (1,) * n_fiber) * T
    return out


def laplace_beltrami(f, g, grid):
    """Delta f = g^{-1} f'' - g'/(2 g^2) f', evaluated in divergence form g^{-1/2}(g^{-1/2} f')'.

    The divergence form makes sum(Delta f * sqrt(g)) vanish to rounding and keeps
    discrete integration by parts exact.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise DomainError("base metric g must be positive")
    rg = np.sqrt(g)
    return deriv(deriv(f, grid) / rg, grid) / rg


def integrate(f, g, grid):
    """sum_i f(x_i) sqrt(g(x_i)) dx."""
    return float(np.sum(np.asarray(f, dtype=float) * np.sqrt(g)) * grid.dx)
