"""Grids, midpoint quadrature, uniform Fourier sums, weighted histograms and
log-log decay fits.

Every momentum integral in the package is a midpoint sum over a symmetric
Cartesian grid with nodes ``j*h`` for ``j = -n..n`` on each axis.  Sums are
taken after pairing every node with its mirror image, so reflecting the
integrand leaves the result bit-for-bit unchanged.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class InsufficientDataError(ValueError):
    """Raised when a fit window holds too few usable samples."""


@dataclass(frozen=True)
class MomentumGrid:
    """Symmetric uniform grid on ``[-Kmax, Kmax]^d`` with ``M`` (odd) nodes per axis."""

    d: int
    Kmax: float
    M: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.M < 1 or self.M % 2 == 0:
            raise ValueError(f"points per axis must be odd and positive, got {self.M}")
        if self.Kmax < 0:
            raise ValueError("Kmax must be nonnegative")

    @property
    def n(self) -> int:
        return (self.M - 1) // 2

    @property
    def h(self) -> float:
        return 2.0 * self.Kmax / (self.M - 1) if self.M > 1 else 0.0

    @property
    def weight(self) -> float:
        return self.h ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def size(self) -> int:
        return self.M ** self.d

    @property
    def axis(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1) * self.h

    def index_vectors(self) -> np.ndarray:
        """Integer coordinates of all nodes, lexicographic order, shape (M^d, d)."""
        ax = np.arange(-self.n, self.n + 1)
        return np.array(list(itertools.product(ax, repeat=self.d)), dtype=np.int64).reshape(-1, self.d)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (M^d, d)."""
        return self.index_vectors() * self.h

    def mirror(self) -> np.ndarray:
        """Permutation taking the flat index of p to the flat index of -p."""
        return np.arange(self.size)[::-1]

    def refined(self, factor: int = 2) -> "MomentumGrid":
        return MomentumGrid(self.d, self.Kmax, factor * (self.M - 1) + 1)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    J: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.J < 0:
            raise ValueError("sample count must be nonnegative")

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.J + 1) * self.dt

    @property
    def T(self) -> float:
        return self.J * self.dt


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    window: tuple[float, float]
    residual: float
    n_samples: int = 0

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept,
                "window": list(self.window), "residual": self.residual,
                "n_samples": self.n_samples}


def mirror_sum(values: np.ndarray, axes: tuple[int, ...] | None = None) -> np.ndarray:
    """Sum over ``axes`` after pairing each entry with its reflection.

    ``v + flip(v)`` is exactly reflection invariant, so the result does not
    depend on the orientation of the input.
    """
    v = np.asarray(values)
    if axes is None:
        axes = tuple(range(v.ndim))
    paired = v + np.flip(v, axis=axes)
    return 0.5 * paired.sum(axis=axes)


def quad_sum(values, grid: MomentumGrid):
    """Midpoint rule ``h^d * sum(values)`` over all grid nodes.

    ``values`` may be flat (length M^d) or shaped ``grid.shape``; extra
    leading axes are kept (one integral per leading index).
    """
    v = np.asarray(values)
    if v.shape[-1:] == (grid.size,) and grid.d > 1:
        v = v.reshape(v.shape[:-1] + grid.shape)
    elif v.shape[-grid.d:] != grid.shape:
        raise ValueError(f"values of shape {v.shape} do not live on grid {grid.shape}")
    axes = tuple(range(v.ndim - grid.d, v.ndim))
    return grid.weight * mirror_sum(v, axes)


def dual_axis(N: int, spacing: float) -> np.ndarray:
    """Sample positions ``(j - N//2) * spacing`` used by :func:`uniform_dft`."""
    return (np.arange(N) - N // 2) * spacing


def dual_spacing(N: int, spacing: float) -> float:
    return 2.0 * np.pi / (N * spacing)


def uniform_dft(samples, spacing: float, sign: int, axis: int = -1) -> np.ndarray:
    """Riemann sum of ``int exp(sign*i*tau*t) F(tau) dtau`` on the dual grid.

    Input sample ``j`` sits at ``tau_j = (j - N//2)*spacing``; output sample
    ``m`` sits at ``t_m = (m - N//2)*2*pi/(N*spacing)``.  Applying the
    transform with ``sign=-1`` and then ``sign=+1`` (with the dual spacing)
    returns ``2*pi`` times the input.
    """
    F = np.asarray(samples, dtype=complex)
    if F.shape[axis] == 0:
        raise ValueError("uniform_dft needs at least one sample")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    N = F.shape[axis]
    shifted = np.fft.ifftshift(F, axes=axis)
    if sign < 0:
        out = np.fft.fft(shifted, axis=axis)
    else:
        out = np.fft.ifft(shifted, axis=axis) * N
    return spacing * np.fft.fftshift(out, axes=axis)


@dataclass
class HistTable:
    """Binned density: ``values[m]`` approximates the density at ``centers[m]``."""

    centers: np.ndarray
    values: np.ndarray
    du: float
    counts: np.ndarray
    dropped: int = 0
    dropped_weight: float = 0.0
    extra: dict = field(default_factory=dict)

    def interp(self, u):
        return np.interp(u, self.centers, self.values, left=np.nan, right=np.nan)


def histogram_weighted(u, w, du: float, umax: float) -> HistTable:
    """Weighted histogram on bins centred at ``m*du`` with ``|m*du| <= umax``.

    Each bin stores (sum of weights in the bin) / du.  Samples beyond the
    outermost bin are dropped and counted.  Bin assignment uses round-half-even,
    which is odd under ``u -> -u``, so mirrored samples land in mirrored bins.
    """
    if not du > 0:
        raise ValueError("bin width must be positive")
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if u.shape != w.shape:
        raise ValueError("samples and weights differ in length")
    mb = int(np.floor(umax / du + 1e-9))
    idx = np.rint(u / du).astype(np.int64)
    inside = np.abs(idx) <= mb
    nb = 2 * mb + 1
    pos = idx[inside] + mb
    sums = np.bincount(pos, weights=w[inside], minlength=nb)
    counts = np.bincount(pos, minlength=nb)
    centers = np.arange(-mb, mb + 1) * du
    return HistTable(centers=centers, values=sums / du, du=du, counts=counts,
                     dropped=int(np.count_nonzero(~inside)),
                     dropped_weight=float(np.abs(w[~inside]).sum()))


def fit_decay(t, y, window: tuple[float, float] | None = None, min_samples: int = 5) -> DecayFit:
    """Least-squares slope of ``log y`` against ``log t`` inside ``window``."""
    t = np.asarray(t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if window is None:
        window = (float(t.min()), float(t.max()))
    lo, hi = window
    if not lo < hi:
        raise ValueError("empty fit window")
    sel = (t >= lo) & (t <= hi) & (t > 0) & (y > 0) & np.isfinite(y)
    if np.count_nonzero(sel) < min_samples:
        raise InsufficientDataError(
            f"{np.count_nonzero(sel)} usable samples in [{lo}, {hi}], need {min_samples}")
    x = np.log(t[sel])
    z = np.log(y[sel])
    slope, intercept = np.polyfit(x, z, 1)
    res = z - (slope * x + intercept)
    return DecayFit(float(slope), float(intercept), (float(lo), float(hi)),
                    float(np.sqrt(np.mean(res ** 2))), int(np.count_nonzero(sel)))


def japanese(x):
    """``<x> = sqrt(1 + |x|^2)`` for scalars or vectors along the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


class PairGrid:
    """Index bookkeeping for kernels ``nu(K, p)`` with ``K, p`` on a grid.

    The support is the set of pairs with ``K``, ``p`` and ``K - p`` all on
    the grid.  It is closed under the reflection ``(K, p) -> (-K, p - K)``,
    which is what Hermitian symmetry of a kernel pairs up, and under
    ``p -> K - p``.  Arrays over pairs have shape ``(N, N)`` with
    ``N = M**d``, rows indexed by ``K`` and columns by ``p``.
    """

    def __init__(self, grid: MomentumGrid):
        self.grid = grid
        self.N = grid.size
        self.idx = grid.index_vectors()
        n, M, d = grid.n, grid.M, grid.d
        self._stride = M ** np.arange(d - 1, -1, -1)
        diff = self.idx[:, None, :] - self.idx[None, :, :]
        self.support = np.all(np.abs(diff) <= n, axis=-1)
        # flat index of K - p, or -1 outside the grid
        self.kminusp = np.where(self.support, self.flat(diff), -1)
        # flat index into the doubled lattice [-2n, 2n]^d
        self._stride2 = (2 * M - 1) ** np.arange(d - 1, -1, -1)
        self.diff2 = ((diff + 2 * n) * self._stride2).sum(-1)
        self.self2 = ((self.idx + 2 * n) * self._stride2).sum(-1)
        self.neg = grid.mirror()

    def flat(self, coords: np.ndarray) -> np.ndarray:
        """Flat index of integer coordinates (no range check)."""
        return ((np.asarray(coords) + self.grid.n) * self._stride).sum(-1)

    def lattice2_vectors(self) -> np.ndarray:
        """Momenta of the doubled lattice ``h*[-2n, 2n]^d`` in lexicographic order."""
        n = self.grid.n
        ax = np.arange(-2 * n, 2 * n + 1)
        idx = np.array(list(itertools.product(ax, repeat=self.grid.d)), dtype=np.int64)
        return idx.reshape(-1, self.grid.d) * self.grid.h

    def hermitian_partner(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (row, col) of ``(-K, p - K)`` for every pair; -1 off the support."""
        rows = np.broadcast_to(self.neg[:, None], (self.N, self.N))
        cols = np.where(self.support, self.neg[self.kminusp.clip(0)], -1)
        return rows, cols

    def to_relative(self) -> tuple[np.ndarray, np.ndarray]:
        """Gather indices for the relative layout ``o(k, p) = nu(k + p, p)``.

        Returns (rows, mask): ``o[k, p] = nu[rows[k, p], p]`` wherever mask.
        The relative layout turns the commutator sums into matrix products.
        """
        s = self.idx[:, None, :] + self.idx[None, :, :]
        mask = np.all(np.abs(s) <= self.grid.n, axis=-1)
        rows = np.where(mask, self.flat(s), 0)
        return rows, mask
