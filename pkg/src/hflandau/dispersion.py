"""Exchange-shifted dispersion ``omega(k) = |k|^2 - m(k)`` and the phase
``A(K, p) = omega(K - p) - omega(p)``.

The shift is ``m(k) = (2 pi)^-d [(w2 * g)(k) - (w2 * g)(0)]``, a radial
function computed once by Gauss-Legendre quadrature in polar coordinates and
stored as a clamped cubic spline in ``|k|``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from .model import EquilibriumProfile, PotentialPair
from .numerics import MomentumGrid, PairGrid


class ConvolutionTailError(RuntimeError):
    """The radial convolution integral cannot be truncated to the requested accuracy."""


def _panels(a: float, b: float, edges_per_unit: float = 1.0, n_gl: int = 32):
    """Composite Gauss-Legendre nodes/weights on [a, b]: unit panels up to 8, then doubling."""
    edges = [a]
    x = a
    while x < b:
        step = 1.0 / edges_per_unit if x < 8.0 else max(x / 4.0, 1.0)
        x = min(x + step, b)
        edges.append(x)
    xg, wg = leggauss(n_gl)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (xg + 1.0))
        weights.append(half * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def _angle_rule(d: int, n_gl: int = 24):
    """Nodes on [0, pi] and weights including the sin^(d-2) Jacobian."""
    cuts = np.pi * np.array([0.0, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0])
    xg, wg = leggauss(n_gl)
    th, wt = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (hi - lo)
        th.append(lo + half * (xg + 1.0))
        wt.append(half * wg)
    th = np.concatenate(th)
    wt = np.concatenate(wt) * np.sin(th) ** (d - 2)
    return th, wt


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^n in R^(n+1)."""
    from scipy.special import gamma
    return float(2 * np.pi ** ((n + 1) / 2) / gamma((n + 1) / 2))


def radial_convolution(profile: EquilibriumProfile, w2, d: int, r, tol: float = 1e-12):
    """``(w2 * g)(r e_1)`` for radial ``w2`` and ``g`` at the radii ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if profile.kind == "rational" and 2 * profile.n1 <= d:
        raise ConvolutionTailError("profile is not integrable in this dimension")
    R = profile.tail_radius(tol)
    if profile.kind == "rational":
        m = 2 * profile.n1 - d
        R = max(R, (profile.c / (tol * m)) ** (1.0 / m))
    for _ in range(8):
        out = _convolve_to(profile, w2, d, r, R)
        if profile.kind != "rational":
            return out
        # |w2| <= amplitude bounds the neglected shell |q| > R
        tail = w2.amplitude * sphere_area(d - 1) * profile.c * R ** (d - 2 * profile.n1) / (2 * profile.n1 - d)
        if tail <= tol * max(np.max(np.abs(out)), 1e-300) or tail <= 1e-300:
            return out
        R *= 2.0
    raise ConvolutionTailError(f"convolution tail {tail:.2e} above tolerance")


def _convolve_to(profile, w2, d, r, R):
    if d == 1:
        q, wq = _panels(0.0, R)
        q = np.concatenate([-q[::-1], q])
        wq = np.concatenate([wq[::-1], wq])
        gq = profile.g_r2(q * q)
        return np.array([np.sum(wq * gq * w2.radial((ri - q) ** 2)) for ri in r])
    rho, wr = _panels(0.0, R)
    th, wt = _angle_rule(d)
    grho = profile.g_r2(rho * rho) * rho ** (d - 1) * wr
    cos_t = np.cos(th)
    out = np.empty(r.shape)
    for i, ri in enumerate(r):
        dist2 = ri * ri + rho[:, None] ** 2 - 2.0 * ri * rho[:, None] * cos_t[None, :]
        inner = w2.radial(np.maximum(dist2, 0.0)) @ wt
        out[i] = sphere_area(d - 2) * np.dot(grho, inner)
    return out


@dataclass
class DispersionField:
    """Radial exchange shift ``m`` with ``omega(k) = |k|^2 - m(|k|)``."""

    d: int
    r: np.ndarray
    m_table: np.ndarray
    spline: CubicSpline | None

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def is_free(self) -> bool:
        return self.spline is None

    def m(self, radius, nu: int = 0):
        radius = np.asarray(radius, dtype=float)
        if self.spline is None:
            return np.zeros_like(radius)
        inside = radius <= self.r_max
        val = self.spline(np.minimum(radius, self.r_max), nu)
        if nu == 0:
            return val
        return np.where(inside, val, 0.0)

    def omega(self, k):
        k = np.asarray(k, dtype=float)
        r2 = np.sum(k * k, axis=-1)
        return r2 - self.m(np.sqrt(r2))

    def grad_omega(self, k):
        k = np.asarray(k, dtype=float)
        r = np.sqrt(np.sum(k * k, axis=-1))
        dm = self.m(r, 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(r > 0, dm / np.where(r > 0, r, 1.0), 0.0)
        return 2.0 * k - factor[..., None] * k

    def Omega_prime(self, e):
        """Derivative of the radial view ``Omega(|p|^2) = omega(p)``."""
        e = np.asarray(e, dtype=float)
        r = np.sqrt(e)
        if self.spline is None:
            return np.ones_like(e)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(r > 0, self.m(r, 1) / np.where(r > 0, r, 1.0), self.m(0.0, 2))
        return 1.0 - 0.5 * ratio

    def hessian_norm(self) -> float:
        """``sup |D^2 m|``: the larger of ``|m''(r)|`` and ``|m'(r)/r|`` over the table."""
        if self.spline is None:
            return 0.0
        rr = np.linspace(0.0, self.r_max, 4 * len(self.r))
        d2 = np.abs(self.m(rr, 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            d1 = np.abs(np.where(rr > 0, self.m(rr, 1) / np.where(rr > 0, rr, 1.0), self.m(0.0, 2)))
        return float(max(d2.max(), d1.max()))


def build_dispersion(profile: EquilibriumProfile, potentials: PotentialPair, grid: MomentumGrid | None = None,
                     d: int | None = None, r_max: float | None = None, dr: float = 0.025) -> DispersionField:
    """Tabulate ``m`` on ``[0, r_max]``; the default range covers all grid differences."""
    if grid is not None:
        d = grid.d
        need = 2.0 * np.sqrt(d) * grid.Kmax
    else:
        need = 0.0
    if d is None:
        raise ValueError("need a grid or a dimension")
    r_max = max(r_max or 0.0, need, 1.0)
    r = np.arange(0.0, r_max + dr, dr)
    w2 = potentials.w2
    if w2.is_zero or w2.kind == "constant":
        return DispersionField(d, r, np.zeros_like(r), None)
    conv = radial_convolution(profile, w2, d, r)
    m = (conv - conv[0]) / (2 * np.pi) ** d
    m[0] = 0.0
    spline = CubicSpline(r, m, bc_type=((1, 0.0), "not-a-knot"))
    return DispersionField(d, r, m, spline)


def phase_A(field: DispersionField, K, p):
    K = np.asarray(K, dtype=float)
    p = np.asarray(p, dtype=float)
    return field.omega(K - p) - field.omega(p)


def grad_phase(field: DispersionField, K, p):
    """Gradient in ``p`` of ``A(K, p)``: ``-grad omega(K - p) - grad omega(p)``."""
    K = np.asarray(K, dtype=float)
    p = np.asarray(p, dtype=float)
    return -field.grad_omega(K - p) - field.grad_omega(p)


class PhaseTable:
    """``A(K, p)`` on all grid pairs, built from omega on the doubled lattice.

    Using one table of omega values for both ``K - p`` and ``p`` makes
    ``A(K, p) = -A(K, K - p)`` and ``A(0, p) = 0`` hold exactly.
    """

    def __init__(self, field: DispersionField, pairs: PairGrid):
        self.pairs = pairs
        self.field = field
        self.omega2 = field.omega(pairs.lattice2_vectors())
        self.A = self.omega2[pairs.diff2] - self.omega2[pairs.self2][None, :]
        self.A_support = np.where(pairs.support, self.A, 0.0)

    @property
    def max_abs(self) -> float:
        """Largest ``|A|`` over the stored support."""
        return float(np.max(np.abs(self.A_support)))

    def group_velocity(self) -> np.ndarray:
        g = self.pairs.grid
        nodes = g.nodes()
        return grad_phase(self.field, nodes[:, None, :], nodes[None, :, :])


def theta0_estimate(field: DispersionField, grid: MomentumGrid, chunk: int = 256) -> tuple[float, float]:
    """Extremes of ``|grad_p A(K, p)| / |K|`` over all grid pairs with ``K != 0``."""
    nodes = grid.nodes()
    norms = np.sqrt(np.sum(nodes ** 2, axis=-1))
    Ks = nodes[norms > 0]
    kn = norms[norms > 0]
    lo, hi = np.inf, 0.0
    for s in range(0, len(Ks), chunk):
        K = Ks[s:s + chunk]
        g = grad_phase(field, K[:, None, :], nodes[None, :, :])
        ratio = np.sqrt(np.sum(g * g, axis=-1)) / kn[s:s + chunk, None]
        lo = min(lo, float(ratio.min()))
        hi = max(hi, float(ratio.max()))
    return lo, hi
