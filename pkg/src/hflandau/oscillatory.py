"""Oscillatory momentum integrals ``int exp(-i t A(k, p)) F(p) dp``.

The response kernel ``J(t, k) = int exp(-i t A_{k-p,p}) a_{k-p,p} dp`` is
evaluated on a grid centred at ``k/2``.  On that grid the substitution
``p -> k - p`` is the reflection ``q -> -q`` of the offset ``q = p - k/2``,
under which both ``A`` and ``a`` change sign, so only half of the nodes are
stored and ``J = -2i * sum w a sin(t A)`` is exactly imaginary.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn, jv, roots_jacobi

from .dispersion import DispersionField, sphere_area
from .model import EquilibriumProfile
from .numerics import MomentumGrid, mirror_sum


class OscillationBudgetWarning(UserWarning):
    """A phase integral was requested past the resolvable time on its grid."""


@dataclass(frozen=True)
class OscillatoryBudget:
    """Largest ``t`` for which neighbouring nodes differ in phase by at most ``c_osc*pi``."""

    h: float
    theta1: float = 2.0
    c_osc: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.c_osc < 1.0:
            raise ValueError("c_osc must lie in (0, 1)")

    def t_max(self, K) -> float:
        kn = float(np.linalg.norm(np.atleast_1d(K)))
        if kn == 0.0 or self.h == 0.0:
            return math.inf
        return self.c_osc * math.pi / (self.h * self.theta1 * kn)

    def within(self, t, K) -> bool:
        return bool(np.max(np.abs(np.atleast_1d(t))) <= self.t_max(K) * (1 + 1e-12))

    def check(self, t, K) -> bool:
        ok = self.within(t, K)
        if not ok:
            warnings.warn(f"|t| = {np.max(np.abs(np.atleast_1d(t))):.3g} exceeds the oscillation "
                          f"budget {self.t_max(K):.3g} for |K| = {np.linalg.norm(np.atleast_1d(K)):.3g}",
                          OscillationBudgetWarning, stacklevel=3)
        return ok


def phase_integral(field: DispersionField, t, K, F, grid: MomentumGrid, center=None,
                   budget: OscillatoryBudget | None = None):
    """Midpoint rule for ``int exp(-i t A(K, p)) F(p) dp`` with ``p = center + node``.

    ``F`` is either an array of values at the shifted nodes or a callable of
    the momenta (shape ``(N, d)``).  ``t`` may be a scalar or a 1-D array.
    Past the oscillation budget a :class:`OscillationBudgetWarning` is issued
    and the value is still returned.
    """
    K = np.atleast_1d(np.asarray(K, dtype=float))
    p = grid.nodes()
    if center is not None:
        p = p + np.asarray(center, dtype=float)
    vals = F(p) if callable(F) else np.asarray(F)
    vals = np.asarray(vals, dtype=complex).reshape(-1)
    A = field.omega(K - p) - field.omega(p)
    if budget is not None:
        budget.check(t, K)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(ts.shape, dtype=complex)
    for i, ti in enumerate(ts):
        integrand = np.exp(-1j * ti * A) * vals
        out[i] = grid.weight * mirror_sum(integrand.reshape(grid.shape))
    return out[0] if np.ndim(t) == 0 else out


@dataclass
class KernelSamples:
    """Half-set of nodes of the centred grid: phase ``A``, weight ``a`` and quadrature weight.

    ``scale`` is 1 for ``J`` and ``|k|`` for the rescaled kernel, where both
    ``A`` and ``a`` are divided by ``|k|``.
    """

    k: np.ndarray
    A: np.ndarray
    a: np.ndarray
    w: np.ndarray
    h: float
    Kmax: float
    n_nodes: int
    theta1: float
    scale: float = 1.0

    @property
    def knorm(self) -> float:
        return float(np.linalg.norm(self.k))

    @property
    def wa(self) -> np.ndarray:
        return self.w * self.a

    def rescaled(self) -> "KernelSamples":
        s = self.knorm
        if s == 0:
            raise ValueError("cannot rescale at k = 0")
        return KernelSamples(self.k, self.A / s, self.a / s, self.w, self.h, self.Kmax,
                             self.n_nodes, self.theta1, scale=s)

    def sine_table(self, t, chunk: int = 64) -> np.ndarray:
        """``sum w a sin(t A)`` for every entry of ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(t.shape)
        wa = self.wa
        for s in range(0, len(t), chunk):
            out[s:s + chunk] = np.sin(np.outer(t[s:s + chunk], self.A)) @ wa
        return out

    def J(self, t):
        """Kernel value(s): ``-2i sum w a sin(t A)``."""
        vals = -2j * self.sine_table(t)
        return vals[0] if np.ndim(t) == 0 else vals

    def resolvent_sum(self, lam):
        """``int a / (lam + i A) dp`` summed directly over the nodes."""
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        out = np.array([np.sum(self.wa * (-2j * self.A) / (l * l + self.A ** 2)) for l in lam])
        return out

    def budget(self, c_osc: float = 0.25) -> OscillatoryBudget:
        return OscillatoryBudget(self.h, self.theta1, c_osc)

    def t_budget(self, c_osc: float) -> float:
        """Resolvable horizon in this kernel's own time variable."""
        tb = self.budget(c_osc).t_max(self.k)
        return tb * self.scale


def kernel_grid(d: int, k, h: float, radius: float) -> MomentumGrid:
    """Grid of spacing ``h`` holding ``g(k/2 +- q)`` down to ``radius`` from its centre."""
    half = 0.5 * float(np.max(np.abs(np.atleast_1d(k)))) + radius
    n = int(math.ceil(half / h))
    return MomentumGrid(d, n * h, 2 * n + 1)


def kernel_samples(field: DispersionField, profile: EquilibriumProfile, k, h: float = 0.2,
                   radius: float | None = None, tol: float = 1e-16) -> KernelSamples:
    """Build the half-set for ``J(., k)`` on the grid centred at ``k/2``.

    When ``k`` lies on a coordinate axis, nodes sharing the axial index and
    the transverse squared index give identical integrand values, so they are
    merged with multiplicities (the midpoint sum itself is unchanged).
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    d = k.size
    if radius is None:
        radius = profile.tail_radius(tol)
    grid = kernel_grid(d, k, h, radius)
    n = grid.n
    theta1 = 2.0 + field.hessian_norm()
    nz = np.flatnonzero(k)
    if d > 1 and len(nz) <= 1:
        ax = int(nz[0]) if len(nz) else 0
        ka = k[ax]
        j = np.arange(1, n + 1)
        tr = np.arange(-n, n + 1)
        if d == 2:
            t2, mult = np.unique(tr ** 2, return_counts=True)
        else:
            sq = (tr[:, None] ** 2 + tr[None, :] ** 2).ravel()
            t2, mult = np.unique(sq, return_counts=True)
        qa = (j * h)[:, None]
        perp2 = (t2 * h * h)[None, :]
        r2_minus = (0.5 * ka - qa) ** 2 + perp2
        r2_plus = (0.5 * ka + qa) ** 2 + perp2
        w = np.broadcast_to(mult[None, :] * grid.weight, r2_minus.shape).ravel()
        a = (profile.g_r2(r2_minus) - profile.g_r2(r2_plus)).ravel()
        A = (_omega_r2(field, r2_minus) - _omega_r2(field, r2_plus)).ravel()
    else:
        q = grid.nodes()
        half = q[: grid.size // 2]
        pm = 0.5 * k - half
        pp = 0.5 * k + half
        a = profile.g(pm) - profile.g(pp)
        A = field.omega(pm) - field.omega(pp)
        w = np.full(a.shape, grid.weight)
    keep = a != 0.0
    return KernelSamples(k, A[keep], a[keep], w[keep], h, grid.Kmax, grid.size, theta1)


def _omega_r2(field: DispersionField, r2):
    return r2 - field.m(np.sqrt(r2))


def J_kernel(field: DispersionField, profile: EquilibriumProfile, t, k, h: float = 0.2,
             radius: float | None = None, budget_c: float | None = 0.25):
    """``J(t, k)``; a budget warning is raised past ``c_osc*pi/(h*theta1*|k|)``."""
    ks = kernel_samples(field, profile, k, h, radius)
    if budget_c is not None:
        ks.budget(budget_c).check(t, k)
    return ks.J(t)


def scaled_J(field: DispersionField, profile: EquilibriumProfile, t, k, h: float = 0.2,
             radius: float | None = None, budget_c: float | None = 0.25):
    """Rescaled kernel ``J(t/|k|, k)/|k|``."""
    kn = float(np.linalg.norm(np.atleast_1d(k)))
    if kn == 0.0:
        raise ValueError("k = 0: use limit_J0")
    ks = kernel_samples(field, profile, k, h, radius)
    if budget_c is not None:
        ks.budget(budget_c).check(np.asarray(t) / kn, k)
    return ks.rescaled().J(t)


def angular_factor(d: int, alpha):
    """``|S^(d-2)| * int_{-1}^{1} exp(i alpha s) s (1-s^2)^((d-3)/2) ds`` in closed form.

    For ``d = 1`` the sphere is the pair ``s = +-1`` and the factor is ``2i sin(alpha)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if d == 1:
        return 2j * np.sin(alpha)
    nu = (d - 2) / 2.0
    const = math.sqrt(math.pi) * gamma_fn(nu + 0.5) * 2.0 ** nu * sphere_area(d - 2)
    small = np.abs(alpha) < 1e-8
    safe = np.where(small, 1.0, np.abs(alpha))
    # odd in alpha: evaluate the Bessel function at |alpha| and restore the sign
    val = const * jv(nu + 1, safe) / safe ** nu * np.sign(alpha)
    # series J_{nu+1}(x)/x^nu ~ x / (2^(nu+1) Gamma(nu+2))
    val = np.where(small, const * alpha / (2.0 ** (nu + 1) * gamma_fn(nu + 2)), val)
    return 1j * val


def angular_factor_quadrature(d: int, alpha, n: int = 400):
    """Same factor by Gauss-Jacobi quadrature in ``s`` (independent check)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if d == 1:
        return 2j * np.sin(alpha)
    ex = (d - 3) / 2.0
    s, ws = roots_jacobi(n, ex, ex)
    vals = (np.exp(1j * np.outer(alpha, s)) * s) @ ws
    return sphere_area(d - 2) * vals


def _radial_rule(R: float, panel: float = 0.25, n_gl: int = 24):
    from numpy.polynomial.legendre import leggauss
    edges = np.arange(0.0, R + panel, panel)
    xg, wg = leggauss(n_gl)
    half = 0.5 * panel
    r = (edges[:-1, None] + half * (xg[None, :] + 1.0)).ravel()
    w = np.broadcast_to(half * wg, (len(edges) - 1, n_gl)).ravel()
    return r, w


def limit_J0(field: DispersionField, profile: EquilibriumProfile, t, direction=None,
             tol: float = 1e-16, panel: float = 0.25):
    """Small-``k`` limit of the rescaled kernel.

    ``-int exp(i t grad omega(p).e) grad g(p).e dp`` reduced to
    ``-2 int_0^inf r^d f'(r^2) S_d(2 t Omega'(r^2) r) dr`` with the angular
    factor ``S_d`` of :func:`angular_factor`; the result does not depend on
    the unit vector ``e`` for radial data.
    """
    d = field.d
    if direction is not None:
        e = np.atleast_1d(np.asarray(direction, dtype=float))
        if e.size != d or abs(np.linalg.norm(e) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector in R^d")
    R = profile.tail_radius(tol)
    r, w = _radial_rule(R, panel)
    weight = -2.0 * r ** d * profile.df(r * r) * w
    freq = 2.0 * field.Omega_prime(r * r) * r
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([np.sum(weight * angular_factor(d, ti * freq)) for ti in ts])
    return out[0] if np.ndim(t) == 0 else out


def laplace_weights(lam, dt: float, n: int) -> np.ndarray:
    """Weights ``W[l, j]`` with ``sum_j W[l, j] f_j ~ int_0^{(n-1) dt} exp(-lam_l t) f(t) dt``.

    ``f`` is interpolated linearly between the samples and the exponential is
    integrated exactly on each panel, so large ``|lam|`` is handled without
    refining ``dt``.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    z = lam * dt
    phi1, phi2 = _phi12(z)
    tj = np.arange(n - 1) * dt
    E = np.exp(-np.outer(lam, tj))
    W = np.zeros((lam.size, n), dtype=complex)
    W[:, :-1] += E * phi1[:, None]
    W[:, 1:] += E * phi2[:, None]
    return dt * W


def _phi12(z):
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 0.05
    zs = np.where(small, 1.0, z)
    em = np.exp(-zs)
    phi1 = (zs - 1.0 + em) / zs ** 2
    phi2 = (1.0 - (1.0 + zs) * em) / zs ** 2
    # series: phi1 = sum (-z)^m / (m+2)!, phi2 = sum (-z)^m (m+1)/(m+2)!
    s1 = np.zeros_like(z)
    s2 = np.zeros_like(z)
    for m in range(10):
        term = (-z) ** m / math.factorial(m + 2)
        s1 = s1 + term
        s2 = s2 + (m + 1) * term
    return np.where(small, s1, phi1), np.where(small, s2, phi2)


def grid_limit_J0(field: DispersionField, profile: EquilibriumProfile, t, direction, grid: MomentumGrid):
    """Cartesian midpoint version of the small-``k`` kernel for a given direction."""
    e = np.asarray(direction, dtype=float)
    p = grid.nodes()
    phase = field.grad_omega(p) @ e
    weight = profile.grad_g(p) @ e
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([-grid.weight * mirror_sum((np.exp(1j * ti * phase) * weight).reshape(grid.shape))
                    for ti in ts])
    return out[0] if np.ndim(t) == 0 else out
