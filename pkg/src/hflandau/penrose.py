"""Dispersion function ``D(lam, k)``, its rescaled form, the level-set
density ``h_k`` and the stability certificate.

``D(lam, k) = 1 - i w1(k) int_0^inf exp(-lam t) J(t, k) dt``.  With the
rescaled variables ``lam = |k| lam_s`` and ``t = s/|k|`` this becomes
``D_s(lam_s, k) = 1 - i w1(k) int_0^inf exp(-lam_s s) J_s(s, k) ds``.

Three routes are implemented:

* time integral: the kernel is tabulated up to its resolvable horizon and
  Laplace transformed with exact exponential panels;
* Cauchy transform of the level-set density ``h_k`` (histogram of the
  rescaled weights over the rescaled phase), and its boundary values on the
  imaginary axis via the Plemelj formula;
* direct sum of ``a/(lam + iA)`` over the nodes (valid for ``Re lam > 0``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dispersion import DispersionField
from .model import EquilibriumProfile, PotentialPair, RadialPotential
from .numerics import MomentumGrid, histogram_weighted
from .oscillatory import (KernelSamples, OscillatoryBudget, kernel_samples, laplace_weights,
                          limit_J0)

DEFAULT_KERNEL_H = {1: 0.01, 2: 0.1, 3: 0.2}
# bins must span at least one lattice spacing of the projected phase, or the
# counts jump from bin to bin
DEFAULT_HIST_H = {1: 0.001, 2: 0.02, 3: 0.1}
DEFAULT_HIST_DU = {1: 0.02, 2: 0.1, 3: 0.1}


def generic_direction(d: int) -> np.ndarray:
    """A fixed unit vector with rationally independent components.

    Projections of lattice points onto it are spread out, so phase level
    sets do not pile up on lattice planes.
    """
    phi = (1 + 5 ** 0.5) / 2
    v = np.array([1.0, phi, phi * phi][:d])
    return v / np.linalg.norm(v)


def axis_direction(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


@dataclass
class DispersionSample:
    lam: complex
    k: tuple
    value: complex
    method: str
    tail: float = 0.0
    flags: tuple = ()

    def __complex__(self):
        return complex(self.value)


class ZeroMomentumError(ValueError):
    """``k = 0`` was passed to a route that needs ``k != 0``."""


def _decay_cut(values, tol, quiet):
    """Length to keep: up to the first stretch of ``quiet`` samples all below ``tol``.

    Later partial revivals of a grid kernel lie outside its resolvable
    horizon and are discarded with the rest.
    """
    small = np.abs(values) <= tol
    if small.size < quiet:
        return small.size
    run = np.convolve(small.astype(int), np.ones(quiet, dtype=int), mode="valid")
    hit = np.flatnonzero(run == quiet)
    return int(min(small.size, hit[0] + quiet)) if hit.size else small.size


def _laplace(lam, ds, values, chunk=2048):
    """``int exp(-lam s) v(s) ds`` for piecewise-linear ``v``, in chunks of ``lam``."""
    out = np.empty(lam.shape, dtype=complex)
    for i in range(0, lam.size, chunk):
        out[i:i + chunk] = laplace_weights(lam[i:i + chunk], ds, len(values)) @ values
    return out


class ResponseKernel:
    """Tabulated rescaled kernel for one momentum ``k != 0``.

    ``sine[j] = sum w a_s sin(s_j A_s)`` so that ``J_s(s) = -2i sine(s)`` and
    ``D_s(lam_s) = 1 - 2 w1(k) int exp(-lam_s s) sine(s) ds``.
    """

    def __init__(self, field: DispersionField, profile: EquilibriumProfile, w1: RadialPotential, k,
                 h: float | None = None, ds: float = 0.02, c_osc: float = 0.8,
                 decay_tol: float = 1e-13, horizon: float | None = None, samples: KernelSamples | None = None):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if np.linalg.norm(k) == 0:
            raise ZeroMomentumError("k = 0: use the small-k limit")
        d = k.size
        self.k = k
        self.knorm = float(np.linalg.norm(k))
        self.w1k = float(w1(k))
        self.h = h or DEFAULT_KERNEL_H[d]
        base = samples or kernel_samples(field, profile, k, self.h)
        self.samples = base.rescaled()
        self.budget = OscillatoryBudget(self.h, base.theta1, c_osc)
        s_budget = self.budget.t_max(k) * self.knorm
        S = min(horizon, s_budget) if horizon is not None else s_budget
        n = int(math.floor(S / ds)) + 1
        s = np.arange(n) * ds
        tab = self.samples.sine_table(s)
        peak = np.max(np.abs(tab)) if n else 0.0
        if horizon is None and peak > 0:
            last = _decay_cut(tab, decay_tol * peak, int(round(2.0 / ds)))
            s, tab = s[:last], tab[:last]
        self.ds = ds
        self.s = s
        self.sine = tab
        self.horizon = float(s[-1]) if len(s) else 0.0
        self.within_budget = self.horizon <= s_budget * (1 + 1e-12)
        tail_zone = tab[int(0.9 * len(tab)):] if len(tab) else np.zeros(1)
        # the kernel decays at least like <s>^-2, so the neglected tail is below S*|J(S)|
        self.tail = 2.0 * abs(self.w1k) * self.horizon * float(np.max(np.abs(tail_zone)))

    def J_s(self):
        return -2j * self.sine

    def D_s(self, lam_s) -> np.ndarray:
        """Rescaled dispersion function at the points ``lam_s``."""
        lam_s = np.atleast_1d(np.asarray(lam_s, dtype=complex))
        if np.any(lam_s.real < -1e-14):
            raise ValueError("Re lambda must be nonnegative")
        if self.w1k == 0.0:
            return np.ones(lam_s.shape, dtype=complex)
        return 1.0 - 2.0 * self.w1k * _laplace(lam_s, self.ds, self.sine)

    def D(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        return self.D_s(lam / self.knorm)

    def m_f(self, lam) -> np.ndarray:
        """``(D - 1)/w1``: the background response without the coupling."""
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        return -2.0 * _laplace(lam / self.knorm, self.ds, self.sine)


class ZeroLimitKernel:
    """Small-``k`` limit of the rescaled kernel, tabulated from the radial formula."""

    def __init__(self, field: DispersionField, profile: EquilibriumProfile, w1: RadialPotential,
                 ds: float = 0.02, horizon: float | None = None, decay_tol: float = 1e-13, s_max: float = 60.0):
        d = field.d
        self.w1k = float(w1(np.zeros(d)))
        S = horizon if horizon is not None else s_max
        s = np.arange(int(math.floor(S / ds)) + 1) * ds
        tab = limit_J0(field, profile, s)
        if horizon is None:
            last = _decay_cut(tab, decay_tol * np.max(np.abs(tab)), int(round(2.0 / ds)))
            s, tab = s[:last], tab[:last]
        self.ds = ds
        self.s = s
        self.J0 = tab
        self.horizon = float(s[-1])
        tail_zone = tab[int(0.9 * len(tab)):]
        self.tail = abs(self.w1k) * self.horizon * float(np.max(np.abs(tail_zone)))

    def D_s(self, lam_s) -> np.ndarray:
        lam_s = np.atleast_1d(np.asarray(lam_s, dtype=complex))
        if self.w1k == 0.0:
            return np.ones(lam_s.shape, dtype=complex)
        return 1.0 - 1j * self.w1k * _laplace(lam_s, self.ds, self.J0)


def dispersion_D(field: DispersionField, profile: EquilibriumProfile, w1: RadialPotential, lam, k,
                 t_grid=None, h: float | None = None) -> DispersionSample:
    """Time-integral route for ``D(lam, k)``.

    ``t_grid`` (optional, uniform, starting at 0) fixes the unscaled time
    samples; otherwise the kernel's resolvable horizon is used.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if np.linalg.norm(k) == 0:
        raise ZeroMomentumError("k = 0: use limit_D0")
    if complex(lam).real < 0:
        raise ValueError("Re lambda must be nonnegative")
    if w1(k) == 0.0:
        return DispersionSample(complex(lam), tuple(k), 1.0 + 0j, "time-integral")
    kn = float(np.linalg.norm(k))
    if t_grid is not None:
        t = np.asarray(t_grid, dtype=float)
        dt = t[1] - t[0]
        rk = ResponseKernel(field, profile, w1, k, h=h, ds=dt * kn, horizon=t[-1] * kn)
    else:
        rk = ResponseKernel(field, profile, w1, k, h=h)
    val = rk.D(lam)[0]
    flags = () if rk.tail <= 1e-3 * abs(val) else ("short-horizon",)
    if not rk.within_budget:
        flags += ("oscillation-budget",)
    return DispersionSample(complex(lam), tuple(k), complex(val), "time-integral", rk.tail, flags)


def rescaled_D(field, profile, w1, lam_s, k, h: float | None = None) -> DispersionSample:
    """``D(lam_s |k|, k)``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kn = float(np.linalg.norm(k))
    if kn == 0:
        return limit_D0(field, profile, w1, lam_s)
    s = dispersion_D(field, profile, w1, complex(lam_s) * kn, k, h=h)
    return DispersionSample(complex(lam_s), tuple(k), s.value, "time-integral", s.tail, s.flags)


def limit_D0(field, profile, w1, lam_s, **kw) -> DispersionSample:
    zk = ZeroLimitKernel(field, profile, w1, **kw)
    val = zk.D_s(lam_s)[0]
    flags = () if zk.tail <= 1e-3 * abs(val) else ("short-horizon",)
    return DispersionSample(complex(lam_s), (0.0,) * field.d, complex(val), "k-zero-limit", zk.tail, flags)


@dataclass
class LevelSetDensity:
    k: tuple
    u: np.ndarray
    h: np.ndarray
    du: float
    samples_per_bin: float
    total_mass: float
    node_mass: float

    def at(self, u):
        return np.interp(u, self.u, self.h, left=0.0, right=0.0)

    def oddness_defect(self) -> float:
        return float(np.max(np.abs(self.h + self.h[::-1])) / np.max(np.abs(self.h)))

    def positive_side_max(self) -> float:
        return float(np.max(self.h[self.u > 0])) if np.any(self.u > 0) else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["u", "h"])
            for u, v in zip(self.u, self.h):
                wr.writerow([repr(float(u)), repr(float(v))])


class BinningError(ValueError):
    """Histogram bins are too narrow for the number of grid samples."""


def level_set_samples(field: DispersionField, profile: EquilibriumProfile, k, h: float | None = None,
                      direction=None):
    """Rescaled phase and weight on a full centred grid (both mirrored halves).

    ``k`` may be a vector or a magnitude; a magnitude is placed along a
    generic direction.  ``k = 0`` gives the small-``k`` limit with levels
    ``-2 Omega'(|p|^2) p.e`` and weights ``-2 f'(|p|^2) p.e``.
    """
    d = field.d
    h = h or DEFAULT_HIST_H[d]
    if np.ndim(k) == 0:
        e = generic_direction(d) if direction is None else np.asarray(direction, dtype=float)
        k = float(k) * e
    k = np.atleast_1d(np.asarray(k, dtype=float))
    kn = float(np.linalg.norm(k))
    if kn == 0.0:
        e = generic_direction(d) if direction is None else np.asarray(direction, dtype=float)
        R = profile.tail_radius(1e-16)
        n = int(math.ceil(R / h))
        grid = MomentumGrid(d, n * h, 2 * n + 1)
        p = grid.nodes()
        r2 = np.sum(p * p, axis=-1)
        pe = p @ e
        u = -2.0 * field.Omega_prime(r2) * pe
        wgt = -2.0 * profile.df(r2) * pe * grid.weight
        return k, u, wgt, grid.weight
    ks = kernel_samples(field, profile, k, h)
    u = np.concatenate([ks.A, -ks.A]) / kn
    wgt = np.concatenate([ks.w * ks.a, -ks.w * ks.a]) / kn
    return k, u, wgt, h ** d


def level_set_h(field: DispersionField, profile: EquilibriumProfile, k, du: float | None = None,
                h: float | None = None, direction=None, min_per_bin: float = 5.0) -> LevelSetDensity:
    """Histogram estimate of ``h_k(u)``: rescaled weights binned by rescaled phase."""
    du = du or DEFAULT_HIST_DU[field.d]
    k, u, wgt, cell = level_set_samples(field, profile, k, h, direction)
    keep = wgt != 0.0
    u, wgt = u[keep], wgt[keep]
    umax = float(np.max(np.abs(u))) + du
    tab = histogram_weighted(u, wgt, du, umax)
    occupied = tab.counts > 0
    per_bin = float(tab.counts[occupied].mean()) if np.any(occupied) else 0.0
    if per_bin < min_per_bin:
        raise BinningError(f"only {per_bin:.2f} samples per occupied bin (need {min_per_bin}); "
                           f"widen the bins or refine the grid")
    return LevelSetDensity(tuple(k), tab.centers, tab.values, du, per_bin,
                           float(tab.du * tab.values.sum()), float(wgt.sum()))


def cauchy_D(hk: LevelSetDensity, w1k: float, lam_s) -> np.ndarray:
    """``1 - i w1 int h(u)/(lam_s + i u) du`` from the tabulated density (Re lam_s > 0)."""
    lam_s = np.atleast_1d(np.asarray(lam_s, dtype=complex))
    return np.array([1.0 - 1j * w1k * hk.du * np.sum(hk.h / (l + 1j * hk.u)) for l in lam_s])


def boundary_D(hk: LevelSetDensity, w1k: float, tau) -> np.ndarray:
    """Plemelj boundary value ``1 - w1 [PV int h/(u + tau) du + i pi h(-tau)]``.

    The principal value is written as ``int_0^inf (h(-tau+s) - h(-tau-s))/s ds``
    (symmetric pairing about the singular point), sampled at the bin width
    with the ``s -> 0`` limit ``2 h'(-tau)``.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    lo, hi = hk.u[0], hk.u[-1]
    if np.any(-taus < lo) or np.any(-taus > hi):
        raise ValueError("tau outside the tabulated range of h")
    du = hk.du
    out = np.empty(taus.shape, dtype=complex)
    for i, t in enumerate(taus):
        c = -t
        smax = max(c - lo, hi - c) + du
        s = np.arange(1, int(math.ceil(smax / du)) + 1) * du
        odd = (hk.at(c + s) - hk.at(c - s)) / s
        slope0 = (hk.at(c + 0.5 * du) - hk.at(c - 0.5 * du)) / du * 2.0
        pv = du * (0.5 * slope0 + odd[:-1].sum() + 0.5 * odd[-1])
        out[i] = 1.0 - w1k * (pv + 1j * math.pi * hk.at(c))
    return out


@dataclass
class WindingResult:
    count: int
    min_modulus: float
    conclusive: bool
    n_points: int


def winding_number(func, rect=(0.0, 5.0, -5.0, 5.0), n_side: int = 200, threshold: float = 1e-8,
                   max_refine: int = 6) -> WindingResult:
    """Winding number of ``func`` around the origin along a rectangle boundary.

    ``rect = (re_lo, re_hi, im_lo, im_hi)``, traversed counter-clockwise.  The
    sampling is doubled until no angle step exceeds pi/4.
    """
    a, b, c, dd = rect
    n = n_side
    for _ in range(max_refine + 1):
        x = np.linspace(a, b, n + 1)
        y = np.linspace(c, dd, n + 1)
        path = np.concatenate([x[:-1] + 1j * c, b + 1j * y[:-1], x[::-1][:-1] + 1j * dd,
                               a + 1j * y[::-1][:-1], [a + 1j * c]])
        vals = np.asarray(func(path), dtype=complex)
        mod = float(np.min(np.abs(vals)))
        if mod < threshold:
            return WindingResult(0, mod, False, len(path))
        steps = np.angle(vals[1:] / vals[:-1])
        if np.max(np.abs(steps)) <= math.pi / 4:
            count = int(round(steps.sum() / (2 * math.pi)))
            return WindingResult(count, mod, True, len(path))
        n *= 2
    count = int(round(steps.sum() / (2 * math.pi)))
    return WindingResult(count, mod, False, len(path))


@dataclass
class PenroseConfig:
    Lambda: float = 5.0
    k_max: float = 8.0
    n_k: int = 33
    n_re: int = 41
    n_im: int = 81
    h: float | None = None
    ds: float = 0.02
    c_osc: float = 0.8
    winding_k: tuple = (0.25, 1.0, 2.0, 4.0, 8.0)
    winding_rect: tuple = (0.0, 5.0, -5.0, 5.0)

    def refined(self) -> "PenroseConfig":
        return PenroseConfig(self.Lambda, self.k_max, 2 * self.n_k - 1, 2 * self.n_re - 1, 2 * self.n_im - 1,
                             self.h, self.ds, self.c_osc, self.winding_k, self.winding_rect)


@dataclass
class PenroseReport:
    c0: float
    minimizer: dict
    Lambda: float
    k_max: float
    n_k: int
    lambda_grid: dict
    min_re_D0: float
    re_D0: list
    winding: list = field(default_factory=list)
    asymptotics: dict = field(default_factory=dict)
    kernel: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def stability_scan(field: DispersionField, profile: EquilibriumProfile, potentials: PotentialPair,
                   config: PenroseConfig | None = None) -> PenroseReport:
    """Minimum of ``|D_s|`` over ``[0, Lambda] x [-Lambda, Lambda]`` and ``|k| <= k_max``.

    Radial samples of ``k`` lie on the first axis; ``k = 0`` uses the radial
    limit formula.  The report also carries ``Re D_s(0, k)``, winding numbers
    on the configured rectangle, and the sizes of ``|D_s - 1|`` on the edges
    of the scanned region (the asymptotic regime is reported, not scanned).
    """
    cfg = config or PenroseConfig()
    d = field.d
    w1 = potentials.w1
    re = np.linspace(0.0, cfg.Lambda, cfg.n_re)
    im = np.linspace(-cfg.Lambda, cfg.Lambda, cfg.n_im)
    lam = (re[:, None] + 1j * im[None, :]).ravel()
    ks = np.linspace(0.0, cfg.k_max, cfg.n_k)
    candidates = []
    re_D0 = []
    winding = []
    edge_lambda = 0.0
    kernels_meta = []
    far_k = None
    edge_pts = np.concatenate([cfg.Lambda + 1j * im, re + 1j * cfg.Lambda, re - 1j * cfg.Lambda])
    for kn in ks:
        if w1.is_zero:
            vals = np.ones(lam.shape, dtype=complex)
            D0 = 1.0 + 0j
            evaluator = lambda z: np.ones(np.shape(z), dtype=complex)
            edge = np.ones(edge_pts.shape, dtype=complex)
        elif kn == 0.0:
            zk = ZeroLimitKernel(field, profile, w1, ds=cfg.ds)
            evaluator = zk.D_s
            kernels_meta.append({"k": 0.0, "horizon": zk.horizon, "tail": zk.tail})
        else:
            rk = ResponseKernel(field, profile, w1, kn * axis_direction(d), h=cfg.h, ds=cfg.ds, c_osc=cfg.c_osc)
            evaluator = rk.D_s
            kernels_meta.append({"k": float(kn), "horizon": rk.horizon, "tail": rk.tail,
                                 "within_budget": bool(rk.within_budget)})
        if not w1.is_zero:
            vals = evaluator(lam)
            D0 = evaluator(np.array([0.0]))[0]
            edge = evaluator(edge_pts)
        mods = np.abs(vals)
        j = int(np.argmin(mods))
        candidates.append((float(mods[j]), float(lam[j].real), float(lam[j].imag), float(kn), evaluator))
        re_D0.append(float(D0.real))
        edge_lambda = max(edge_lambda, float(np.max(np.abs(edge - 1.0))))
        if kn == ks[-1]:
            far_k = float(np.max(np.abs(vals - 1.0)))
        if any(abs(kn - kw) < 1e-12 for kw in cfg.winding_k):
            wr = winding_number(evaluator, cfg.winding_rect)
            winding.append({"k": float(kn), "count": wr.count, "min_modulus": wr.min_modulus,
                            "conclusive": wr.conclusive})
    best = _polish(candidates, re[1] - re[0], im[1] - im[0], cfg.Lambda)
    return PenroseReport(
        c0=best[0], minimizer={"lambda_re": best[1], "lambda_im": best[2], "k": best[3]}, Lambda=cfg.Lambda, k_max=cfg.k_max, n_k=cfg.n_k,
        lambda_grid={"n_re": cfg.n_re, "n_im": cfg.n_im},
        min_re_D0=float(min(re_D0)), re_D0=re_D0, winding=winding,
        asymptotics={"max_abs_D_minus_1_on_outer_lambda_edges": edge_lambda,
                     "max_abs_D_minus_1_at_k_max": far_k,
                     "note": "beyond the scanned region |D-1| is bounded by the fitted edge values, "
                             "which decay like |lambda|^-2 and vanish as |k| grows"},
        kernel={"h": cfg.h or DEFAULT_KERNEL_H[d], "ds": cfg.ds, "c_osc": cfg.c_osc, "per_k": kernels_meta})


def _polish(candidates, dre, dim, Lambda, n_best=3):
    """Refine the smallest grid minima by a bounded local search in the adjacent cells.

    Ties are broken lexicographically by (Re lam, Im lam, |k|).
    """
    candidates = sorted(candidates, key=lambda c: (c[0], c[1], c[2], c[3]))
    out = []
    for mod, x, y, kn, ev in candidates[:n_best]:
        bounds = [(max(0.0, x - dre), min(Lambda, x + dre)), (max(-Lambda, y - dim), min(Lambda, y + dim))]
        res = minimize(lambda z: float(np.abs(ev(np.array([z[0] + 1j * z[1]]))[0])), [x, y],
                       method="L-BFGS-B", bounds=bounds)
        if res.fun < mod:
            out.append((float(res.fun), float(res.x[0]), float(res.x[1]), kn))
        else:
            out.append((mod, x, y, kn))
    return min(out, key=lambda c: (c[0], c[1], c[2], c[3]))


def winding_certify(field, profile, potentials, k, rect=(0.0, 5.0, -5.0, 5.0), **kw) -> WindingResult:
    """Argument-principle zero count of ``D_s(., k)`` inside ``rect``."""
    w1 = potentials.w1
    d = field.d
    if w1.is_zero:
        return winding_number(lambda z: np.ones(np.shape(z), dtype=complex), rect)
    kv = np.atleast_1d(np.asarray(k, dtype=float))
    if kv.size == 1:
        kv = float(kv[0]) * axis_direction(d)
    if np.linalg.norm(kv) == 0:
        ev = ZeroLimitKernel(field, profile, w1).D_s
    else:
        ev = ResponseKernel(field, profile, w1, kv, **kw).D_s
    return winding_number(ev, rect)
