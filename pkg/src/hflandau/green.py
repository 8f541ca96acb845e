"""Regular part of the Green function of the linearised density response.

The density solves ``rho = S + K * rho`` with memory kernel
``K(t, k) = i w1(k) J(t, k)``.  Its resolvent splits as ``delta + G_r`` with
Laplace symbol ``(1 - D)/D``.  Two constructions are provided:

* :func:`green_table` inverts the symbol along the imaginary axis with a
  raised-cosine taper (for the continuum kernel);
* :func:`green_from_kernel` inverts the sampled discrete kernel along a
  shifted line ``Re lam = gamma0 > 0``, which reproduces the discrete
  convolution resolvent exactly up to wrap-around of size ``exp(-gamma0 T)``.
  This is the route used for grid dynamics, whose kernels do not decay.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .dispersion import DispersionField
from .model import EquilibriumProfile, RadialPotential
from .numerics import InsufficientDataError, dual_axis, fit_decay, japanese, uniform_dft
from .penrose import ResponseKernel, axis_direction


class StabilityError(ValueError):
    """The dispersion function is too close to zero for the resolvent to be trusted."""


class TailError(ValueError):
    """The symbol grid does not cover the decay of the symbol."""


def resolvent_symbol(kernel: ResponseKernel, tau, c0: float | None = None) -> np.ndarray:
    """``(1 - D)/D`` at ``lam = i tau`` (unscaled ``tau``)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if kernel.w1k == 0.0:
        return np.zeros(tau.shape, dtype=complex)
    D = kernel.D(1j * tau)
    if c0 is not None and np.min(np.abs(D)) < 0.5 * c0:
        raise StabilityError(f"|D| = {np.min(np.abs(D)):.3g} below c0/2 = {0.5 * c0:.3g} "
                             f"reported by the stability scan")
    return (1.0 - D) / D


def mf_quadrature(kernel: ResponseKernel, lam, ds: float = 0.005) -> np.ndarray:
    """``m_f(lam) = (D - 1)/w1`` by composite Simpson on a fresh, finer kernel table."""
    lam = np.atleast_1d(np.asarray(lam, dtype=complex)) / kernel.knorm
    n = int(round(kernel.horizon / ds)) + 1
    s = np.linspace(0.0, kernel.horizon, n)
    sine = kernel.samples.sine_table(s)
    out = np.empty(lam.shape, dtype=complex)
    for i, l in enumerate(lam):
        out[i] = -2.0 * simpson(np.exp(-l * s) * sine, x=s)
    return out


def raised_cosine(n: int, fraction: float = 0.1) -> np.ndarray:
    """Window equal to one in the middle, falling smoothly to zero over ``fraction`` of each end."""
    w = np.ones(n)
    m = int(round(fraction * n))
    if m > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * (np.arange(m) + 0.5) / m))
        w[:m] = ramp
        w[n - m:] = ramp[::-1]
    return w


@dataclass
class GreenTable:
    k: np.ndarray            # (n_k, d)
    tau: np.ndarray | None   # (n_k, n_tau) per-k symbol grids, or None for the shifted-line route
    symbol: np.ndarray | None
    t: np.ndarray            # (n_k, n_t) or (n_t,)
    G: np.ndarray            # (n_k, n_t)
    meta: dict = field(default_factory=dict)

    @property
    def knorm(self):
        return np.linalg.norm(self.k, axis=-1)

    def times(self, i):
        return self.t[i] if self.t.ndim == 2 else self.t

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "t", "re_G", "im_G"])
            for i, kn in enumerate(self.knorm):
                for t, g in zip(self.times(i), self.G[i]):
                    wr.writerow([repr(float(kn)), repr(float(t)), repr(float(g.real)), repr(float(g.imag))])

    def meta_json(self) -> str:
        return json.dumps(self.meta, indent=2, sort_keys=True)


def _symbol_extent(kernel: ResponseKernel, tail_tol: float, s_max: float = 2000.0) -> float:
    """Smallest rescaled ``tau`` beyond which ``|(1-D)/D|`` stays below ``tail_tol`` of its peak."""
    probe = np.concatenate([np.linspace(0, 20, 401)[1:], np.geomspace(20, s_max, 400)[1:]])
    vals = np.abs(resolvent_symbol(kernel, np.concatenate([probe, -probe]) * kernel.knorm))
    vals = np.maximum(vals[:probe.size], vals[probe.size:])
    peak = vals.max()
    above = np.flatnonzero(vals > tail_tol * peak)
    if above.size and above[-1] == probe.size - 1:
        raise TailError("symbol has not decayed within the probed range")
    return float(probe[above[-1] + 1]) if above.size else float(probe[0])


def green_table(field: DispersionField, profile: EquilibriumProfile, w1: RadialPotential, ks,
                kt_max: float = 60.0, tail_tol: float = 1e-5, taper: float = 0.1,
                c0: float | None = None, kernel_opts: dict | None = None) -> GreenTable:
    """``G_r(t, k) = (1/2pi) int exp(i tau t) (1-D)/D (i tau) dtau`` on a uniform ``tau`` grid.

    ``ks`` are momentum vectors (or magnitudes, placed on the first axis).  The
    symbol grid extends until ``|(1-D)/D|`` drops below ``tail_tol`` of its peak
    (and never less than the required 0.5%), then a raised-cosine taper over
    the outer ``taper`` fraction is applied.  The output time grid is the dual
    grid restricted to ``t >= 0``, covering ``|k| t <= kt_max``.
    """
    d = field.d
    kv = _as_vectors(ks, d)
    if not 0 < tail_tol <= 5e-3:
        raise TailError("tail tolerance must be at most 0.5% of the peak")
    taus, syms, ts, Gs = [], [], [], []
    for k in kv:
        kn = float(np.linalg.norm(k))
        if w1.is_zero:
            t = np.linspace(0.0, kt_max / kn, 257)
            ts.append(t)
            Gs.append(np.zeros(t.size, dtype=complex))
            taus.append(np.zeros(1))
            syms.append(np.zeros(1, dtype=complex))
            continue
        rk = ResponseKernel(field, profile, w1, k, **(kernel_opts or {}))
        tau_s = _symbol_extent(rk, tail_tol)
        tau_max = tau_s * kn / (1 - taper)
        dtau = math.pi / (2.0 * kt_max / kn)
        N = 2 * int(math.ceil(tau_max / dtau))
        tau = dual_axis(N, 1.0) * dtau
        sym = resolvent_symbol(rk, tau, c0)
        win = raised_cosine(N, taper)
        g = uniform_dft(sym * win, dtau, +1) / (2 * math.pi)
        t = dual_axis(N, 2 * math.pi / (N * dtau))
        keep = (t >= 0) & (t * kn <= kt_max)
        taus.append(tau)
        syms.append(sym)
        ts.append(t[keep])
        Gs.append(g[keep])
    n_t = min(len(t) for t in ts)
    t_tab = np.array([t[:n_t] for t in ts])
    G_tab = np.array([g[:n_t] for g in Gs])
    n_tau = max(len(t) for t in taus)
    tau_tab = np.full((len(kv), n_tau), np.nan)
    sym_tab = np.full((len(kv), n_tau), np.nan, dtype=complex)
    for i, (t, s) in enumerate(zip(taus, syms)):
        tau_tab[i, :len(t)] = t
        sym_tab[i, :len(s)] = s
    meta = {"route": "imaginary-axis", "window": "raised-cosine", "taper_fraction": taper,
            "tail_tol": tail_tol, "kt_max": kt_max, "k": [list(map(float, k)) for k in kv]}
    return GreenTable(kv, tau_tab, sym_tab, t_tab, G_tab, meta)


def green_from_kernel(J: np.ndarray, dt: float, w1k, gamma0: float | None = None,
                      pad: int = 2) -> np.ndarray:
    """Resolvent of the sampled kernel ``K = i w1 J`` (rows = momenta, columns = ``t_j = j dt``).

    Returns ``G`` on the same grid with ``G = K + dt (K * G)`` (the
    convolution sums ``j = 0..n``; since ``K(0) = 0`` this is the trapezoid
    rule).  The inversion runs on ``Re lam = gamma0``; the default puts the
    wrap-around error at ``exp(-37)`` relative to the padded length.
    """
    J = np.atleast_2d(np.asarray(J, dtype=complex))
    w1k = np.broadcast_to(np.asarray(w1k, dtype=float), (J.shape[0],))
    n = J.shape[1]
    L = pad * n
    g0 = 37.0 / (L * dt) if gamma0 is None else gamma0
    damp = np.exp(-g0 * dt * np.arange(n))
    Kd = np.zeros((J.shape[0], L), dtype=complex)
    Kd[:, :n] = 1j * w1k[:, None] * J * damp * dt
    Kh = np.fft.fft(Kd, axis=1)
    Gh = Kh / (1.0 - Kh)
    G = np.fft.ifft(Gh, axis=1)[:, :n] / dt
    return G / damp


def green_time_domain(J: np.ndarray, dt: float, w1k) -> np.ndarray:
    """Same resolvent by forward substitution in time (quadratic cost)."""
    J = np.atleast_2d(np.asarray(J, dtype=complex))
    w1k = np.broadcast_to(np.asarray(w1k, dtype=float), (J.shape[0],))
    K = 1j * w1k[:, None] * J
    n = J.shape[1]
    G = np.zeros_like(K)
    # trapezoid weights are 1 inside; both end terms carry K(0) = 0 or G(0) = 0
    for j in range(1, n):
        G[:, j] = K[:, j] + dt * np.einsum("ki,ki->k", K[:, j - 1:0:-1], G[:, 1:j])
    return G


def green_decay_check(table: GreenTable, window=(5.0, 40.0)) -> list:
    """Per-``k`` power-law fit of the envelope ``sup_{s >= t} |G_r(s, k)|`` against ``<kt>``."""
    fits = []
    for i, kn in enumerate(table.knorm):
        g = np.abs(table.G[i])
        if not np.any(g):
            fits.append(None)
            continue
        t = table.times(i)
        env = np.maximum.accumulate(g[::-1])[::-1]
        x = japanese(kn * t)
        lo, hi = japanese(window[0]), japanese(window[1])
        sel = (x >= lo) & (x <= hi) & (env > 0)
        if sel.sum() < 5 or x.max() < hi:
            raise InsufficientDataError(f"time grid does not cover kt in {window} at |k| = {kn}")
        fits.append(fit_decay(x[sel], env[sel]))
    return fits


def _as_vectors(ks, d):
    """Scalars and 1-D input are magnitudes on the first axis; 2-D input lists vectors."""
    ks = np.asarray(ks, dtype=float)
    if ks.ndim <= 1:
        return np.atleast_1d(ks)[:, None] * axis_direction(d)[None, :]
    return ks
