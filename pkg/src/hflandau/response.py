"""Linear density response on a momentum grid.

Kernels are stored as ``nu[K, p]`` (rows ``K``, columns ``p``) on the pair
support of :class:`PairGrid`; ``nu[K, p]`` is the Fourier kernel evaluated
at ``(K - p, p)``.  In this layout

* the density is a plain ``p`` sum: ``rho(K) = h^d sum_p exp(-itA) nu[K, p]``;
* the exchange field is a convolution in ``p`` against ``w2``;
* the linearised equation reads
  ``i d/dt gamma[K, p] = A gamma - a (w1(K) rho(K) - X[K, p]) + F[K, p]``,
  with ``A = omega(K - p) - omega(p)`` and ``a = g(K - p) - g(p)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .dispersion import DispersionField, PhaseTable
from .green import green_from_kernel
from .model import EquilibriumProfile, PotentialPair
from .numerics import MomentumGrid, PairGrid, fit_decay, japanese
from .oscillatory import OscillatoryBudget, phase_integral


class StepSizeError(ValueError):
    def __init__(self, dt, bound):
        super().__init__(f"time step {dt:.4g} exceeds the explicit stability bound; use dt <= {bound:.4g}")
        self.dt = dt
        self.suggested = bound


class GridMismatchError(ValueError):
    pass


@dataclass
class LinearModel:
    """Everything about the background that the grid dynamics needs."""
    field: DispersionField
    profile: EquilibriumProfile
    potentials: PotentialPair
    grid: MomentumGrid
    pairs: PairGrid = None
    phases: PhaseTable = None

    def __post_init__(self):
        if self.pairs is None:
            self.pairs = PairGrid(self.grid)
        if self.phases is None:
            self.phases = PhaseTable(self.field, self.pairs)
        nodes = self.grid.nodes()
        sup = self.pairs.support
        kmp = nodes[:, None, :] - nodes[None, :, :]
        self.a = np.where(sup, self.profile.g(kmp) - self.profile.g(nodes)[None, :], 0.0)
        self.A = self.phases.A_support
        self.w1K = self.potentials.w1(nodes)
        self.cell = self.grid.weight
        self._w2 = None
        self._w2m = None

    @property
    def nodes(self):
        return self.grid.nodes()

    def dt_bound(self, c_step: float = 0.5) -> float:
        return c_step / (1.0 + self.phases.max_abs)

    def w2_matrix(self) -> np.ndarray:
        """``W[q, p] = w2(q - p)`` gathered from the doubled-lattice table."""
        if self._w2m is None:
            flat = self.w2_table().reshape(-1)
            self._w2m = flat[self.pairs.diff2]
        return self._w2m

    def w2_table(self) -> np.ndarray:
        """``w2`` on the doubled lattice, shaped ``(2M-1,)*d``."""
        if self._w2 is None:
            M = self.grid.M
            self._w2 = self.potentials.w2(self.pairs.lattice2_vectors()).reshape((2 * M - 1,) * self.grid.d)
        return self._w2


def gaussian_kernel(model: LinearModel, eps0: float, width: float = 1.0) -> np.ndarray:
    """``eps0 exp(-(|K - p|^2 + |p|^2) / (2 width^2))`` on the pair support (Hermitian, real)."""
    nodes = model.nodes
    kmp = nodes[:, None, :] - nodes[None, :, :]
    val = eps0 * np.exp(-(np.sum(kmp ** 2, -1) + np.sum(nodes ** 2, -1)[None, :]) / (2 * width ** 2))
    return np.where(model.pairs.support, val, 0.0).astype(complex)


def gaussian_density_closed_form(k, t, eps0: float, width: float = 1.0, d: int = 3):
    """Free-streaming density of :func:`gaussian_kernel` under pure Schrodinger dispersion."""
    k2 = np.sum(np.atleast_2d(k) ** 2, axis=-1)
    t = np.asarray(t, dtype=float)[..., None]
    w2 = width ** 2
    return eps0 * (np.pi * w2) ** (d / 2) * np.exp(-k2 / (4 * w2) - k2 * t ** 2 * w2)


@dataclass
class SourceTable:
    t: np.ndarray
    k: np.ndarray
    S: np.ndarray                 # (n_t, n_k)
    provenance: dict = field(default_factory=dict)


@dataclass
class DensityTrace:
    t: np.ndarray
    k: np.ndarray                 # (n_k, d)
    rho: np.ndarray               # (n_t, n_k)
    method: str
    fits: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None

    def write_csv(self, path):
        d = self.k.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "kx", "ky", "kz", "re_rho", "im_rho", "abs_rho"])
            for j, t in enumerate(self.t):
                for i, k in enumerate(self.k):
                    kk = list(k) + [0.0] * (3 - d)
                    r = self.rho[j, i]
                    wr.writerow([repr(float(t))] + [repr(float(x)) for x in kk]
                                + [repr(float(r.real)), repr(float(r.imag)), repr(float(abs(r)))])

    def reality_defect(self, neg: np.ndarray) -> float:
        """``max |rho(-k) - conj rho(k)|`` relative to ``max |rho|``."""
        scale = np.max(np.abs(self.rho)) or 1.0
        return float(np.max(np.abs(self.rho[:, neg] - np.conj(self.rho))) / scale)

    def l1_nonzero(self, weight: float) -> np.ndarray:
        """``h^d sum_{k != 0} |rho(t, k)|`` (the conserved ``k = 0`` mode is excluded)."""
        nz = np.any(self.k != 0, axis=1)
        return weight * np.sum(np.abs(self.rho[:, nz]), axis=1)


def density_from_state(model: LinearModel, t: float, nu: np.ndarray) -> np.ndarray:
    """``rho(K) = h^d sum_p exp(-i t A(K, p)) nu[K, p]`` (``nu`` stored as a profile)."""
    if t == 0.0:
        return model.cell * nu.sum(axis=1)
    return model.cell * np.sum(np.exp(-1j * t * model.A) * nu, axis=1)


def exchange_field(model: LinearModel, t: float, nu: np.ndarray, route: str = "matrix") -> np.ndarray:
    """``X[K, p] = h^d sum_q w2(q - p) exp(-i t A(K, q)) nu[K, q]``.

    Routes: ``matrix`` multiplies by the cached convolution matrix (fastest on
    small grids), ``fft`` convolves with fast transforms over the ``p`` axes,
    ``direct`` sums term by term (reference only; cubic cost).
    """
    if model.potentials.w2.is_zero:
        return np.zeros_like(nu, dtype=complex)
    Y = nu if t == 0.0 else np.exp(-1j * t * model.A) * nu
    Y = np.where(model.pairs.support, Y, 0.0)
    if route == "matrix":
        return model.cell * (Y @ model.w2_matrix())
    if route == "direct":
        nodes = model.nodes
        out = np.zeros_like(Y)
        for i, p in enumerate(nodes):
            w = model.potentials.w2(nodes - p)
            out[:, i] = model.cell * np.sum(Y * w[None, :], axis=1)
        return out
    if route != "fft":
        raise ValueError(f"unknown route {route!r}")
    d, M, N = model.grid.d, model.grid.M, model.grid.size
    Yg = Y.reshape((N,) + (M,) * d)
    # w2 is even, so correlation with w2(q - p) equals convolution
    ker = model.w2_table()[None]
    full = fftconvolve(Yg, ker, mode="full", axes=tuple(range(1, d + 1)))
    sl = (slice(None),) + tuple(slice(M - 1, 2 * M - 1) for _ in range(d))
    return model.cell * full[sl].reshape(N, N)


def meanfield_P(model: LinearModel, rho: np.ndarray, X: np.ndarray | None) -> np.ndarray:
    """``P[K, p] = w1(K) rho(K) - X[K, p]``."""
    P = (model.w1K * rho)[:, None]
    return np.broadcast_to(P, (P.shape[0], model.grid.size)).copy() if X is None else P - X


def discrete_kernel(model: LinearModel, t: np.ndarray) -> np.ndarray:
    """``J(t, K) = h^d sum_p exp(-i t A(K, p)) a(K, p)`` over the pair support; shape (n_t, N)."""
    t = np.asarray(t, dtype=float)
    out = np.empty((t.size, model.grid.size), dtype=complex)
    for j, tj in enumerate(t):
        out[j] = model.cell * np.sum(np.exp(-1j * tj * model.A) * model.a, axis=1)
    return out


def _phase_step(model, dt):
    return np.exp(-1j * dt * model.A)


def source_table(model: LinearModel, t: np.ndarray, nu0: np.ndarray, forcing=None) -> SourceTable:
    """``S(t, K) = h^d sum_p exp(-itA) nu0 - i int_0^t h^d sum_p exp(-i(t-s)A) F(s) ds``.

    ``forcing`` is an array ``(n_t, N, N)`` on the same time grid or a callable
    ``F(t) -> (N, N)``; the time integral uses the trapezoid rule.
    """
    t = np.asarray(t, dtype=float)
    S = np.empty((t.size, model.grid.size), dtype=complex)
    for j, tj in enumerate(t):
        S[j] = density_from_state(model, tj, nu0) if tj else model.cell * nu0.sum(axis=1)
    if forcing is not None:
        dt = t[1] - t[0]
        if not np.allclose(np.diff(t), dt):
            raise GridMismatchError("forcing needs a uniform time grid")
        Fj = (lambda j: forcing(t[j])) if callable(forcing) else (lambda j: forcing[j])
        step = _phase_step(model, dt)
        F0 = np.asarray(Fj(0), dtype=complex)
        C = F0.copy()
        for j in range(1, t.size):
            Fcur = np.asarray(Fj(j), dtype=complex)
            C = step * C + Fcur
            I = dt * (C - 0.5 * Fcur - 0.5 * np.exp(-1j * t[j] * model.A) * F0)
            S[j] += -1j * model.cell * np.where(model.pairs.support, I, 0.0).sum(axis=1)
    prov = {"initial": "tabulated kernel", "forcing": "none" if forcing is None else "tabulated"}
    return SourceTable(t, model.nodes, S, prov)


def source_S(field: DispersionField, t, k, nu0, grid: MomentumGrid, forcing=None,
             budget: OscillatoryBudget | None = None):
    """Single-momentum source on a centred quadrature grid ``p = k/2 + node``.

    ``nu0(p)`` and ``forcing(s, p)`` are callables in ``p`` (``forcing``
    optional, integrated by the trapezoid rule on the given time samples).
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.asarray(phase_integral(field, ts, k, nu0, grid, center=0.5 * k, budget=budget), dtype=complex)
    out = np.atleast_1d(out)
    if forcing is not None:
        for i, ti in enumerate(ts):
            if ti == 0:
                continue
            n = max(2, int(np.ceil(ti / (ts[1] - ts[0] if ts.size > 1 else ti / 64))) + 1)
            s = np.linspace(0.0, ti, n)
            vals = np.array([phase_integral(field, ti - sj, k, lambda p, sj=sj: forcing(sj, p), grid,
                                            center=0.5 * k) for sj in s])
            out[i] += -1j * np.trapz(vals, s) if hasattr(np, "trapz") else -1j * np.trapezoid(vals, s)
    return out[0] if np.ndim(t) == 0 else out


def volterra_density(G: np.ndarray, source: SourceTable, dt: float | None = None) -> DensityTrace:
    """``rho = S + int_0^t G(t - s) S(s) ds`` (trapezoid), ``G`` shaped like ``S``.

    ``G`` is the regular part of the resolvent on the same uniform time grid;
    the delta part is the explicit leading ``S``.
    """
    t = source.t
    S = source.S
    if G.shape != S.shape:
        raise GridMismatchError(f"Green table {G.shape} does not match source {S.shape}")
    if dt is None:
        dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise GridMismatchError("Volterra quadrature needs a uniform time grid")
    n = t.size
    conv = fftconvolve(G, S, mode="full", axes=0)[:n]
    # trapezoid = rectangle minus half the end points; G(0) term is part of the sum
    rho = S + dt * (conv - 0.5 * G * S[0][None, :] - 0.5 * G[0][None, :] * S)
    return DensityTrace(t, source.k, rho, "volterra")


def linear_volterra(model: LinearModel, t: np.ndarray, nu0: np.ndarray, forcing=None) -> DensityTrace:
    """Density from the grid kernel's resolvent and the source (the Volterra route)."""
    t = np.asarray(t, dtype=float)
    dt = t[1] - t[0]
    J = discrete_kernel(model, t).T
    G = green_from_kernel(J, dt, model.w1K).T
    src = source_table(model, t, nu0, forcing)
    return volterra_density(G, src, dt)


def ode_oracle(model: LinearModel, nu0: np.ndarray, T: float, dt: float, forcing=None,
               exchange: bool = False, c_step: float = 0.5, record_every: int = 1) -> DensityTrace:
    """RK4 on ``i d/dt gamma = A gamma - a P + F`` with ``P`` rebuilt at every stage.

    ``exchange=False`` keeps only ``w1 rho`` in ``P``; ``exchange=True`` also
    includes the exchange response.
    """
    bound = model.dt_bound(c_step)
    if dt > bound * (1 + 1e-12):
        raise StepSizeError(dt, bound)
    sup = model.pairs.support
    A, a = model.A, model.a

    def rhs(tt, g):
        rho = model.cell * g.sum(axis=1)
        P = meanfield_P(model, rho, exchange_field(model, 0.0, g) if exchange else None)
        out = A * g - a * P
        if forcing is not None:
            out = out + np.where(sup, forcing(tt), 0.0)
        return -1j * np.where(sup, out, 0.0)

    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise GridMismatchError("T must be a multiple of dt")
    g = nu0.astype(complex).copy()
    ts, rhos = [0.0], [model.cell * g.sum(axis=1)]
    for j in range(n):
        tj = j * dt
        k1 = rhs(tj, g)
        k2 = rhs(tj + 0.5 * dt, g + 0.5 * dt * k1)
        k3 = rhs(tj + 0.5 * dt, g + 0.5 * dt * k2)
        k4 = rhs(tj + dt, g + dt * k3)
        g = g + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (j + 1) % record_every == 0:
            ts.append((j + 1) * dt)
            rhos.append(model.cell * g.sum(axis=1))
    return DensityTrace(np.array(ts), model.nodes, np.array(rhos), "ode-oracle", final_state=g)


def hermitian_defect(model: LinearModel, nu: np.ndarray) -> float:
    """``max |nu[K, p] - conj nu[-K, p - K]|`` over the support, relative to ``max |nu|``."""
    rows, cols = model.pairs.hermitian_partner()
    sup = model.pairs.support
    partner = nu[rows, cols.clip(0)]
    scale = np.max(np.abs(nu)) or 1.0
    return float(np.max(np.abs(np.where(sup, nu - np.conj(partner), 0.0))) / scale)


def relative_trace_error(a: DensityTrace, b: DensityTrace, floor: float = 1e-10) -> float:
    """``max_{t,k} |a - b| / max_t |b(., k)|`` over momenta where ``b`` is not negligible."""
    scale = np.max(np.abs(b.rho), axis=0)
    keep = scale > floor * np.max(scale)
    return float(np.max(np.abs(a.rho[:, keep] - b.rho[:, keep]) / scale[keep]))


def fit_density_decay(trace: DensityTrace, weight: float, window=(2.0, 20.0)):
    """Power law of the ``L1`` norm over ``k != 0`` against ``<t>``."""
    y = trace.l1_nonzero(weight)
    return fit_decay(japanese(trace.t), y, window=(japanese(window[0]), japanese(window[1])))
