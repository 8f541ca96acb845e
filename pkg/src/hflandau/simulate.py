"""Nonlinear profile evolution on the pair grid, its diagnostics and the scattering limit.

The unknown is the profile ``nu[K, p]`` (the state conjugated by the free
flow), stored like :mod:`hflandau.response` kernels.  With
``gamma = exp(-itA) nu`` and ``P = w1 rho - X`` the equation is

    i d/dt nu = exp(itA) [ -a P + c (T1 - T2) ],   c = h^d / (2 pi)^d,

where, in the relative layout ``o(k, p) = (.)[k + p, p]`` and with ``R`` the
row reflection ``k -> -k``,

    T1 = P_o @ R gamma_o,     T2 = gamma_o @ R P_o.

These are the commutator sums over the intermediate momentum written as
square matrix products; pairs whose shifted indices leave the grid drop out.
"""
from __future__ import annotations

import json
import math
import struct
import time as _time
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import InsufficientDataError, MomentumGrid, fit_decay, japanese
from .response import (DensityTrace, LinearModel, StepSizeError, density_from_state, exchange_field,
                       hermitian_defect, meanfield_P)


class NumericalAbort(RuntimeError):
    def __init__(self, message, last_time):
        super().__init__(message)
        self.last_time = last_time


@dataclass
class StateKernel:
    nu: np.ndarray
    t: float
    defect: float = 0.0


class ProfileRHS:
    """Right-hand side of the profile equation on one model (index tables cached)."""

    def __init__(self, model: LinearModel):
        self.model = model
        pairs = model.pairs
        self.sup = pairs.support
        self.rel_rows, self.rel_mask = pairs.to_relative()
        self.cols = np.broadcast_to(np.arange(pairs.N)[None, :], (pairs.N, pairs.N))
        self.back_rows = pairs.kminusp.clip(0)
        self.neg = pairs.neg
        self.c = model.cell / (2 * math.pi) ** model.grid.d
        self.sup_f = self.sup.astype(float)
        self._phases = {}
        self.free = model.potentials.is_free

    def phase(self, t):
        """``exp(-i t A)``; one RK4 step touches three stage times and the last is the next start."""
        ph = self._phases.get(t)
        if ph is None:
            ph = np.exp(-1j * t * self.model.A)
            if len(self._phases) >= 3:
                self._phases.pop(next(iter(self._phases)))
            self._phases[t] = ph
        return ph

    def to_relative(self, X):
        return np.where(self.rel_mask, X[self.rel_rows, self.cols], 0.0)

    def from_relative(self, Y):
        return np.where(self.sup, Y[self.back_rows, self.cols], 0.0)

    def fields(self, t, nu):
        """``(gamma, rho, X, P)`` at time ``t``."""
        m = self.model
        gamma = self.phase(t) * nu
        rho = m.cell * gamma.sum(axis=1)
        X = exchange_field(m, 0.0, gamma)
        P = meanfield_P(m, rho, X)
        P *= self.sup_f
        return gamma, rho, X, P

    def __call__(self, t, nu, linear_only: bool = False):
        if self.free:
            return np.zeros_like(nu)
        m = self.model
        gamma, rho, X, P = self.fields(t, nu)
        if not np.any(P):
            # every term carries a factor of P
            return np.zeros_like(nu)
        inner = -m.a * P
        if not linear_only:
            Po = self.to_relative(P)
            go = self.to_relative(gamma)
            T = Po @ go[self.neg] - go @ Po[self.neg]
            inner = inner + self.c * self.from_relative(T)
        return -1j * np.conj(self.phase(t)) * inner


def rhs_profile(model: LinearModel, t: float, nu: np.ndarray, linear_only: bool = False) -> np.ndarray:
    return ProfileRHS(model)(t, nu, linear_only)


def step_rk4(rhs: ProfileRHS, t: float, nu: np.ndarray, dt: float, c_step: float = 0.5,
             linear_only: bool = False) -> np.ndarray:
    bound = rhs.model.dt_bound(c_step)
    if dt > bound * (1 + 1e-12):
        raise StepSizeError(dt, bound)
    k1 = rhs(t, nu, linear_only)
    k2 = rhs(t + 0.5 * dt, nu + 0.5 * dt * k1, linear_only)
    k3 = rhs(t + 0.5 * dt, nu + 0.5 * dt * k2, linear_only)
    k4 = rhs(t + dt, nu + dt * k3, linear_only)
    return nu + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------- diagnostics

def p_derivatives(grid: MomentumGrid, support: np.ndarray, F: np.ndarray, order: int = 2):
    """Central differences in ``p`` at fixed ``K`` for every multi-index of order <= ``order``.

    Returns ``{alpha: array}``; entries whose stencil leaves the support are
    set to zero (not counted in the suprema).
    """
    d, M, h, N = grid.d, grid.M, grid.h, grid.size
    shape = (N,) + (M,) * d
    Fg = np.where(support, F, 0.0).reshape(shape)
    S = support.reshape(shape)
    out = {(0,) * d: np.where(support, F, 0.0)}
    if order < 1 or h == 0:
        return out

    def shift(arr, axis, s):
        res = np.zeros_like(arr)
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        if s > 0:
            src[axis], dst[axis] = slice(s, None), slice(None, -s)
        else:
            src[axis], dst[axis] = slice(None, s), slice(-s, None)
        res[tuple(dst)] = arr[tuple(src)]
        return res

    def central(arr, ok, axis):
        plus, minus = shift(arr, axis, 1), shift(arr, axis, -1)
        okp, okm = shift(ok, axis, 1), shift(ok, axis, -1)
        return (plus - minus) / (2 * h), ok & okp & okm

    firsts = {}
    for i in range(d):
        ax = i + 1
        D1, ok1 = central(Fg, S, ax)
        firsts[i] = (D1, ok1)
        alpha = tuple(1 if j == i else 0 for j in range(d))
        out[alpha] = np.where(ok1, D1, 0.0).reshape(N, N)
    if order >= 2:
        for i in range(d):
            for j in range(i, d):
                alpha = tuple((1 if q == i else 0) + (1 if q == j else 0) for q in range(d))
                if i == j:
                    ax = i + 1
                    plus, minus = shift(Fg, ax, 1), shift(Fg, ax, -1)
                    ok = S & shift(S, ax, 1) & shift(S, ax, -1)
                    D2 = (plus - 2 * Fg + minus) / h ** 2
                else:
                    D1, ok1 = firsts[i]
                    D2, ok = central(D1, ok1, j + 1)
                out[alpha] = np.where(ok, D2, 0.0).reshape(N, N)
    return out


@dataclass
class DiagnosticsParams:
    sigma: float = 6.5
    N: int = 4
    delta: float = 0.1
    order: int = 2


@dataclass
class SimDiagnostics:
    params: dict
    t: list = field(default_factory=list)
    zeta_rho: list = field(default_factory=list)
    zeta_mu: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    H: dict = field(default_factory=dict)
    H_star: dict = field(default_factory=dict)
    density_fit: dict | None = None
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _weights(grid: MomentumGrid, sigma: float, delta: float):
    nodes = grid.nodes()
    kn = np.linalg.norm(nodes, axis=-1)
    kmp = nodes[:, None, :] - nodes[None, :, :]
    side = np.minimum(japanese(np.linalg.norm(kmp, axis=-1)), japanese(kn)[None, :]) ** sigma
    low = np.minimum(1.0, kn ** delta)
    return kn, low[:, None] * side


def zeta_entry(model: LinearModel, t: float, nu: np.ndarray, rho: np.ndarray, X: np.ndarray,
               params: DiagnosticsParams, eps1: float):
    """Instantaneous bracket values of the iterative norms (before the sup over time).

    Derivatives in ``p`` are truncated at order ``params.order``.  Returns
    ``(rho_part, mu_part, H, H_star)`` with ``H[m]``, ``H_star[m]`` for
    ``m <= order``.
    """
    g = model.grid
    sig, Nw, dl = params.sigma, params.N, params.delta
    kn, base = _weights(g, sig, dl)
    kw = japanese(kn)
    decay = kw ** sig * japanese(kn * t) ** Nw
    dens = float(np.max(decay * np.abs(rho)))
    derivs = p_derivatives(g, model.pairs.support, nu, params.order)
    H = {m: 0.0 for m in range(params.order + 1)}
    Hs = {m: 0.0 for m in range(params.order + 1)}
    for alpha, D in derivs.items():
        o = sum(alpha)
        vH = float(np.max(base * (kw ** (sig + 1))[:, None] * np.abs(D)))
        vS = float(np.max(base * (kw ** sig)[:, None] * np.abs(D)))
        for m in range(o, params.order + 1):
            H[m] += vH
            Hs[m] += vS
    ex = None
    if X is not None and np.any(X):
        if eps1 == 0:
            ex = None
        else:
            xd = p_derivatives(g, model.pairs.support, X, params.order)
            ex = sum(float(np.max(decay[:, None] * np.abs(D))) for D in xd.values()) / eps1
    sw = japanese(t) ** (-dl)
    rho_part = sw * dens + (sw * ex if ex is not None else 0.0)
    top = params.order
    mu_part = H[max(0, min(top, Nw - 2))] + sw * Hs[min(top, Nw - 1)] + japanese(t) ** (-1 - dl) * Hs[min(top, Nw)]
    return rho_part, mu_part, H, Hs, ex is None and X is not None and np.any(X)


def zeta_norms(model: LinearModel, times, states, params: DiagnosticsParams | None = None) -> SimDiagnostics:
    """Running suprema of the iterative norms over the given snapshots."""
    params = params or DiagnosticsParams()
    eps1 = model.potentials.eps1
    diag = SimDiagnostics(asdict(params))
    diag.notes.append(f"p-derivatives truncated at order {params.order} (central differences)")
    zr = zm = 0.0
    for t, nu in zip(times, states):
        gamma = np.exp(-1j * t * model.A) * nu
        rho = density_from_state(model, t, nu)
        X = exchange_field(model, 0.0, gamma)
        r, m, H, Hs, na = zeta_entry(model, t, nu, rho, X, params, eps1)
        if na and "exchange term not applicable (eps1 = 0)" not in diag.notes:
            diag.notes.append("exchange term not applicable (eps1 = 0)")
        zr, zm = max(zr, r), max(zm, m)
        diag.t.append(float(t))
        diag.zeta_rho.append(zr)
        diag.zeta_mu.append(zm)
        diag.zeta.append(zr + zm)
        for key in H:
            diag.H.setdefault(str(key), []).append(H[key])
            diag.H_star.setdefault(str(key), []).append(Hs[key])
    return diag


# ---------------------------------------------------------------- scattering

@dataclass
class ScatteringResult:
    terminal: np.ndarray
    t: np.ndarray
    cauchy: np.ndarray
    fit: object
    conclusive: bool
    meta: dict = field(default_factory=dict)


def hs_norm(model: LinearModel, F: np.ndarray) -> float:
    """Discrete Hilbert-Schmidt norm ``(h^{2d} sum |F|^2)^{1/2}``."""
    return float(model.cell * np.sqrt(np.sum(np.abs(F) ** 2)))


def scattering_extract(model: LinearModel, times, states, T: float | None = None,
                       nu0: np.ndarray | None = None, window=(1 / 8, 1 / 2)) -> ScatteringResult:
    """Cauchy trace ``||nu(t) - nu(T)||`` and its power-law fit over ``[T/8, T/2]``.

    ``times``/``states`` are snapshots; ``T`` defaults to the last one, which
    becomes the surrogate for the scattering limit.
    """
    times = np.asarray(times, dtype=float)
    if T is None:
        T = times[-1]
    j_end = int(np.argmin(np.abs(times - T)))
    if abs(times[j_end] - T) > 1e-9 * max(T, 1):
        raise InsufficientDataError(f"no snapshot at T = {T}")
    term = states[j_end]
    ts = times[: j_end + 1]
    trace = np.array([hs_norm(model, s - term) for s in states[: j_end + 1]])
    ref = hs_norm(model, nu0 if nu0 is not None else states[0])
    j_half = int(np.argmin(np.abs(ts - T / 2)))
    conclusive = ref > 0 and trace[j_half] < 0.1 * ref
    fit = None
    if np.any(trace[1:j_end] > 0):
        lo, hi = window[0] * T, window[1] * T
        sel = (ts >= lo - 1e-12) & (ts <= hi + 1e-12) & (trace > 0)
        if sel.sum() >= 5:
            fit = fit_decay(japanese(ts[sel]), trace[sel])
        else:
            conclusive = False
    return ScatteringResult(term, ts, trace, fit, bool(conclusive),
                            {"T": float(T), "window": [window[0] * T, window[1] * T],
                             "reference_norm": ref, "limit_hamiltonian": "free flow with the tabulated omega"})


# ---------------------------------------------------------------- driver

@dataclass
class SimConfig:
    d: int = 3
    M: int = 9
    Kmax: float = 1.0
    eps0: float = 1e-2
    width: float = 0.25
    T: float = 20.0
    dt: float | None = None
    c_step: float = 0.5
    snapshot_every: float = 0.5
    linear_only: bool = False
    diagnostics: DiagnosticsParams = field(default_factory=DiagnosticsParams)


@dataclass
class SimulationResult:
    density: DensityTrace
    diagnostics: SimDiagnostics
    scattering: ScatteringResult
    snapshot_t: np.ndarray
    snapshots: list
    mass_drift: float
    hermitian_defect: float
    wall: float


def auto_dt(model: LinearModel, T: float, c_step: float = 0.5, snapshot_every: float | None = None) -> float:
    """Largest admissible step dividing ``T`` (and ``snapshot_every`` when it divides ``T``)."""
    bound = model.dt_bound(c_step)
    if snapshot_every:
        n_snap = T / snapshot_every
        if abs(n_snap - round(n_snap)) < 1e-9 and round(n_snap) > 0:
            return snapshot_every / math.ceil(snapshot_every / bound)
    return T / math.ceil(T / bound)


def run_simulation(model: LinearModel, nu0: np.ndarray, T: float, dt: float | None = None,
                   c_step: float = 0.5, snapshot_every: float = 0.5, linear_only: bool = False,
                   params: DiagnosticsParams | None = None, progress=None) -> SimulationResult:
    """RK4 trajectory with the density recorded every step.

    Snapshots of the profile are kept every ``snapshot_every`` time units for
    the diagnostics and the scattering trace.  A non-finite state aborts with
    the last valid time.
    """
    start = _time.perf_counter()
    rhs = ProfileRHS(model)
    dt = dt or auto_dt(model, T, c_step, snapshot_every)
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1):
        raise ValueError("T must be a multiple of dt")
    snap_stride = max(1, int(round(snapshot_every / dt)))
    nu = nu0.astype(complex).copy()
    ts = [0.0]
    rhos = [density_from_state(model, 0.0, nu)]
    snap_t, snaps = [0.0], [nu.copy()]
    zero = model.grid.size // 2
    rho00 = rhos[0][zero]
    drift = 0.0
    for j in range(n):
        t = j * dt
        new = step_rk4(rhs, t, nu, dt, c_step, linear_only)
        if not np.all(np.isfinite(new)):
            raise NumericalAbort(f"non-finite state after t = {t:.6g}", t)
        nu = new
        tn = (j + 1) * dt
        rho = density_from_state(model, tn, nu)
        ts.append(tn)
        rhos.append(rho)
        drift = max(drift, abs(rho[zero] - rho00))
        if (j + 1) % snap_stride == 0 or j + 1 == n:
            snap_t.append(tn)
            snaps.append(nu.copy())
        if progress:
            progress(j + 1, n)
    trace = DensityTrace(np.array(ts), model.nodes, np.array(rhos), "nonlinear" if not linear_only else "linear",
                         final_state=nu)
    diag = zeta_norms(model, snap_t, snaps, params)
    try:
        if T <= 2.0:
            raise InsufficientDataError("trajectory shorter than the fit window")
        fit = fit_decay(japanese(trace.t), trace.l1_nonzero(model.cell), window=(japanese(2.0), japanese(min(20.0, T))))
        diag.density_fit = fit.as_dict()
    except InsufficientDataError:
        diag.density_fit = None
    scat = scattering_extract(model, snap_t, snaps, nu0=nu0)
    return SimulationResult(trace, diag, scat, np.array(snap_t), snaps, float(drift),
                            hermitian_defect(model, nu), _time.perf_counter() - start)


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"HFLCKPT1"
_HEADER = struct.Struct("<8sIIIdd")  # magic, d, M, reserved, Kmax, t


def write_checkpoint(path, grid: MomentumGrid, t: float, nu: np.ndarray):
    """Header (magic, d, M, 0, Kmax, t; little-endian) then ``nu`` row-major as (re, im) float64 pairs."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, grid.d, grid.M, 0, grid.Kmax, t))
        fh.write(np.ascontiguousarray(nu, dtype="<c16").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, d, M, _, Kmax, t = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a checkpoint file")
    N = M ** d
    nu = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(N, N).copy()
    return MomentumGrid(d, Kmax, M), t, nu
