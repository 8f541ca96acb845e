"""Equilibrium profiles, interaction potentials and structural checks.

An equilibrium is a radial occupation ``g(p) = f(|p|^2)``.  The direct
interaction enters through ``w1`` (Fourier side), the exchange interaction
through ``w2``; both are radial and nonnegative.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import MomentumGrid, quad_sum


class TruncationWarning(UserWarning):
    """A momentum box cuts off a non-negligible part of a profile."""


@dataclass(frozen=True)
class EquilibriumProfile:
    """Occupation profile ``f(e)``.

    kind ``"gaussian"``: ``f(e) = theta*exp(-beta*e)``.
    kind ``"rational"``: ``f(e) = c*(1+e)^(-n1)``.
    """

    kind: str = "gaussian"
    theta: float = 1.0
    beta: float = 1.0
    c: float = 1.0
    n1: float = 8.0
    n0: int = 12

    @classmethod
    def gaussian(cls, theta=1.0, beta=1.0, n0=12, n1=8.0):
        return cls("gaussian", theta=theta, beta=beta, n0=n0, n1=n1)

    @classmethod
    def rational(cls, c=1.0, n1=4.0, n0=12):
        return cls("rational", c=c, n1=n1, n0=n0)

    def __post_init__(self):
        if self.kind not in ("gaussian", "rational"):
            raise ValueError(f"unknown profile kind {self.kind!r}")

    def scaled(self, factor: float) -> "EquilibriumProfile":
        if self.kind == "gaussian":
            return EquilibriumProfile("gaussian", theta=self.theta * factor, beta=self.beta,
                                      n0=self.n0, n1=self.n1)
        return EquilibriumProfile("rational", c=self.c * factor, n1=self.n1, n0=self.n0)

    def f(self, e):
        e = np.asarray(e, dtype=float)
        if self.kind == "gaussian":
            return self.theta * np.exp(-self.beta * e)
        return self.c * (1.0 + e) ** (-self.n1)

    def df(self, e, order: int = 1):
        """Exact derivative ``f^(order)(e)``."""
        e = np.asarray(e, dtype=float)
        if self.kind == "gaussian":
            return self.theta * (-self.beta) ** order * np.exp(-self.beta * e)
        coef = 1.0
        for j in range(order):
            coef *= -(self.n1 + j)
        return self.c * coef * (1.0 + e) ** (-self.n1 - order)

    def g(self, p):
        """``f(|p|^2)`` for momenta stacked along the last axis."""
        p = np.asarray(p, dtype=float)
        return self.f(np.sum(p * p, axis=-1))

    def g_r2(self, r2):
        return self.f(r2)

    def grad_g(self, p):
        p = np.asarray(p, dtype=float)
        return 2.0 * self.df(np.sum(p * p, axis=-1))[..., None] * p

    def tail_radius(self, tol: float = 1e-16) -> float:
        """Radius beyond which ``g < tol * g(0)``."""
        if self.kind == "gaussian":
            return float(np.sqrt(np.log(1.0 / tol) / self.beta))
        return float(np.sqrt(tol ** (-1.0 / self.n1) - 1.0))


@dataclass(frozen=True)
class RadialPotential:
    """Radial Fourier-side potential.

    kinds: ``zero``; ``constant`` (A); ``yukawa`` (A, m2): A/(m2+|k|^2);
    ``gaussian`` (A, beta): A*exp(-beta*|k|^2).
    """

    kind: str = "zero"
    A: float = 0.0
    m2: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "yukawa", "gaussian"):
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.A == 0.0

    def radial(self, r2):
        r2 = np.asarray(r2, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r2)
        if self.kind == "constant":
            return np.full_like(r2, self.A)
        if self.kind == "yukawa":
            return self.A / (self.m2 + r2)
        return self.A * np.exp(-self.beta * r2)

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        return self.radial(np.sum(k * k, axis=-1))

    @property
    def amplitude(self) -> float:
        """``sup |w|`` (attained at k = 0 for every supported kind)."""
        if self.kind == "zero":
            return 0.0
        return float(abs(self.radial(0.0)))


@dataclass(frozen=True)
class PotentialPair:
    w1: RadialPotential = field(default_factory=RadialPotential)
    w2: RadialPotential = field(default_factory=RadialPotential)

    @classmethod
    def make(cls, w1=("zero",), w2=("zero",)):
        """Build from tuples such as ``("yukawa", 1, 1)`` and ``("gaussian", 0.05, 1)``."""
        return cls(_potential_from_tuple(w1), _potential_from_tuple(w2))

    @property
    def eps1(self) -> float:
        return self.w2.amplitude

    @property
    def is_free(self) -> bool:
        return self.w1.is_zero and self.w2.is_zero


def _potential_from_tuple(spec) -> RadialPotential:
    if isinstance(spec, RadialPotential):
        return spec
    kind, *args = spec
    if kind == "zero":
        return RadialPotential("zero")
    if kind == "constant":
        return RadialPotential("constant", A=float(args[0]))
    if kind == "yukawa":
        return RadialPotential("yukawa", A=float(args[0]), m2=float(args[1]))
    if kind == "gaussian":
        return RadialPotential("gaussian", A=float(args[0]), beta=float(args[1]) if len(args) > 1 else 1.0)
    raise ValueError(f"unknown potential kind {kind!r}")


def eval_f(profile: EquilibriumProfile, e):
    e_arr = np.asarray(e, dtype=float)
    if np.any(e_arr < 0):
        raise ValueError("energy argument must be nonnegative")
    out = profile.f(e_arr)
    return float(out) if out.ndim == 0 else out


def eval_g(profile: EquilibriumProfile, p):
    out = profile.g(p)
    return float(out) if np.ndim(out) == 0 else out


def a_kp(profile: EquilibriumProfile, k, p):
    """``g(k) - g(p)``."""
    out = profile.g(k) - profile.g(p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class DensityReport:
    value: float
    tail: float
    ok: bool
    message: str = ""


def background_density(profile: EquilibriumProfile, grid: MomentumGrid, tol: float = 1e-8) -> DensityReport:
    """``(2 pi)^-d`` times the midpoint integral of g, with a box-truncation check.

    The tail estimate is the largest value of g on the faces of the box.
    """
    value = float(np.real(quad_sum(profile.g(grid.nodes()), grid))) / (2 * np.pi) ** grid.d
    face = np.full(grid.d, grid.Kmax)
    face[1:] = 0.0
    tail = float(profile.g(face))
    ok = tail <= tol
    msg = "" if ok else f"profile tail {tail:.3e} at the box face exceeds {tol:.1e}"
    if not ok:
        warnings.warn(msg, TruncationWarning, stacklevel=2)
    return DensityReport(value, tail, ok, msg)


@dataclass
class CheckResult:
    passed: bool
    detail: str


@dataclass
class AssumptionReport:
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def as_dict(self) -> dict:
        return {name: {"passed": c.passed, "detail": c.detail} for name, c in self.checks.items()}


def assumption_check(profile: EquilibriumProfile, potentials: PotentialPair, grid: MomentumGrid,
                     eps1_threshold: float = 0.1, e_max: float = 60.0, n_e: int = 6001) -> AssumptionReport:
    """Sampled checks of the structural hypotheses on f, w1 and w2.

    H1: 0 < f <= 1 on the sampled energies and on the grid, finite density.
    H2: f strictly decreasing; derivative indices consistent with d; finite
        differences of order 1 and 2 decay at least like <e>^-(n1+n) in the
        sense that the weighted derivative is not growing over the upper half
        of the sampled range.
    H3: w1, w2 nonnegative and bounded on the sampled radii.
    H4: exchange amplitude at most the threshold.
    """
    d = grid.d
    checks: dict[str, CheckResult] = {}
    e = np.linspace(0.0, e_max, n_e)
    fe = profile.f(e)
    fg = profile.g(grid.nodes()) if grid.size > 0 else np.array([1.0])
    pos = bool(np.all(fe > 0) and np.all(fe <= 1.0) and np.all(fg > 0) and np.all(fg <= 1.0))
    density = float(quad_sum(fg, grid)) if grid.h > 0 else 0.0
    checks["H1"] = CheckResult(pos and np.isfinite(density),
                               f"f range [{fe.min():.3e}, {fe.max():.3e}], grid density {density:.4e}")

    de = e[1] - e[0]
    d1 = np.gradient(fe, de)
    decreasing = bool(np.all(np.diff(fe) < 0))
    index_ok = profile.n0 > d + 3 and profile.n1 > d
    trends = []
    d2 = np.gradient(d1, de)
    upper = e >= e_max / 2
    for order, deriv in ((1, d1), (2, d2)):
        weighted = np.abs(deriv[upper]) * (1.0 + e[upper]) ** (profile.n1 + order)
        good = weighted > 0
        if np.count_nonzero(good) < 5:
            trends.append(-np.inf)
            continue
        slope = np.polyfit(np.log(e[upper][good]), np.log(weighted[good]), 1)[0]
        trends.append(float(slope))
    decay_ok = all(s <= 0.05 for s in trends)
    checks["H2"] = CheckResult(
        decreasing and index_ok and decay_ok,
        f"decreasing={decreasing}, n0={profile.n0} > {d + 3}: {profile.n0 > d + 3}, "
        f"n1={profile.n1} > {d}: {profile.n1 > d}, weighted-derivative trends {trends}")

    r2 = np.linspace(0.0, max(4.0 * grid.Kmax ** 2 * d, 100.0), 4001)
    ok3 = True
    parts = []
    for name, w in (("w1", potentials.w1), ("w2", potentials.w2)):
        vals = w.radial(r2)
        nonneg = bool(np.all(vals >= 0))
        bounded = bool(np.all(np.isfinite(vals)))
        ok3 &= nonneg and bounded
        parts.append(f"{name}: min {vals.min():.3e}, max {vals.max():.3e}")
    checks["H3"] = CheckResult(ok3, "; ".join(parts))
    eps1 = potentials.eps1
    checks["H4"] = CheckResult(eps1 <= eps1_threshold,
                               f"exchange amplitude {eps1:.3e} vs threshold {eps1_threshold:.3e}")
    return AssumptionReport(checks)
