"""Plain-text ``key = value`` run configuration."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields

from .dispersion import build_dispersion
from .model import EquilibriumProfile, PotentialPair
from .numerics import MomentumGrid


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass
class RunConfig:
    dimension: int = 3
    grid_points: int = 9
    kmax: float = 1.0
    dt: float = 0.0              # 0 means automatic
    horizon: float = 20.0
    equilibrium: str = "gaussian"
    eq_theta: float = 1.0
    eq_beta: float = 1.0
    eq_c: float = 1.0
    eq_n0: int = 12
    eq_n1: float = 8.0
    w1: str = "yukawa"
    w1_amplitude: float = 1.0
    w1_mass2: float = 1.0
    w1_beta: float = 1.0
    w2: str = "gaussian"
    w2_amplitude: float = 0.05
    w2_mass2: float = 1.0
    w2_beta: float = 1.0
    eps1_threshold: float = 0.1
    initial_amplitude: float = 1e-2
    initial_width: float = 0.25
    sigma: float = 6.5
    weight_order: int = 4
    delta: float = 0.1
    snapshot_every: float = 0.5
    scan_lambda: float = 5.0
    scan_kmax: float = 8.0
    scan_nk: int = 33
    green_k: str = "0.25,0.5,1.0"
    linear_grid_points: int = 65
    linear_kmax: float = 4.0
    linear_dimension: int = 1
    seed: int = 0

    # ------------------------------------------------------------ builders
    def profile(self) -> EquilibriumProfile:
        if self.equilibrium == "gaussian":
            return EquilibriumProfile.gaussian(self.eq_theta, self.eq_beta, n0=self.eq_n0, n1=self.eq_n1)
        return EquilibriumProfile.rational(self.eq_c, self.eq_n1, n0=self.eq_n0)

    def potentials(self) -> PotentialPair:
        return PotentialPair.make(_pot(self.w1, self.w1_amplitude, self.w1_mass2, self.w1_beta),
                                  _pot(self.w2, self.w2_amplitude, self.w2_mass2, self.w2_beta))

    def grid(self) -> MomentumGrid:
        return MomentumGrid(self.dimension, self.kmax, self.grid_points)

    def field(self, for_scan: bool = False, d: int | None = None, grid: MomentumGrid | None = None):
        d = d or self.dimension
        prof = self.profile()
        r_max = None
        if for_scan:
            r_max = max(1.0, self.scan_kmax + 2 * prof.tail_radius(1e-16))
        if grid is not None:
            return build_dispersion(prof, self.potentials(), grid=grid, r_max=r_max)
        return build_dispersion(prof, self.potentials(), grid=self.grid() if d == self.dimension else None,
                                d=d, r_max=r_max or (None if d == self.dimension else 2 * math.sqrt(d) * self.kmax))

    def green_ks(self) -> list:
        return [float(x) for x in self.green_k.split(",") if x.strip()]

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    def constraint_warnings(self) -> list:
        """Parameter relations assumed by the decay theory; violations are warnings."""
        w = []
        d, n0, n1 = self.dimension, self.eq_n0, self.eq_n1
        if not n0 > d + 3:
            w.append(f"n0 = {n0} should exceed d + 3 = {d + 3}")
        if not n1 > d:
            w.append(f"n1 = {n1} should exceed d = {d}")
        if not self.sigma > 2 * d:
            w.append(f"sigma = {self.sigma} should exceed 2d = {2 * d}; diagnostics use it as given")
        if not self.sigma <= 2 * n1:
            w.append(f"sigma = {self.sigma} should be at most 2 n1 = {2 * n1}; diagnostics use it as given")
        if not self.weight_order > d:
            w.append(f"weight_order = {self.weight_order} should exceed d = {d}; diagnostics use it as given")
        if not self.weight_order <= n0 - 3:
            w.append(f"weight_order = {self.weight_order} should be at most n0 - 3 = {n0 - 3}")
        return w


def _pot(kind, amp, m2, beta):
    if kind == "zero":
        return ("zero",)
    if kind == "constant":
        return ("constant", amp)
    if kind == "yukawa":
        return ("yukawa", amp, m2)
    if kind == "gaussian":
        return ("gaussian", amp, beta)
    raise ConfigError(f"unknown potential kind {kind!r}")


_CHOICES = {"equilibrium": {"gaussian", "rational"},
            "w1": {"zero", "constant", "yukawa", "gaussian"},
            "w2": {"zero", "constant", "yukawa", "gaussian"}}


def parse_config_text(text: str) -> tuple[RunConfig, list]:
    types = {f.name: f.type for f in fields(RunConfig)}
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", no)
        kind = types[key]
        lines[key] = no
        try:
            if kind in ("int", int):
                values[key] = int(val)
            elif kind in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"cannot read {key} = {val!r} as {kind}", no) from None
        if key in _CHOICES and values[key] not in _CHOICES[key]:
            raise ConfigError(f"{key} must be one of {sorted(_CHOICES[key])}", no)
    cfg = RunConfig(**values)
    problems = []

    def bad(key, msg):
        problems.append(f"line {lines[key]}: {msg}" if key in lines else msg)

    for key in ("dimension", "linear_dimension"):
        if getattr(cfg, key) not in (1, 2, 3):
            bad(key, f"{key} must be 1, 2 or 3")
    for key in ("grid_points", "linear_grid_points"):
        v = getattr(cfg, key)
        if v < 1 or v % 2 == 0:
            bad(key, f"{key} must be a positive odd integer")
    for key in ("kmax", "horizon", "initial_width", "scan_lambda", "scan_kmax", "snapshot_every", "linear_kmax"):
        if not getattr(cfg, key) > 0:
            bad(key, f"{key} must be positive")
    if cfg.dt < 0:
        bad("dt", "dt must be nonnegative (0 selects it automatically)")
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg, cfg.constraint_warnings()


def parse_config(path) -> tuple[RunConfig, list]:
    """Read a configuration file; returns the config and a list of warnings."""
    if path is None:
        return RunConfig(), RunConfig().constraint_warnings()
    with open(path) as fh:
        return parse_config_text(fh.read())
