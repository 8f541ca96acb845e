import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hflandau.dispersion import build_dispersion
from hflandau.model import EquilibriumProfile, PotentialPair
from hflandau.numerics import MomentumGrid
from hflandau.response import (LinearModel, StepSizeError, density_from_state, gaussian_kernel, hermitian_defect,
                               ode_oracle, relative_trace_error)
from hflandau.simulate import (DiagnosticsParams, NumericalAbort, ProfileRHS, auto_dt, hs_norm, p_derivatives,
                               read_checkpoint, run_simulation, scattering_extract, step_rk4, write_checkpoint,
                               zeta_norms)

POTS = PotentialPair.make(("yukawa", 1.0, 1.0), ("gaussian", 0.05, 1.0))


def make_model(d, M, Kmax, pots=POTS):
    prof = EquilibriumProfile.gaussian()
    grid = MomentumGrid(d, Kmax, M)
    return LinearModel(build_dispersion(prof, pots, grid=grid), prof, pots, grid)


def brute_rhs(m, t, nu):
    """Scalar loops over the truncated l-sum; phases from omega directly."""
    g = m.grid
    d, n, h = g.d, g.n, g.h
    idx = [tuple(v) for v in g.index_vectors()]
    where = {v: i for i, v in enumerate(idx)}
    om = lambda v: float(m.field.omega(np.asarray(v, float) * h))
    gf = lambda v: float(m.profile.g(np.asarray(v, float) * h))
    on = lambda v: all(abs(x) <= n for x in v)
    sub = lambda u, v: tuple(a - b for a, b in zip(u, v))
    add = lambda u, v: tuple(a + b for a, b in zip(u, v))
    cell = h ** d
    c = cell / (2 * math.pi) ** d

    def A(K, p):
        return om(sub(K, p)) - om(p)

    def nu_at(K, p):
        if on(K) and on(p) and on(sub(K, p)):
            return nu[where[K], where[p]]
        return 0.0

    gamma = lambda K, p: np.exp(-1j * t * A(K, p)) * nu_at(K, p)
    rho = {K: cell * sum(gamma(K, p) for p in idx) for K in idx}

    def P(K, p):
        if not (on(K) and on(p) and on(sub(K, p))):
            return 0.0
        X = cell * sum(float(m.potentials.w2(np.asarray(sub(q, p), float) * h)) * gamma(K, q) for q in idx)
        return float(m.potentials.w1(np.asarray(K, float) * h)) * rho[K] - X

    Pc = {}

    def Pm(K, p):
        if (K, p) not in Pc:
            Pc[(K, p)] = P(K, p)
        return Pc[(K, p)]

    out = np.zeros_like(nu)
    for K in idx:
        for p in idx:
            if not on(sub(K, p)):
                continue
            val = -(gf(sub(K, p)) - gf(p)) * np.exp(1j * t * A(K, p)) * Pm(K, p)
            acc = 0.0
            for l in idx:
                q1 = add(sub(l, K), p)
                acc += (np.exp(1j * t * (om(sub(K, p)) - om(q1))) * Pm(l, q1) * nu_at(sub(K, l), p))
                acc -= (np.exp(-1j * t * (om(p) - om(sub(l, p)))) * Pm(l, p) * nu_at(sub(K, l), sub(p, l)))
            out[where[K], where[p]] = -1j * (val + c * acc)
    return out


def random_hermitian(m, seed, scale=1e-2):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=m.A.shape) + 1j * rng.normal(size=m.A.shape)
    rows, cols = m.pairs.hermitian_partner()
    sup = m.pairs.support
    herm = 0.5 * (raw + np.conj(raw[rows, cols.clip(0)]))
    return scale * np.where(sup, herm, 0.0)


@pytest.mark.parametrize("d,M,Kmax", [(1, 9, 2.0), (2, 5, 1.5), (3, 3, 1.0)])
def test_rhs_matches_brute_force_sum(d, M, Kmax):
    m = make_model(d, M, Kmax)
    nu = random_hermitian(m, d)
    fast = ProfileRHS(m)(0.37, nu)
    slow = brute_rhs(m, 0.37, nu)
    assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_rhs_single_cell_brute_force():
    m = make_model(2, 5, 1.5)
    nu = np.zeros(m.A.shape, dtype=complex)
    K, p = 13, 7   # an interior supported pair
    assert m.pairs.support[K, p]
    nu[K, p] = 0.02 + 0.01j
    fast = ProfileRHS(m)(1.1, nu)
    slow = brute_rhs(m, 1.1, nu)
    assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_fixed_points():
    m = make_model(2, 5, 1.5)
    rhs = ProfileRHS(m)
    assert not np.any(rhs(0.4, np.zeros(m.A.shape, dtype=complex)))
    free = make_model(2, 5, 1.5, PotentialPair.make())
    assert not np.any(ProfileRHS(free)(0.4, random_hermitian(free, 3)))


@given(st.integers(0, 10_000))
@settings(max_examples=10, deadline=None)
def test_rk4_preserves_hermiticity_and_mass(seed):
    m = make_model(2, 5, 1.5)
    nu = random_hermitian(m, seed, 0.05)
    rhs = ProfileRHS(m)
    dt = m.dt_bound()
    rho0 = density_from_state(m, 0.0, nu)[m.grid.size // 2]
    for j in range(10):
        nu = step_rk4(rhs, j * dt, nu, dt)
    assert hermitian_defect(m, nu) <= 1e-12
    assert abs(density_from_state(m, 10 * dt, nu)[m.grid.size // 2] - rho0) <= 1e-14


def test_step_guard():
    m = make_model(1, 9, 1.0)
    with pytest.raises(StepSizeError):
        step_rk4(ProfileRHS(m), 0.0, gaussian_kernel(m, 1e-2), 1.0)


def test_linear_only_matches_oracle():
    m = make_model(1, 33, 3.0)
    nu0 = gaussian_kernel(m, 1e-2)
    T = 8.0
    dt = auto_dt(m, T)
    res = run_simulation(m, nu0, T, dt=dt, linear_only=True)
    oracle = ode_oracle(m, nu0, T, dt, exchange=True)
    assert relative_trace_error(res.density, oracle) <= 0.01


def test_rk4_fourth_order():
    m = make_model(1, 17, 2.0)
    nu0 = random_hermitian(m, 5, 0.5)
    rhs = ProfileRHS(m)
    T, dt0 = 1.0, auto_dt(m, 1.0)
    finals = []
    for k in (1, 2, 4):
        dt, nu = dt0 / k, nu0.copy()
        for j in range(int(round(T / dt))):
            nu = step_rk4(rhs, j * dt, nu, dt)
        finals.append(nu)
    ratio = hs_norm(m, finals[0] - finals[1]) / hs_norm(m, finals[1] - finals[2])
    assert math.log2(ratio) >= 3.5


def test_p_derivatives_exact_on_quadratics():
    m = make_model(2, 7, 1.5)
    nodes = m.nodes
    F = np.broadcast_to((nodes[:, 0] ** 2 + 3 * nodes[:, 0] * nodes[:, 1] - nodes[:, 1])[None, :], m.A.shape)
    D = p_derivatives(m.grid, m.pairs.support, F, 2)
    ok = D[(1, 1)] != 0
    assert ok.any() and np.allclose(D[(1, 1)][ok], 3.0)
    ok = D[(2, 0)] != 0
    assert np.allclose(D[(2, 0)][ok], 2.0)
    ok = D[(0, 1)] != 0
    assert np.allclose(D[(0, 1)][ok], (3 * nodes[:, 0] - 1)[None, :].repeat(m.grid.size, 0)[ok])


def test_zeta_properties():
    m = make_model(2, 7, 1.5)
    nu0 = gaussian_kernel(m, 1e-2, 0.6)
    res = run_simulation(m, nu0, 3.0, snapshot_every=0.5)
    diag = res.diagnostics
    assert np.all(np.diff(diag.zeta) >= 0) and min(diag.zeta) >= 0
    for key in diag.H:
        assert np.all(np.array(diag.H_star[key]) <= np.array(diag.H[key]))
    zero = zeta_norms(m, [0.0, 1.0], [np.zeros_like(nu0)] * 2)
    assert zero.zeta == [0.0, 0.0]
    assert '"sigma": 6.5' in diag.to_json()


def test_free_run_is_static_and_scatters_trivially():
    m = make_model(2, 5, 1.5, PotentialPair.make())
    nu0 = gaussian_kernel(m, 1e-2, 0.6)
    res = run_simulation(m, nu0, 2.0, snapshot_every=0.5)
    assert np.array_equal(res.scattering.terminal, nu0)
    assert not np.any(res.scattering.cauchy)
    zero = run_simulation(m, np.zeros_like(nu0), 1.0)
    assert not np.any(zero.density.rho)


def test_scattering_fit_and_missing_snapshot():
    m = make_model(1, 17, 2.0)
    times = np.linspace(0, 16, 33)
    base = gaussian_kernel(m, 1e-2)
    states = [base * (1 + 1.0 / (1 + t) ** 2) for t in times]
    res = scattering_extract(m, times, states)
    assert res.fit is not None and res.fit.exponent < -1.0
    from hflandau.numerics import InsufficientDataError
    with pytest.raises(InsufficientDataError):
        scattering_extract(m, times, states, T=3.3)


def test_numerical_abort():
    m = make_model(1, 9, 1.0)
    nu0 = gaussian_kernel(m, 1e-2)
    nu0[4, 4] = np.nan
    with pytest.raises(NumericalAbort) as err:
        run_simulation(m, nu0, 1.0)
    assert err.value.last_time == 0.0


def test_checkpoint_round_trip(tmp_path):
    m = make_model(2, 5, 1.5)
    nu = random_hermitian(m, 9)
    write_checkpoint(tmp_path / "c.bin", m.grid, 2.5, nu)
    grid, t, back = read_checkpoint(tmp_path / "c.bin")
    assert grid == m.grid and t == 2.5 and np.array_equal(back, nu)
    (tmp_path / "bad.bin").write_bytes(b"x" * 64)
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "bad.bin")


def test_snapshot_grid_contains_half_horizon():
    m = make_model(1, 9, 1.0)
    dt = auto_dt(m, 20.0, snapshot_every=0.5)
    assert (0.5 / dt) == pytest.approx(round(0.5 / dt)) and dt <= m.dt_bound()
