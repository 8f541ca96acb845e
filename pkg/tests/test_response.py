import numpy as np
import pytest

from hflandau.dispersion import build_dispersion
from hflandau.model import EquilibriumProfile, PotentialPair
from hflandau.numerics import MomentumGrid
from hflandau.response import (GridMismatchError, LinearModel, SourceTable, StepSizeError, density_from_state,
                               discrete_kernel, exchange_field, gaussian_kernel, hermitian_defect, linear_volterra,
                               ode_oracle, relative_trace_error, source_S, source_table, volterra_density)

POTS = PotentialPair.make(("yukawa", 1.0, 1.0), ("gaussian", 0.05, 1.0))


def make_model(d, M, Kmax, pots=POTS):
    prof = EquilibriumProfile.gaussian()
    grid = MomentumGrid(d, Kmax, M)
    return LinearModel(build_dispersion(prof, pots, grid=grid), prof, pots, grid)


@pytest.mark.parametrize("d,M", [(1, 9), (2, 5)])
def test_exchange_routes_agree(d, M):
    m = make_model(d, M, 1.5)
    rng = np.random.default_rng(1)
    nu = np.where(m.pairs.support, rng.normal(size=m.A.shape) + 1j * rng.normal(size=m.A.shape), 0)
    ref = exchange_field(m, 0.3, nu, route="direct")
    for route in ("matrix", "fft"):
        assert np.allclose(exchange_field(m, 0.3, nu, route=route), ref, atol=1e-14)
    with pytest.raises(ValueError):
        exchange_field(m, 0.3, nu, route="magic")


def test_gaussian_kernel_hermitian_and_real_density():
    m = make_model(2, 7, 1.5)
    nu = gaussian_kernel(m, 1e-2, 0.8)
    assert hermitian_defect(m, nu) == 0.0
    rho = density_from_state(m, 1.3, nu)
    assert np.allclose(rho[m.pairs.neg], np.conj(rho), atol=1e-16)


def test_discrete_kernel_matches_source_of_a():
    m = make_model(1, 17, 2.0)
    t = np.linspace(0, 3, 7)
    J = discrete_kernel(m, t)
    src = source_table(m, t, m.a.astype(complex))
    assert np.allclose(J, src.S, atol=1e-15)


def test_volterra_without_coupling_is_source():
    m = make_model(1, 17, 2.0)
    t = np.linspace(0, 2, 11)
    src = source_table(m, t, gaussian_kernel(m, 1e-2))
    tr = volterra_density(np.zeros_like(src.S), src)
    assert np.array_equal(tr.rho, src.S)
    with pytest.raises(GridMismatchError):
        volterra_density(np.zeros((3, 2)), src)
    bad = SourceTable(np.array([0.0, 0.1, 0.3]), src.k, src.S[:3])
    with pytest.raises(GridMismatchError):
        volterra_density(np.zeros_like(bad.S), bad)


def test_ode_step_guard():
    m = make_model(1, 9, 1.0)
    with pytest.raises(StepSizeError) as err:
        ode_oracle(m, gaussian_kernel(m, 1e-2), 1.0, 10.0)
    assert err.value.suggested <= m.dt_bound()


def test_volterra_matches_oracle_1d():
    m = make_model(1, 33, 3.0)
    nu0 = gaussian_kernel(m, 1e-2)
    dt = 10.0 / np.ceil(10.0 / m.dt_bound())
    oracle = ode_oracle(m, nu0, 10.0, dt)
    volt = linear_volterra(m, oracle.t, nu0)
    assert relative_trace_error(volt, oracle) <= 0.01


def test_forcing_duhamel_matches_oracle():
    m = make_model(1, 17, 2.0)
    nu0 = gaussian_kernel(m, 1e-2)
    sup = m.pairs.support
    shape = np.where(sup, np.exp(-np.sum(m.nodes ** 2, -1))[None, :] * 1e-3, 0.0)
    forcing = lambda t: shape * np.cos(t)
    dt = 4.0 / np.ceil(4.0 / m.dt_bound())
    oracle = ode_oracle(m, nu0, 4.0, dt, forcing=forcing)
    volt = linear_volterra(m, oracle.t, nu0, forcing=forcing)
    assert relative_trace_error(volt, oracle) <= 0.01


def test_single_momentum_source_matches_grid_source():
    prof = EquilibriumProfile.gaussian()
    fld = build_dispersion(prof, PotentialPair.make(), d=1)
    k = np.array([0.5])
    grid = MomentumGrid(1, 8.0, 1601)
    F = lambda p: np.exp(-(np.sum((k - p) ** 2, -1) + np.sum(p ** 2, -1)) / 2)
    t = np.array([0.0, 1.0, 2.0])
    got = source_S(fld, t, k, F, grid)
    exact = np.sqrt(np.pi) * np.exp(-k[0] ** 2 / 4 - k[0] ** 2 * t ** 2)
    assert np.allclose(np.abs(got), exact, rtol=1e-8)
