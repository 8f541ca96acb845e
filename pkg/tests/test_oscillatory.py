import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st

from hflandau.dispersion import build_dispersion
from hflandau.model import EquilibriumProfile, PotentialPair
from hflandau.numerics import MomentumGrid
from hflandau.oscillatory import (OscillationBudgetWarning, OscillatoryBudget, angular_factor,
                                  angular_factor_quadrature, grid_limit_J0, kernel_samples, laplace_weights,
                                  limit_J0, phase_integral)
from hflandau.response import gaussian_density_closed_form


def test_phase_integral_gaussian_closed_form():
    prof = EquilibriumProfile.gaussian()
    fld = build_dispersion(prof, PotentialPair.make(), d=3)
    grid = MomentumGrid(3, 6.0, 61)
    k = np.array([0.7, 0.0, 0.0])
    ts = np.linspace(0, 3 / 0.7, 7)
    F = lambda p: 1e-2 * np.exp(-(np.sum((k - p) ** 2, -1) + np.sum(p ** 2, -1)) / 2)
    got = np.abs(phase_integral(fld, ts, k, F, grid, center=0.5 * k))
    exact = gaussian_density_closed_form(k, ts, 1e-2, 1.0, 3)[:, 0]
    assert np.allclose(got, exact, rtol=1e-10)


def test_budget_warning():
    b = OscillatoryBudget(0.1, 2.0)
    assert b.t_max([1.0]) == pytest.approx(0.25 * np.pi / 0.2)
    assert b.t_max([0.0]) == np.inf
    with pytest.warns(OscillationBudgetWarning):
        b.check(100.0, [1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert b.check(1.0, [1.0])
    with pytest.raises(ValueError):
        OscillatoryBudget(0.1, c_osc=1.5)


@pytest.mark.parametrize("d", [2, 3])
@given(alpha=st.floats(-30, 30))
@settings(max_examples=30, deadline=None)
def test_angular_factor_two_routes(d, alpha):
    a = angular_factor(d, alpha)
    b = angular_factor_quadrature(d, alpha)[0]
    assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_angular_factor_odd_and_small():
    assert angular_factor(3, 0.0) == 0
    x = np.array([1e-9, 0.3, 5.0])
    assert np.allclose(angular_factor(3, -x), -angular_factor(3, x))


@given(lam=st.complex_numbers(max_magnitude=40, allow_nan=False, allow_infinity=False).filter(
    lambda z: z.real > -0.5))
@settings(max_examples=40, deadline=None)
def test_laplace_weights_exact_on_linear(lam):
    dt, n = 0.1, 51
    t = np.arange(n) * dt
    T = t[-1]
    W = laplace_weights(lam, dt, n)[0]
    f = 2.0 + 3.0 * t
    g = lambda s: np.exp(-lam * s) * (2.0 + 3.0 * s)
    exact = (quad(lambda s: g(s).real, 0, T, limit=400, epsabs=1e-13)[0]
             + 1j * quad(lambda s: g(s).imag, 0, T, limit=400, epsabs=1e-13)[0])
    assert abs(W @ f - exact) <= 1e-9 * max(1.0, abs(exact))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_small_k_limit_two_routes(d):
    prof = EquilibriumProfile.gaussian()
    fld = build_dispersion(prof, PotentialPair.make(w2=("gaussian", 0.05, 1)), d=d, r_max=12)
    grid = MomentumGrid(d, 7.0, {1: 1401, 2: 141, 3: 57}[d])
    e = np.ones(d) / np.sqrt(d)
    ts = np.array([0.0, 0.5, 1.0, 2.5])
    radial = limit_J0(fld, prof, ts)
    cart = grid_limit_J0(fld, prof, ts, e, grid)
    assert np.allclose(radial, cart, atol=1e-9)


def test_kernel_samples_axis_merge_matches_full_sum(field3, profile):
    k = np.array([0.8, 0.0, 0.0])
    h = 0.25
    merged = kernel_samples(field3, profile, k, h)
    # the same half-grid sum without merging equal nodes
    radius = profile.tail_radius(1e-16)
    n = int(np.ceil((0.4 + radius) / h))
    grid = MomentumGrid(3, n * h, 2 * n + 1)
    q = grid.nodes()[: grid.size // 2]
    a = profile.g(0.5 * k - q) - profile.g(0.5 * k + q)
    A = field3.omega(0.5 * k - q) - field3.omega(0.5 * k + q)
    ts = np.array([0.3, 1.0, 4.0])
    full = np.array([-2j * grid.weight * np.sum(a * np.sin(t * A)) for t in ts])
    assert np.allclose(merged.J(ts), full, rtol=1e-10, atol=1e-14)
