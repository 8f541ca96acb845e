import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hflandau.dispersion import (PhaseTable, build_dispersion, radial_convolution, theta0_estimate)
from hflandau.model import EquilibriumProfile, PotentialPair, RadialPotential
from hflandau.numerics import MomentumGrid, PairGrid, quad_sum


def gaussian_convolution(theta, beta, A, b, d, r):
    """Closed form of the convolution of theta exp(-beta q^2) with A exp(-b q^2)."""
    s = beta + b
    return theta * A * (np.pi / s) ** (d / 2) * np.exp(-beta * b * r ** 2 / s)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_radial_convolution_closed_form(d):
    prof = EquilibriumProfile.gaussian(0.9, 1.2)
    w2 = RadialPotential("gaussian", 0.05, beta=0.7)
    r = np.linspace(0, 4, 9)
    got = radial_convolution(prof, w2, d, r)
    exact = gaussian_convolution(0.9, 1.2, 0.05, 0.7, d, r)
    assert np.max(np.abs(got - exact)) <= 1e-11 * exact.max()


def test_radial_convolution_cartesian_oracle():
    prof = EquilibriumProfile.rational(1.0, 6.0)
    w2 = RadialPotential("yukawa", 0.05, m2=1.0)
    g = MomentumGrid(2, 12.0, 241)
    q = g.nodes()
    for r in (0.0, 1.3):
        brute = quad_sum(prof.g(q) * w2(np.array([r, 0.0]) - q), g)
        assert radial_convolution(prof, w2, 2, [r])[0] == pytest.approx(brute, rel=2e-4)


def test_free_dispersion_is_schrodinger():
    fld = build_dispersion(EquilibriumProfile.gaussian(), PotentialPair.make(("yukawa", 1, 1)), d=3)
    k = np.array([[0.3, -1.0, 2.0]])
    assert fld.is_free and fld.omega(k)[0] == pytest.approx(np.sum(k ** 2))
    assert np.allclose(fld.grad_omega(k), 2 * k)
    assert fld.hessian_norm() == 0.0


def test_exchange_shift(field3):
    # m(0) = 0 and m falls monotonically: the convolution peaks at the origin
    r = np.linspace(0, 5, 50)
    m = field3.m(r)
    assert m[0] == 0.0 and np.all(np.diff(m) <= 1e-15)
    # m(r) equals the normalised convolution difference
    conv = gaussian_convolution(1.0, 1.0, 0.05, 1.0, 3, r)
    assert np.allclose(m, (conv - conv[0]) / (2 * np.pi) ** 3, atol=1e-9)


@given(st.floats(0.05, 5.0))
@settings(max_examples=25, deadline=None)
def test_grad_omega_matches_differences(r):
    fld = build_dispersion(EquilibriumProfile.gaussian(), PotentialPair.make(w2=("gaussian", 0.05, 1)), d=2, r_max=8)
    k = np.array([r * 0.6, r * 0.8])
    h = 1e-6
    fd = np.array([(fld.omega(k + h * e) - fld.omega(k - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(fld.grad_omega(k), fd, atol=1e-6)


@pytest.mark.parametrize("d,M", [(1, 11), (2, 5), (3, 3)])
def test_phase_table_exact_identities(field3, profile, potentials, d, M):
    grid = MomentumGrid(d, 1.0, M)
    pairs = PairGrid(grid)
    fld = build_dispersion(profile, potentials, grid=grid)
    tab = PhaseTable(fld, pairs)
    K, p = np.nonzero(pairs.support)
    swap = pairs.kminusp[K, p]
    assert np.array_equal(tab.A[K, p], -tab.A[K, swap])
    zero = grid.size // 2
    assert not np.any(tab.A[zero])
    nodes = grid.nodes()
    direct = fld.omega(nodes[K] - nodes[p]) - fld.omega(nodes[p])
    assert np.allclose(tab.A[K, p], direct, atol=1e-13)


def test_theta0_near_two(field3):
    lo, hi = theta0_estimate(field3, MomentumGrid(3, 1.0, 5))
    assert 1.5 < lo <= hi < 2.5
