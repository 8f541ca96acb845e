import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hflandau.dispersion import build_dispersion
from hflandau.model import EquilibriumProfile, PotentialPair, RadialPotential
from hflandau.penrose import (BinningError, PenroseConfig, ResponseKernel, ZeroLimitKernel, ZeroMomentumError,
                              boundary_D, cauchy_D, dispersion_D, generic_direction, level_set_h, limit_D0,
                              rescaled_D, stability_scan, winding_number)


@pytest.fixture(scope="module")
def kernel1(field1, profile, potentials):
    return ResponseKernel(field1, profile, potentials.w1, [1.0])


def test_free_coupling_gives_unit_D(field1, profile):
    assert dispersion_D(field1, profile, RadialPotential(), 0.3 + 1j, [0.5]).value == 1.0
    scan = stability_scan(field1, profile, PotentialPair.make(), PenroseConfig(n_k=3, n_re=3, n_im=5, winding_k=()))
    assert scan.c0 == 1.0


def test_zero_momentum_rejected(field1, profile, potentials):
    with pytest.raises(ZeroMomentumError):
        ResponseKernel(field1, profile, potentials.w1, [0.0])


def test_rescaling_consistent(field1, profile, potentials, kernel1):
    lam = np.array([0.4 + 0.3j])
    k = np.array([2.0])
    rk = ResponseKernel(field1, profile, potentials.w1, k)
    assert rk.D(lam)[0] == pytest.approx(rk.D_s(lam / 2.0)[0], rel=1e-14)
    s = rescaled_D(field1, profile, potentials.w1, 0.2 + 0.5j, k)
    d = dispersion_D(field1, profile, potentials.w1, 2 * (0.2 + 0.5j), k)
    assert complex(s) == pytest.approx(complex(d), rel=1e-10)


@given(st.floats(0.0, 3.0), st.floats(-3.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_conjugate_symmetry(re, im):
    prof = EquilibriumProfile.gaussian()
    pots = PotentialPair.make(("yukawa", 1, 1), ("gaussian", 0.05, 1))
    fld = _FIELD.setdefault("f", build_dispersion(prof, pots, d=1, r_max=30))
    rk = _FIELD.setdefault("rk", ResponseKernel(fld, prof, pots.w1, [0.7]))
    a = rk.D_s(np.array([re + 1j * im]))[0]
    b = rk.D_s(np.array([re - 1j * im]))[0]
    assert abs(b - np.conj(a)) <= 1e-12 * abs(a)


_FIELD = {}


def test_large_lambda_tends_to_one(kernel1):
    big = kernel1.D_s(np.array([200.0 + 0j, 50 + 150j]))
    assert np.all(np.abs(big - 1) < 0.02)


def test_time_route_converges_to_simpson(field1, profile, potentials):
    from hflandau.green import mf_quadrature
    lam = np.array([0.3 + 0.2j, 1.0 - 0.7j])
    ref = mf_quadrature(ResponseKernel(field1, profile, potentials.w1, [1.0]), lam, ds=0.0025)
    errs = [np.max(np.abs(ResponseKernel(field1, profile, potentials.w1, [1.0], ds=ds).m_f(lam) - ref) / np.abs(ref))
            for ds in (0.02, 0.01)]
    assert errs[0] <= 2e-4
    assert 3.0 < errs[0] / errs[1] < 5.0   # second order in the sample spacing


def test_small_k_limit_continuity(field1, profile, potentials):
    z = ZeroLimitKernel(field1, profile, potentials.w1)
    lam = np.array([0.5 + 0.5j])
    tiny = ResponseKernel(field1, profile, potentials.w1, [0.01]).D_s(lam)[0]
    assert z.D_s(lam)[0] == pytest.approx(tiny, rel=2e-3)
    assert complex(limit_D0(field1, profile, potentials.w1, lam[0])) == pytest.approx(z.D_s(lam)[0], rel=1e-12)


@pytest.mark.parametrize("kn", [0.5, 2.0])
def test_level_set_routes_agree(field1, profile, potentials, kn):
    hk = level_set_h(field1, profile, kn)
    assert hk.oddness_defect() <= 1e-10
    assert hk.positive_side_max() == 0.0 or hk.positive_side_max() <= 1e-6 * np.max(np.abs(hk.h))
    rk = ResponseKernel(field1, profile, potentials.w1, [kn])
    lam = np.array([0.2 + 0.4j, 0.2 - 1.1j])
    assert np.allclose(cauchy_D(hk, rk.w1k, lam), rk.D_s(lam), rtol=0.02)
    # Plemelj boundary value agrees with the Cauchy transform as Re lam -> 0
    edge = boundary_D(hk, rk.w1k, [0.3])[0]
    near = cauchy_D(hk, rk.w1k, [0.01 + 0.3j])[0]
    assert abs(edge - near) <= 0.03 * abs(near)
    with pytest.raises(ValueError):
        boundary_D(hk, rk.w1k, [1e3])


def test_binning_guard(field1, profile):
    with pytest.raises(BinningError):
        level_set_h(field1, profile, 1.0, du=1e-6)


def test_level_set_csv(tmp_path, field1, profile):
    hk = level_set_h(field1, profile, 1.0)
    hk.write_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "u,h" and len(rows) == len(hk.u) + 1


def test_generic_direction_unit():
    for d in (1, 2, 3):
        e = generic_direction(d)
        assert np.linalg.norm(e) == pytest.approx(1.0)


@given(st.complex_numbers(max_magnitude=8, allow_nan=False, allow_infinity=False))
@settings(max_examples=40, deadline=None)
def test_winding_number_counts_zeros(z0):
    rect = (0.0, 5.0, -5.0, 5.0)
    inside = 0 < z0.real < 5 and -5 < z0.imag < 5
    margin = min(abs(z0.real), abs(z0.real - 5), abs(z0.imag + 5), abs(z0.imag - 5))
    res = winding_number(lambda z: (z - z0) * (z + 7.0), rect)
    if margin > 1e-3:
        assert res.conclusive and res.count == (1 if inside else 0)


def test_winding_flags_zero_on_contour():
    res = winding_number(lambda z: z - 5.0, (0.0, 5.0, -5.0, 5.0))
    assert not res.conclusive
