"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line each in the terminal summary."""
import time

import pytest

from conftest import record_line, record_outcome
from hflandau import acceptance as acc


def run(check, fast=False):
    out = check(fast)
    print(out.line())
    record_outcome(out)
    return out


def test_ac01_trivial_gates():
    assert run(acc.check_trivial_gates).passed


def test_ac02_linear_oracle_equivalence():
    assert run(acc.check_linear_oracle).passed


def test_ac03_stability_certificate():
    assert run(acc.check_penrose).passed


def test_ac04_level_set_density():
    assert run(acc.check_level_sets).passed


def test_ac05_conjugation_and_radial_symmetry():
    assert run(acc.check_symmetries).passed


def test_ac06_free_streaming_and_nonstationary_phase():
    assert run(acc.check_free_streaming).passed


def test_ac07_green_function_decay():
    assert run(acc.check_green).passed


def test_ac08_nonlinear_density_decay():
    assert run(acc.check_damping).passed


def test_ac09_scattering_rate():
    assert run(acc.check_scattering).passed


def test_ac10_structure_preservation():
    assert run(acc.check_structure).passed


def test_verify_fast_exit_code_and_budget(tmp_path):
    from hflandau.cli import main
    start = time.perf_counter()
    code = main(["verify", "--fast", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    line = f"{'PASS' if code == 0 and elapsed < 120 else 'FAIL'} verify --fast: exit={code}, seconds={elapsed:.1f} [exit 0 within 2 min]"
    print(line)
    record_line(line)
    assert code == 0 and elapsed < 120
