from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from jumpcatch.models import (LEAKAGE_DRIVE_ON, AtomParams, CoherentDrive, build_cqed,
                              build_three_level, simulation_parameters)

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_density(rng, d, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture(scope="session")
def cqed_model():
    atom, cav = simulation_parameters(LEAKAGE_DRIVE_ON)
    return build_cqed(atom, cav)


@pytest.fixture(scope="session")
def ideal_model():
    tp = 2 * np.pi
    atom = AtomParams(gamma_B=tp * 9.0, gamma_D=0.0, drive=CoherentDrive(tp * 1.2),
                      omega_DG=tp * 0.02)
    return build_three_level(atom)


# invariant and property checks re-run by the acceptance suite: every
# hypothesis test plus the named deterministic ones below
INVARIANT_TESTS = {
    "test_superop_traces_vanish", "test_noclick_norm_monotone",
    "test_lindblad_decay_and_unitarity", "test_lindblad_rk4_trace",
    "test_purity_at_unit_efficiency", "test_jump_determinism", "test_heterodyne_determinism",
    "test_stream_independent_of_batch_size", "test_tomogram_invariants",
    "test_merge_order_independent", "test_forms_agree_over_random_walk",
    "test_martingale_and_variance", "test_determinism_and_csv", "test_byte_identical_reruns",
}

# PASS/FAIL lines collected by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "invariant: module invariant or property test")


def pytest_collection_modifyitems(config, items):
    for item in items:
        fn = getattr(item, "obj", None)
        if getattr(fn, "is_hypothesis_test", False) or item.originalname in INVARIANT_TESTS:
            item.add_marker(pytest.mark.invariant)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
