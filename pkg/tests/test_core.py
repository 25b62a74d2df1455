from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_density
from jumpcatch.core import (DensityMatrix, DimensionError, HilbertSpace, expect, normalize,
                            partial_trace_last, projector, superop, tensor)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
seeds = st.integers(0, 2 ** 32 - 1)
dims = st.integers(2, 6)


def _rand_op(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def test_tensor_identity():
    assert np.allclose(tensor([np.eye(2), np.eye(3)]), np.eye(6))


def test_tensor_hand_kronecker():
    nop = np.diag([0.0, 1.0])
    out = tensor([projector(3, 1), nop])
    assert np.allclose(out, np.diag([0, 0, 0, 1, 0, 0]))


def test_tensor_involution():
    xx = tensor([SX, SX])
    assert np.allclose(xx @ xx, np.eye(4))


def test_tensor_dimension_check():
    with pytest.raises(DimensionError):
        tensor([np.eye(2), np.eye(3)], space=HilbertSpace((2, 2)))


@given(seeds)
def test_tensor_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_rand_op(rng, d) for d in (2, 3, 2))
    left = tensor([a, tensor([b, c])])
    right = tensor([tensor([a, b]), c])
    assert np.abs(left - right).max() < 1e-12


def test_expect_examples():
    up = np.array([1, 0], dtype=complex)
    assert expect(SZ, up) == pytest.approx(1.0)
    assert expect(SZ, 0.3 * up) == pytest.approx(1.0)
    v = np.array([1, 1, 0], dtype=complex) / np.sqrt(2)
    assert expect(projector(3, 1), v) == pytest.approx(0.5)


def test_expect_zero_norm_rejected():
    with pytest.raises(ValueError):
        expect(SZ, np.zeros(2))


@given(seeds, dims, st.floats(0, 2 * np.pi), st.floats(0.1, 10))
def test_expect_phase_and_scale_invariant(seed, d, phase, scale):
    rng = np.random.default_rng(seed)
    a = _rand_op(rng, d)
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    ref = expect(a, psi)
    assert abs(expect(a, scale * np.exp(1j * phase) * psi) - ref) < 1e-10 * (1 + abs(ref))


@given(seeds, dims)
def test_hermitian_expectation_real(seed, d):
    rng = np.random.default_rng(seed)
    a = _rand_op(rng, d)
    h = a + a.conj().T
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    assert abs(expect(h, psi).imag) < 1e-10 * np.abs(h).max()
    assert abs(expect(h, random_density(rng, d)).imag) < 1e-10 * np.abs(h).max()


def test_superop_zero_collapse():
    rho = random_density(np.random.default_rng(0), 3)
    assert np.allclose(superop("D", np.zeros((3, 3)), rho), 0)


@given(seeds, dims)
def test_superop_traces_vanish(seed, d):
    rng = np.random.default_rng(seed)
    c = _rand_op(rng, d)
    rho = random_density(rng, d)
    for kind in ("D", "G", "H"):
        assert abs(np.trace(superop(kind, c, rho))) < 1e-10


def test_superop_G_uses_c_rho_cdag():
    c = np.zeros((2, 2), dtype=complex)
    c[0, 1] = 1.0  # lowering |1> -> |0>
    rho = np.diag([0.25, 0.75]).astype(complex)
    out = superop("G", c, rho)
    assert np.allclose(out + rho, np.diag([1.0, 0.0]))


def test_superop_G_zero_probability():
    c = np.zeros((2, 2), dtype=complex)
    c[0, 1] = 1.0
    with pytest.raises(ValueError):
        superop("G", c, np.diag([1.0, 0.0]))


def test_superop_unknown_kind():
    with pytest.raises(ValueError):
        superop("X", np.eye(2), np.eye(2) / 2)


def test_normalize_examples():
    g = np.array([1, 0, 0], dtype=complex)
    psi, n = normalize(2 * g)
    assert np.allclose(psi, g) and n == pytest.approx(4.0)
    psi, n = normalize(g)
    assert np.allclose(psi, g) and n == pytest.approx(1.0)
    v = np.array([0.6, 0, 0.8j])
    psi, n = normalize(0.5 * v)
    assert np.allclose(psi, v) and n == pytest.approx(0.25)
    with pytest.raises(ValueError):
        normalize(np.zeros(3))


def test_density_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.5, 0.6]))
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.5, -0.5]))
    with pytest.raises(DimensionError):
        DensityMatrix(np.ones((2, 3)))
    r = DensityMatrix.from_ket([1, 1j])
    assert np.allclose(r.matrix, [[0.5, -0.5j], [0.5j, 0.5]])


@given(seeds)
def test_partial_trace_product(seed):
    rng = np.random.default_rng(seed)
    ra, rb = random_density(rng, 3), random_density(rng, 4)
    assert np.allclose(partial_trace_last(np.kron(ra, rb), (3, 4)), ra, atol=1e-12)


def test_hilbert_space_basis_and_embed():
    hs = HilbertSpace((3, 2))
    assert hs.dim == 6
    assert np.flatnonzero(hs.basis(1, 1))[0] == 3
    assert np.allclose(hs.embed(projector(3, 1), 0), np.kron(projector(3, 1), np.eye(2)))
    with pytest.raises(DimensionError):
        HilbertSpace((0,))
