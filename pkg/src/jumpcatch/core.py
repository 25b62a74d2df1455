"""Dense linear algebra on small tensor-product Hilbert spaces.

Operators are plain complex ``numpy`` arrays.  The thin wrappers here add
shape bookkeeping, expectation values that normalise internally and the
three superoperators used by the unravelings (``D``, ``G`` and ``H``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np


@dataclass
class Tolerances:
    """Numerical tolerances shared by every module.

    Attributes
    ----------
    algebraic : float
        Threshold for identities that hold exactly in exact arithmetic.
    physical : float
        Threshold for physical-validity checks (Hermiticity, trace).
    """

    algebraic: float = 1e-12
    physical: float = 1e-10


TOL = Tolerances()


def set_tolerances(algebraic: float | None = None, physical: float | None = None) -> None:
    """Override the global tolerances in place."""
    if algebraic is not None:
        TOL.algebraic = float(algebraic)
    if physical is not None:
        TOL.physical = float(physical)


class DimensionError(ValueError):
    """Raised when operator or state shapes do not match."""


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of finite factors.

    Attributes
    ----------
    factor_dims : tuple of int
        Dimension of each factor, atom first then cavity.
    """

    factor_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims or any(d < 1 for d in dims):
            raise DimensionError(f"invalid factor dimensions {self.factor_dims}")
        object.__setattr__(self, "factor_dims", dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.factor_dims))

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def embed(self, op: np.ndarray, factor: int) -> np.ndarray:
        """Lift an operator acting on one factor to the full space."""
        parts = [np.eye(d, dtype=complex) for d in self.factor_dims]
        parts[factor] = np.asarray(op, dtype=complex)
        return tensor(parts, space=self)

    def basis(self, *indices: int) -> np.ndarray:
        """Product basis ket with one index per factor."""
        if len(indices) != len(self.factor_dims):
            raise DimensionError("one index per factor required")
        flat = int(np.ravel_multi_index(indices, self.factor_dims))
        ket = np.zeros(self.dim, dtype=complex)
        ket[flat] = 1.0
        return ket


@dataclass(frozen=True)
class LinearOperator:
    """Square complex matrix with an optional Hermiticity promise."""

    matrix: np.ndarray
    hermitian_flag: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be square, got {m.shape}")
        if self.hermitian_flag:
            scale = max(np.abs(m).max(), 1.0)
            if np.abs(m - m.conj().T).max() >= TOL.algebraic * scale:
                raise ValueError("operator flagged Hermitian is not Hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dag(self) -> "LinearOperator":
        return LinearOperator(self.matrix.conj().T, self.hermitian_flag)


@dataclass(frozen=True)
class StateVector:
    """Possibly unnormalised ket with its cached squared norm."""

    amplitudes: np.ndarray
    norm_sq: float = -1.0

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex).ravel()
        if not np.all(np.isfinite(a)):
            raise ValueError("state amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "norm_sq", float(np.vdot(a, a).real))


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density operator."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        if np.abs(m - m.conj().T).max() > TOL.physical:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > TOL.physical:
            raise ValueError(f"density matrix trace {np.trace(m).real:.3g} != 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -1e-8:
            raise ValueError("density matrix has negative eigenvalues")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        psi, _ = normalize(ket)
        return cls(np.outer(psi, psi.conj()))


def _mat(op) -> np.ndarray:
    if isinstance(op, LinearOperator):
        return op.matrix
    if isinstance(op, DensityMatrix):
        return op.matrix
    return np.asarray(op, dtype=complex)


def _vec(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def tensor(factors: Sequence, space: HilbertSpace | None = None) -> np.ndarray:
    """Kronecker product of ``factors`` in the order given.

    Parameters
    ----------
    factors : sequence of array_like
        Square matrices, one per tensor factor.
    space : HilbertSpace, optional
        When given, factor ``k`` must have dimension ``space.factor_dims[k]``.

    Returns
    -------
    numpy.ndarray
    """
    mats = [_mat(f) for f in factors]
    if not mats:
        raise DimensionError("tensor of an empty list")
    for k, m in enumerate(mats):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"factor {k} is not square: {m.shape}")
    if space is not None:
        if len(mats) != len(space.factor_dims):
            raise DimensionError(
                f"expected {len(space.factor_dims)} factors, got {len(mats)}")
        for k, (m, d) in enumerate(zip(mats, space.factor_dims)):
            if m.shape[0] != d:
                raise DimensionError(f"factor {k} has dim {m.shape[0]}, expected {d}")
    return reduce(np.kron, mats)


def normalize(state) -> tuple[np.ndarray, float]:
    """Return the unit ket and the squared norm it had before scaling."""
    psi = _vec(state)
    nsq = float(np.vdot(psi, psi).real)
    if not nsq > 0.0:
        raise ValueError("cannot normalise a zero-norm state")
    return psi / np.sqrt(nsq), nsq


def expect(op, state) -> complex:
    """Expectation value on a ket (normalised internally) or a density matrix."""
    a = _mat(op)
    if isinstance(state, DensityMatrix) or np.ndim(state) == 2:
        rho = _mat(state)
        if rho.shape != a.shape:
            raise DimensionError(f"operator {a.shape} vs density {rho.shape}")
        return complex(np.trace(a @ rho))
    psi = _vec(state)
    if psi.shape[0] != a.shape[0]:
        raise DimensionError(f"operator {a.shape} vs ket {psi.shape}")
    nsq = float(np.vdot(psi, psi).real)
    if not nsq > 0.0:
        raise ValueError("expectation on a zero-norm state")
    return complex(np.vdot(psi, a @ psi) / nsq)


def dissipator(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[c]rho = c rho c^dag - {c^dag c, rho}/2."""
    cd = c.conj().T
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def superop(kind: str, c, rho) -> np.ndarray:
    """Apply one of the measurement superoperators.

    Parameters
    ----------
    kind : {"D", "G", "H"}
        ``D`` is the Lindblad dissipator, ``G`` the jump update
        ``c rho c^dag / Tr[c rho c^dag] - rho`` and ``H`` the diffusive
        innovation ``c rho + rho c^dag - Tr[c rho + rho c^dag] rho``.
    c : array_like
        Collapse operator.
    rho : array_like or DensityMatrix

    Returns
    -------
    numpy.ndarray
    """
    cm = _mat(c)
    r = _mat(rho)
    if cm.shape != r.shape:
        raise DimensionError(f"operator {cm.shape} vs density {r.shape}")
    if kind == "D":
        return dissipator(cm, r)
    if kind == "G":
        jumped = cm @ r @ cm.conj().T
        p = np.trace(jumped).real
        if not p > 0.0:
            raise ValueError("G superoperator undefined: zero jump probability")
        return jumped / p - r
    if kind == "H":
        m = cm @ r + r @ cm.conj().T
        return m - np.trace(m) * r
    raise ValueError(f"unknown superoperator kind {kind!r}")


def projector(dim: int, index: int) -> np.ndarray:
    p = np.zeros((dim, dim), dtype=complex)
    p[index, index] = 1.0
    return p


def ketbra(dim: int, i: int, j: int) -> np.ndarray:
    """Matrix unit |i><j|."""
    m = np.zeros((dim, dim), dtype=complex)
    m[i, j] = 1.0
    return m


def destroy(n: int) -> np.ndarray:
    """Truncated annihilation operator on ``n`` Fock states."""
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def is_hermitian(a: np.ndarray, tol: float | None = None) -> bool:
    tol = TOL.physical if tol is None else tol
    a = _mat(a)
    return bool(np.abs(a - a.conj().T).max() <= tol * max(1.0, np.abs(a).max()))


def purity(rho: np.ndarray) -> float:
    r = _mat(rho)
    return float(np.real(np.trace(r @ r)))


def partial_trace_last(rho: np.ndarray, dims: Iterable[int]) -> np.ndarray:
    """Trace out the last tensor factor of a two-factor density matrix."""
    da, db = tuple(dims)
    return np.einsum("ajbj->ab", _mat(rho).reshape(da, db, da, db))
