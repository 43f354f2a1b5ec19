"""Complex linear-algebra substrate: state vectors, Hermitian operators,
expectation values and partial traces.

All objects are immutable after construction. Arrays handed out by the
accessors are read-only views, so sharing them between threads or worker
processes is safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

#: Allowed deviation of ``||psi||`` from one for a :class:`StateVector`.
NORM_TOL = 1e-6
#: Largest tolerated pre-symmetrization defect of a Hermitian operator.
HERMITICITY_TOL = 1e-10
#: Largest imaginary residue accepted for an expectation value.
IMAG_TOL = 1e-12


class DimensionError(ValueError):
    """Operands live in Hilbert spaces of different dimension."""


class HermiticityError(ValueError):
    """Matrix is too far from self-adjoint to be symmetrized silently."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


class StateVector:
    """Normalized complex amplitude vector over a finite basis.

    Parameters
    ----------
    amplitudes : array_like
        Complex amplitudes, length >= 2.
    tol : float
        Accepted deviation of the Euclidean norm from 1.
    """

    __slots__ = ("_amps",)

    def __init__(self, amplitudes, *, tol: float = NORM_TOL):
        amps = np.asarray(amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.size < 2:
            raise DimensionError(f"state needs a 1-D amplitude array of length >= 2, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("state amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > tol:
            raise ValueError(f"state is not normalized: |psi| = {norm!r}")
        self._amps = _readonly(amps)

    @classmethod
    def normalized(cls, vector) -> "StateVector":
        """Build a state from an arbitrary nonzero vector by rescaling it."""
        v = np.asarray(vector, dtype=np.complex128)
        norm = np.linalg.norm(v)
        if norm == 0 or not np.isfinite(norm):
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(v / norm)

    @classmethod
    def basis(cls, dim: int, index: int) -> "StateVector":
        v = np.zeros(dim, dtype=np.complex128)
        v[index] = 1.0
        return cls(v)

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    @property
    def basis_dim(self) -> int:
        return self._amps.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self._amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self._amps) ** 2

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._amps.copy() if copy else self._amps
        return self._amps.astype(dtype)

    def __len__(self) -> int:
        return self.basis_dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateVector):
            return NotImplemented
        return np.array_equal(self._amps, other._amps)

    def __hash__(self):
        return hash(self._amps.tobytes())

    def __repr__(self) -> str:
        return f"StateVector({np.array2string(self._amps, precision=6)})"


class HermitianOperator:
    """Dense self-adjoint matrix.

    The input is symmetrized as ``(M + M^H) / 2``. The size of the
    antihermitian part that was removed is kept in :attr:`defect`; inputs
    whose defect exceeds ``tol`` (relative to the matrix scale, absolute for
    matrices of order one) are rejected.
    """

    __slots__ = ("_m", "_diag", "defect", "_eig")

    def __init__(self, entries, *, tol: float = HERMITICITY_TOL):
        m = np.asarray(entries, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator must be a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator entries must be finite")
        defect = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
        if defect > tol * scale:
            raise HermiticityError(f"hermiticity defect {defect:.3e} exceeds {tol:.1e}")
        self.defect = defect
        self._m = _readonly(0.5 * (m + m.conj().T))
        off = self._m - np.diag(np.diag(self._m))
        self._diag = None
        if not np.any(off):
            d = np.diag(self._m).real.copy()
            d.setflags(write=False)
            self._diag = d
        self._eig = None

    @classmethod
    def diagonal(cls, values) -> "HermitianOperator":
        return cls(np.diag(np.asarray(values, dtype=np.float64)))

    @property
    def entries(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self._diag is not None

    @property
    def diag(self) -> np.ndarray | None:
        """Real diagonal when the operator is diagonal, else ``None``."""
        return self._diag

    def apply(self, vecs: np.ndarray) -> np.ndarray:
        """Apply to a vector or to a batch of row vectors of shape ``(n, dim)``."""
        vecs = np.asarray(vecs)
        if vecs.shape[-1] != self.dim:
            raise DimensionError(f"operator of dim {self.dim} applied to vector of dim {vecs.shape[-1]}")
        if self._diag is not None:
            return vecs * self._diag
        return vecs @ self._m.T

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and eigenvectors as columns; cached."""
        if self._eig is None:
            if self._diag is not None:
                order = np.argsort(self._diag, kind="stable")
                vecs = np.eye(self.dim, dtype=np.complex128)[:, order]
                self._eig = (self._diag[order].copy(), vecs)
            else:
                self._eig = np.linalg.eigh(self._m)
        return self._eig

    def spectral_norm(self) -> float:
        w, _ = self.eigh()
        return float(np.max(np.abs(w)))

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return self.apply(other.amplitudes)
        return self.apply(other)

    def __repr__(self) -> str:
        return f"HermitianOperator(dim={self.dim}, diagonal={self.is_diagonal})"


@dataclass(frozen=True)
class BipartitePartition:
    """Split of a ``a * b`` dimensional space into subsystems A and B.

    Amplitude index ``i * b + j`` is ``|i>_A |j>_B``.
    """

    a: int
    b: int

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError("partition dimensions must be positive")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.a, self.b)

    @property
    def total(self) -> int:
        return self.a * self.b


def _check_dims(op: HermitianOperator, psi: StateVector) -> None:
    if op.dim != psi.basis_dim:
        raise DimensionError(f"operator dim {op.dim} != state dim {psi.basis_dim}")


def expectation(op: HermitianOperator, psi: StateVector) -> float:
    """<psi|op|psi> for a normalized state.

    Raises
    ------
    DimensionError
        If the operator and the state do not share a dimension.
    """
    _check_dims(op, psi)
    v = psi.amplitudes
    val = np.vdot(v, op.apply(v))
    assert abs(val.imag) <= IMAG_TOL * max(1.0, abs(val.real)), f"complex expectation {val}"
    return float(val.real)


def deviation_apply(op: HermitianOperator, psi: StateVector, k: float) -> np.ndarray:
    """Return ``k (op - <op>) psi`` as an unnormalized vector.

    The subtraction of the mean removes the component along ``psi``, so the
    result is orthogonal to the input state.
    """
    _check_dims(op, psi)
    v = psi.amplitudes
    ov = op.apply(v)
    mean = np.vdot(v, ov).real
    return k * (ov - mean * v)


def reduced_density(psi: StateVector, part: BipartitePartition, keep: Literal["a", "b"] = "b") -> np.ndarray:
    """Reduced density matrix of one side of a bipartite pure state."""
    if part.total != psi.basis_dim:
        raise DimensionError(f"partition {part.dims} inconsistent with state dim {psi.basis_dim}")
    return _reduced_density_array(psi.amplitudes, part, keep)


def _reduced_density_array(v: np.ndarray, part: BipartitePartition, keep: str) -> np.ndarray:
    m = np.asarray(v).reshape(v.shape[:-1] + (part.a, part.b))
    if keep == "a":
        return np.einsum("...ij,...kj->...ik", m, m.conj())
    if keep == "b":
        return np.einsum("...ij,...ik->...jk", m, m.conj())
    raise ValueError(f"keep must be 'a' or 'b', got {keep!r}")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of ``rho - sigma`` for Hermitian matrices."""
    w = np.linalg.eigvalsh(np.asarray(rho) - np.asarray(sigma))
    return 0.5 * float(np.sum(np.abs(w)))


# Batched helpers used by the integrators. Rows of ``psi`` are states.

def batch_expectation(op: HermitianOperator, psi: np.ndarray) -> np.ndarray:
    return np.einsum("ni,ni->n", psi.conj(), op.apply(psi)).real


def batch_norms(psi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ni,ni->n", psi.conj(), psi).real)
