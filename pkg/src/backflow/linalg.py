"""Dense linear algebra for small multi-qubit systems.

Everything here works on explicit numpy arrays; matrices are tiny (dimension
at most ~16), so no attempt is made at sparsity or batching tricks beyond what
numpy already provides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EigenConvergenceError,
    InvalidStateError,
    NotHermitianError,
    SubsystemIndexError,
)

ID2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULIS = (ID2, SIGMA_X, SIGMA_Y, SIGMA_Z)

HERMITICITY_TOL = 1e-10
STATE_HERMITICITY_TOL = 1e-12
STATE_TRACE_TOL = 1e-12
STATE_PSD_TOL = -1e-10
ENTROPY_CLAMP = 1e-14


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in ascending order, eigenvectors as matching columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def hermitian_eig(matrix: np.ndarray, tol: float = HERMITICITY_TOL) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix.

    Raises NotHermitianError if max |M - M^dagger| exceeds tol, and
    EigenConvergenceError if the underlying solver fails.
    """
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {matrix.shape}")
    if np.max(np.abs(matrix - matrix.conj().T)) > tol:
        raise NotHermitianError(f"matrix deviates from Hermitian by more than {tol}")
    try:
        w, u = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails here
        raise EigenConvergenceError(str(exc)) from exc
    return EigenDecomposition(eigenvalues=w, eigenvectors=u)


def tensor_product(*operators: np.ndarray) -> np.ndarray:
    if not operators:
        raise DimensionMismatchError("tensor_product needs at least one operator")
    out = np.asarray(operators[0], dtype=complex)
    for op in operators[1:]:
        out = np.kron(out, np.asarray(op, dtype=complex))
    return out


@dataclass(frozen=True)
class DensityMatrix:
    """A density matrix together with its tensor factor dimensions."""

    matrix: np.ndarray
    dims: tuple[int, ...]
    # validation tolerances are fixed; see module constants
    _skip_checks: bool = field(default=False, repr=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        total = int(np.prod(self.dims))
        if mat.shape != (total, total):
            raise DimensionMismatchError(
                f"matrix shape {mat.shape} does not match dims {self.dims}"
            )
        if self._skip_checks:
            return
        if np.max(np.abs(mat - mat.conj().T)) > STATE_HERMITICITY_TOL:
            raise InvalidStateError("density matrix is not Hermitian within 1e-12")
        if abs(np.trace(mat).real - 1.0) > STATE_TRACE_TOL or abs(np.trace(mat).imag) > STATE_TRACE_TOL:
            raise InvalidStateError("density matrix trace differs from 1 by more than 1e-12")
        w = np.linalg.eigvalsh(mat)
        if w[0] < STATE_PSD_TOL:
            raise InvalidStateError(f"density matrix has eigenvalue {w[0]:.3e} below -1e-10")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def density_matrix(matrix: np.ndarray, dims) -> DensityMatrix:
    """Validate and wrap a raw matrix."""
    return DensityMatrix(matrix=matrix, dims=tuple(dims))


def as_matrix(state) -> np.ndarray:
    """Accept DensityMatrix or ndarray and return the underlying array."""
    if isinstance(state, DensityMatrix):
        return state.matrix
    return np.asarray(state, dtype=complex)


def maximally_mixed(dims) -> DensityMatrix:
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims))
    return DensityMatrix(matrix=np.eye(n, dtype=complex) / n, dims=dims)


def pure_state(vector: np.ndarray, dims) -> DensityMatrix:
    v = np.asarray(vector, dtype=complex).reshape(-1)
    v = v / np.linalg.norm(v)
    return DensityMatrix(matrix=np.outer(v, v.conj()), dims=tuple(dims))


def max_entangled_state(local_dim: int = 2) -> DensityMatrix:
    """|Phi+> = sum_i |ii>/sqrt(d) on a (d, d) pair."""
    v = np.zeros(local_dim * local_dim, dtype=complex)
    for i in range(local_dim):
        v[i * local_dim + i] = 1.0
    return pure_state(v, (local_dim, local_dim))


def random_density_matrix(rng: np.random.Generator, dim: int, rank: int | None = None) -> DensityMatrix:
    """Ginibre-induced random state; full rank unless rank is given."""
    r = rank if rank is not None else dim
    g = rng.normal(size=(dim, r)) + 1j * rng.normal(size=(dim, r))
    mat = g @ g.conj().T
    mat /= np.trace(mat).real
    return DensityMatrix(matrix=mat, dims=(dim,))


def partial_trace(state, keep, dims=None) -> DensityMatrix:
    """Trace out all subsystems not listed in keep.

    keep preserves the original ordering of the retained factors.
    """
    if isinstance(state, DensityMatrix):
        mat, sys_dims = state.matrix, state.dims
    else:
        if dims is None:
            raise DimensionMismatchError("dims required when tracing a bare array")
        mat, sys_dims = np.asarray(state, dtype=complex), tuple(dims)
    keep = sorted(set(int(k) for k in keep))
    n = len(sys_dims)
    if any(k < 0 or k >= n for k in keep):
        raise SubsystemIndexError(f"keep={keep} out of range for {n} subsystems")
    if not keep:
        raise SubsystemIndexError("must keep at least one subsystem")
    tensor = mat.reshape(tuple(sys_dims) * 2)
    # contract each traced subsystem's ket index with its bra index
    traced = [i for i in range(n) if i not in keep]
    for count, idx in enumerate(traced):
        ax = idx - sum(1 for j in traced[:count] if j < idx)
        half = tensor.ndim // 2
        tensor = np.trace(tensor, axis1=ax, axis2=ax + half)
    kept_dims = tuple(sys_dims[k] for k in keep)
    total = int(np.prod(kept_dims))
    out = tensor.reshape(total, total)
    out = 0.5 * (out + out.conj().T)  # scrub rounding asymmetry
    return DensityMatrix(matrix=out, dims=kept_dims, _skip_checks=True)


def partial_transpose(matrix: np.ndarray, dims, subsystem: int) -> np.ndarray:
    """Transpose one tensor factor of a bipartite (or multipartite) operator."""
    dims = tuple(int(d) for d in dims)
    mat = np.asarray(matrix, dtype=complex)
    n = len(dims)
    if subsystem < 0 or subsystem >= n:
        raise SubsystemIndexError(f"subsystem {subsystem} out of range for {n} factors")
    tensor = mat.reshape(tuple(dims) * 2)
    tensor = np.swapaxes(tensor, subsystem, subsystem + n)
    return tensor.reshape(mat.shape)


def trace_norm(matrix: np.ndarray, tol: float = HERMITICITY_TOL) -> float:
    """Sum of absolute eigenvalues; Hermitian input only."""
    matrix = np.asarray(matrix, dtype=complex)
    if np.max(np.abs(matrix - matrix.conj().T)) > tol:
        raise NotHermitianError("trace_norm is implemented for Hermitian matrices only")
    return float(np.abs(np.linalg.eigvalsh(matrix)).sum())


def trace_distance(state_a, state_b) -> float:
    a, b = as_matrix(state_a), as_matrix(state_b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return 0.5 * trace_norm(a - b)


def von_neumann_entropy(state, base: float | None = None) -> float:
    """-Tr(rho ln rho); natural log unless base is given.

    Eigenvalues in [-1e-10, 0) are clamped to zero and anything below 1e-14
    contributes nothing; an eigenvalue under -1e-10 is rejected.
    """
    mat = as_matrix(state)
    w = np.linalg.eigvalsh(mat)
    if w[0] < STATE_PSD_TOL:
        raise InvalidStateError(f"eigenvalue {w[0]:.3e} below -1e-10")
    w = np.where(w < ENTROPY_CLAMP, 0.0, w)
    nz = w[w > 0]
    s = float(-(nz * np.log(nz)).sum())
    if base is not None:
        s /= np.log(base)
    return s


def is_positive_semidefinite(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.linalg.eigvalsh(np.asarray(matrix, dtype=complex))[0] >= -tol)
