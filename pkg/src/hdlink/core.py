"""Dense linear algebra and quantum-state primitives.

Everything here works on small dense complex matrices (D <= 256), stored as
``numpy.ndarray`` with ``complex128`` dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = -1e-9
NORM_TOL = 1e-12
MAX_DIM = 256
EIG_FLOOR = 1e-14


class DimensionError(ValueError):
    """Raised when matrix shapes are inconsistent with the requested operation."""


class PhysicalityError(ValueError):
    """Raised when a density matrix fails a physicality check."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return m.shape[0] == m.shape[1] and bool(np.max(np.abs(m - dagger(m)), initial=0.0) <= tol)


def tensor(a, b) -> np.ndarray:
    """Kronecker product; works for matrices and vectors alike."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def eig_hermitian(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix.

    Returns ``(eigenvalues, V)`` with eigenvalues ascending and the
    eigenvectors in the columns of ``V``.
    """
    m = as_matrix(m)
    if not is_hermitian(m):
        raise ValueError("eig_hermitian requires a Hermitian matrix")
    # symmetrise so roundoff below the tolerance cannot leak into the spectrum
    w, v = np.linalg.eigh(0.5 * (m + dagger(m)))
    return w, v


def psd_sqrt(m) -> np.ndarray:
    """Square root of a (near) positive semidefinite Hermitian matrix.

    Negative eigenvalues, and positive ones at roundoff level, are clamped
    to zero first; otherwise sqrt would turn 1e-17 noise into 3e-9 entries.
    """
    w, v = eig_hermitian(m)
    floor = EIG_FLOOR * max(float(np.max(np.abs(w))), 1.0)
    return (v * np.sqrt(np.where(w > floor, w, 0.0))) @ dagger(v)


def normalize_phase(vec: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Fix the global phase so the first non-negligible entry is real positive."""
    vec = np.asarray(vec, dtype=complex)
    idx = np.flatnonzero(np.abs(vec) > tol)
    if idx.size == 0:
        return vec
    first = vec[idx[0]]
    return vec * (abs(first) / first)


def wrap_phase(x):
    """Wrap angles to the half-open interval (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if abs(np.vdot(amps, amps).real - 1.0) > NORM_TOL:
            raise ValueError("pure state is not normalised")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @classmethod
    def from_unnormalized(cls, amplitudes) -> "PureState":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("cannot normalise the zero vector")
        return cls(amps / norm)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """Validated density matrix.

    ``physical`` matrices must be positive semidefinite within ``PSD_TOL``;
    ``linear-only`` matrices (e.g. from linear inversion) need only be
    Hermitian with unit trace.
    """

    matrix: np.ndarray
    flag: Literal["physical", "linear-only"] = "physical"

    def __post_init__(self):
        m = as_matrix(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got {m.shape}")
        if m.shape[0] > MAX_DIM:
            raise DimensionError(f"dimension {m.shape[0]} exceeds {MAX_DIM}")
        if not is_hermitian(m):
            raise PhysicalityError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > TRACE_TOL:
            raise PhysicalityError(f"trace {np.trace(m).real!r} is not 1")
        if self.flag not in ("physical", "linear-only"):
            raise ValueError(f"unknown physicality flag {self.flag!r}")
        if self.flag == "physical" and min_eigenvalue(m) < PSD_TOL:
            raise PhysicalityError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_physical(self) -> bool:
        return self.flag == "physical"


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])


def _matrix_of(rho) -> tuple[np.ndarray, bool]:
    if isinstance(rho, DensityMatrix):
        return rho.matrix, rho.is_physical
    if isinstance(rho, PureState):
        return rho.density().matrix, True
    m = as_matrix(rho)
    physical = is_hermitian(m) and abs(np.trace(m).real - 1) <= TRACE_TOL and min_eigenvalue(m) >= PSD_TOL
    return m, physical


def _local_dim(D: int, d: int | None) -> int:
    if d is None:
        d = int(round(np.sqrt(D)))
    if d < 1 or d * d != D:
        raise DimensionError(f"matrix of size {D} is not a two-qudit operator of local dimension {d}")
    return d


def partial_trace(rho, d: int | None = None, keep: Literal["first", "second"] = "first") -> np.ndarray:
    """Reduced d x d matrix of a two-qudit operator of size d^2."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else as_matrix(rho)
    d = _local_dim(m.shape[0], d)
    t = m.reshape(d, d, d, d)
    if keep == "first":
        return np.einsum("ijkj->ik", t)
    if keep == "second":
        return np.einsum("ijil->jl", t)
    raise ValueError(f"keep must be 'first' or 'second', got {keep!r}")


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 of two physical states."""
    a, a_ok = _matrix_of(rho)
    b, b_ok = _matrix_of(sigma)
    if not (a_ok and b_ok):
        raise PhysicalityError("fidelity requires physical density matrices")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    # trace norm of sqrt(rho) sqrt(sigma); singular values avoid square roots of roundoff
    s = np.linalg.svd(psd_sqrt(a) @ psd_sqrt(b), compute_uv=False)
    f = float(np.sum(s) ** 2)
    return min(max(f, 0.0), 1.0)


def von_neumann_entropy(rho, base: float) -> float:
    m, _ = _matrix_of(rho)
    w = np.linalg.eigvalsh(0.5 * (m + dagger(m)))
    w = w[w > 1e-14]
    return float(-np.sum(w * np.log(w)) / np.log(base))


def entanglement_entropy(rho, d: int | None = None) -> float:
    """Entropy of the first subsystem's reduced state, logarithm base d.

    0 for product states and 1 for maximally entangled two-qudit states.
    """
    m, physical = _matrix_of(rho)
    if not physical:
        raise PhysicalityError("entanglement entropy requires a physical state")
    d = _local_dim(m.shape[0], d)
    if d == 1:
        return 0.0
    value = von_neumann_entropy(partial_trace(m, d, "first"), base=d)
    return min(max(value, 0.0), 1.0)


def max_entangled(d: int) -> np.ndarray:
    """|Phi+_d> = sum_n |nn>/sqrt(d) as a state vector of length d^2."""
    v = np.zeros(d * d, dtype=complex)
    v[:: d + 1] = 1 / np.sqrt(d)
    return v


def projector(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(D: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random physical density matrix (Ginibre ensemble of the given rank)."""
    rank = D if rank is None else rank
    g = rng.standard_normal((D, rank)) + 1j * rng.standard_normal((D, rank))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


@dataclass(frozen=True)
class BipartiteState:
    """Pure two-qudit state, amplitudes indexed ``[n_idler, n_signal]``."""

    d: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(self.d, self.d)
        if abs(np.sum(np.abs(amps) ** 2) - 1.0) > NORM_TOL:
            raise ValueError("bipartite state is not normalised")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def density(self) -> DensityMatrix:
        return DensityMatrix(projector(self.vector))

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(np.diag(self.amplitudes))

    @property
    def phases(self) -> np.ndarray:
        return np.angle(np.diag(self.amplitudes))
