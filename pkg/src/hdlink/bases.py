"""Measurement bases: mutually unbiased bases and generalised Pauli operators.

Basis matrices store one basis state per row (ket amplitudes). Basis 0 is
always the computational basis and basis 1 the Fourier/Hadamard-type basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .core import dagger, eig_hermitian, normalize_phase

# primitive polynomials x^k + ... over GF(2), bit i = coefficient of x^i
_GF2_POLY = {1: 0b11, 2: 0b111, 3: 0b1011, 4: 0b10011, 5: 0b100101}


class UnsupportedDimensionError(ValueError):
    pass


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % k for k in range(2, int(n**0.5) + 1))


def _power_of_two(d: int) -> int | None:
    k = d.bit_length() - 1
    return k if d == 1 << k else None


class GF2k:
    """Arithmetic tables for GF(2^k) with elements encoded as k-bit integers."""

    def __init__(self, k: int):
        if k not in _GF2_POLY:
            raise UnsupportedDimensionError(f"GF(2^{k}) not tabulated")
        self.k = k
        self.q = 1 << k
        poly = _GF2_POLY[k]
        mul = np.zeros((self.q, self.q), dtype=int)
        for a in range(self.q):
            for b in range(self.q):
                r, x, y = 0, a, b
                while y:
                    if y & 1:
                        r ^= x
                    y >>= 1
                    x <<= 1
                    if x & self.q:
                        x ^= poly
                mul[a, b] = r
        self.mul = mul
        self.trace = np.array([self._trace(a) for a in range(self.q)], dtype=int)

    def _trace(self, a: int) -> int:
        t, x = 0, a
        for _ in range(self.k):
            t ^= x
            x = int(self.mul[x, x])
        if t not in (0, 1):
            raise ArithmeticError("field trace left the prime field")
        return t

    def self_dual_basis(self) -> list[int]:
        """A basis (b_i) with tr(b_i b_j) = delta_ij, found by search."""
        for cand in product(range(1, self.q), repeat=self.k):
            gram = [[self.trace[self.mul[a, b]] for b in cand] for a in cand]
            if gram == np.eye(self.k, dtype=int).tolist():
                return list(cand)
        raise ArithmeticError(f"no self-dual basis for GF(2^{self.k})")


_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _pauli(xbits, zbits) -> np.ndarray:
    """Hermitian multi-qubit Pauli i^{x.z} X(x) Z(z)."""
    op = np.ones((1, 1), dtype=complex)
    for x, z in zip(xbits, zbits):
        op = np.kron(op, np.linalg.matrix_power(_X, x) @ np.linalg.matrix_power(_Z, z))
    return (1j ** int(np.dot(xbits, zbits))) * op


def _common_eigenbasis(generators: list[np.ndarray]) -> np.ndarray:
    """Joint eigenbasis of commuting +-1 Paulis; row n has eigenvalue (-1)^{bit j of n}."""
    dim = generators[0].shape[0]
    k = len(generators)
    rows = []
    for n in range(dim):
        proj = np.eye(dim, dtype=complex)
        for j, g in enumerate(generators):
            sign = -1 if (n >> (k - 1 - j)) & 1 else 1
            proj = proj @ (np.eye(dim) + sign * g) / 2
        col = proj[:, int(np.argmax(np.linalg.norm(proj, axis=0)))]
        rows.append(normalize_phase(col / np.linalg.norm(col)))
    return np.array(rows)


def _mub_power_of_two(k: int) -> list[np.ndarray]:
    field = GF2k(k)
    q = field.q
    sdb = field.self_dual_basis()

    def bits(a: int) -> list[int]:
        # coordinates in the self-dual basis: a_i = tr(a * b_i)
        return [int(field.trace[field.mul[a, b]]) for b in sdb]

    unit = list(sdb)
    idx = np.arange(q)
    parity = np.array([[bin(a & b).count("1") % 2 for b in idx] for a in idx])
    bases = [np.eye(q, dtype=complex), ((-1.0) ** parity / np.sqrt(q)).astype(complex)]
    for lam in range(1, q):
        gens = [_pauli(bits(u), bits(int(field.mul[lam, u]))) for u in unit]
        bases.append(_common_eigenbasis(gens))
    return bases


def _mub_prime(p: int) -> list[np.ndarray]:
    k = np.arange(p)
    bases = [np.eye(p, dtype=complex)]
    if p == 2:
        # Galois-ring form i^{m k^2 + 2 n k}: X then Y eigenbases
        for m in range(2):
            bases.append(np.array([(1j ** (m * k**2 + 2 * n * k)) / np.sqrt(2) for n in range(2)]))
        return bases
    omega = np.exp(2j * np.pi / p)
    for m in range(p):
        bases.append(np.array([omega ** ((m * k**2 + n * k) % p) / np.sqrt(p) for n in range(p)]))
    return bases


@dataclass(frozen=True)
class MUBSet:
    d: int
    bases: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.bases)

    def projectors(self) -> np.ndarray:
        """All (d+1)*d rank-one projectors, indexed by p = n + m*d."""
        states = np.concatenate(self.bases, axis=0)
        return np.einsum("pi,pj->pij", states, states.conj())

    def max_bias(self) -> float:
        """Largest deviation of a cross-basis overlap |<e|e'>|^2 from 1/d."""
        worst = 0.0
        for a in range(len(self.bases)):
            for b in range(a + 1, len(self.bases)):
                ov = np.abs(self.bases[a].conj() @ self.bases[b].T) ** 2
                worst = max(worst, float(np.max(np.abs(ov - 1 / self.d))))
        return worst

    def max_unitarity_error(self) -> float:
        return max(float(np.max(np.abs(b @ dagger(b) - np.eye(self.d)))) for b in self.bases)


def supported_mub_dimension(d: int) -> bool:
    return _is_prime(d) or (_power_of_two(d) or 0) in _GF2_POLY


@lru_cache(maxsize=None)
def mub_set(d: int) -> MUBSet:
    """Complete set of d+1 mutually unbiased bases.

    Primes use the quadratic-phase construction; powers of two use
    stabiliser classes labelled by GF(2^k) multipliers.
    """
    if _is_prime(d):
        bases = _mub_prime(d)
    elif (k := _power_of_two(d)) is not None and k in _GF2_POLY:
        bases = _mub_power_of_two(k)
    else:
        raise UnsupportedDimensionError(f"no complete MUB construction for d={d}")
    bases = tuple(np.array([normalize_phase(r) for r in b]) for b in bases)
    out = MUBSet(d, bases)
    if out.max_bias() > 1e-10 or out.max_unitarity_error() > 1e-10:
        raise ArithmeticError(f"MUB construction failed its unbiasedness check for d={d}")
    for b in out.bases:
        b.setflags(write=False)
    return out


@dataclass(frozen=True)
class OperatorSet:
    """d^2 - 1 generalised Pauli (Gell-Mann) operators.

    Ordering: symmetric (j<k lexicographic), anti-symmetric (same), diagonal
    (l = 0..d-2).
    """

    d: int
    operators: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    def __len__(self):
        return len(self.operators)

    def stack(self) -> np.ndarray:
        return np.array(self.operators)


def diagonal_gellmann(d: int, l: int) -> np.ndarray:
    """sqrt(2/((l+1)(l+2))) (sum_{j<=l} |j><j| - (l+1)|l+1><l+1|)."""
    diag = np.zeros(d)
    diag[: l + 1] = 1.0
    diag[l + 1] = -(l + 1)
    return np.sqrt(2 / ((l + 1) * (l + 2))) * np.diag(diag).astype(complex)


@lru_cache(maxsize=None)
def gellmann_ops(d: int) -> OperatorSet:
    if d < 2:
        raise ValueError("d must be at least 2")
    ops, labels = [], []
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    for j, k in pairs:
        a = np.zeros((d, d), dtype=complex)
        a[j, k] = a[k, j] = 1
        ops.append(a)
        labels.append(f"S{j}{k}")
    for j, k in pairs:
        a = np.zeros((d, d), dtype=complex)
        a[j, k] = -1j
        a[k, j] = 1j
        ops.append(a)
        labels.append(f"A{j}{k}")
    for l in range(d - 1):
        ops.append(diagonal_gellmann(d, l))
        labels.append(f"D{l}")
    for a in ops:
        a.setflags(write=False)
    return OperatorSet(d, tuple(ops), tuple(labels))


def _support(vec, tol) -> int:
    return int(np.sum(np.abs(vec) > tol))


def _eigenspaces(op: np.ndarray, tol: float):
    w, v = eig_hermitian(op)
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or w[i] - w[start] > 1e-8:
            yield v[:, start:i]
            start = i


def _minimal_support_basis(space: np.ndarray, tol: float) -> list[np.ndarray]:
    """Rotate a degenerate eigenspace towards computational-basis vectors.

    Computational vectors lying inside the space are split off first; what
    remains is brought to reduced row-echelon form.
    """
    dim = space.shape[0]
    proj = space @ dagger(space)
    inside = [n for n in range(dim) if abs(proj[n, n].real - 1) < tol]
    basis = []
    for n in inside:
        e = np.zeros(dim, dtype=complex)
        e[n] = 1
        basis.append(e)
    rest = proj.copy()
    for e in basis:
        rest -= np.outer(e, e.conj())
    w, v = np.linalg.eigh(0.5 * (rest + dagger(rest)))
    rem = v[:, w > 0.5]
    if rem.shape[1] == 0:
        return basis
    # row-echelon form of rem^T gives vectors with pivots on disjoint entries
    m = rem.T.copy()
    row = 0
    for col in range(dim):
        if row == m.shape[0]:
            break
        piv = row + int(np.argmax(np.abs(m[row:, col])))
        if abs(m[piv, col]) < tol:
            continue
        m[[row, piv]] = m[[piv, row]]
        m[row] /= m[row, col]
        for r in range(m.shape[0]):
            if r != row:
                m[r] -= m[r, col] * m[row]
        row += 1
    rows = [r / np.linalg.norm(r) for r in m]
    gram = np.array(rows).conj() @ np.array(rows).T
    if not np.allclose(gram, np.eye(len(rows)), atol=1e-8):
        # the echelon vectors are not orthogonal: fall back to an eigenbasis
        rows = list(rem.T)
    return basis + rows


def verify_two_mode_support(ops, tol: float = 1e-10) -> bool:
    """True iff every operator has an eigenbasis of states on at most two modes."""
    mats = ops.operators if isinstance(ops, OperatorSet) else ops
    for op in mats:
        for space in _eigenspaces(np.asarray(op, dtype=complex), tol):
            if space.shape[1] == 1:
                vecs = [space[:, 0]]
            else:
                vecs = _minimal_support_basis(space, max(tol, 1e-9))
            if any(_support(v, tol) > 2 for v in vecs):
                return False
    return True


def measurement_counts(d: int, N: int) -> tuple[int, int, int]:
    """Settings needed for local-MUB, generalised-Pauli and joint-MUB tomography."""
    if d < 2 or N < 1:
        raise ValueError("need d >= 2 and N >= 1")
    return (d + 1) ** N, (d * d - 1) ** N, d**N + 1


def projector_index(m: int, n: int, d: int) -> int:
    if not 0 <= n < d:
        raise ValueError(f"state index {n} out of range for d={d}")
    if m < 0:
        raise ValueError("basis index must be non-negative")
    return n + m * d


def decode_projector_index(p: int, d: int) -> tuple[int, int]:
    m, n = divmod(p, d)
    return m, n


def fourier_projector(d: int) -> np.ndarray:
    v = np.full(d, 1 / np.sqrt(d), dtype=complex)
    return np.outer(v, v.conj())
