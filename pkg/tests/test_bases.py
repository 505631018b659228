import itertools

import numpy as np
import pytest

from hdlink.bases import (
    GF2k,
    UnsupportedDimensionError,
    decode_projector_index,
    diagonal_gellmann,
    fourier_projector,
    gellmann_ops,
    measurement_counts,
    mub_set,
    projector_index,
    verify_two_mode_support,
)

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
}


def cross_overlaps(bases):
    for a, b in itertools.combinations(range(len(bases.bases)), 2):
        yield np.abs(bases.bases[a].conj() @ bases.bases[b].T) ** 2


class TestMUB:
    def test_qubit_pauli_eigenbases(self):
        b = mub_set(2)
        for m, name in enumerate("ZXY"):
            for n, sign in enumerate((1, -1)):
                v = b.bases[m][n]
                assert np.allclose(PAULI[name] @ v, sign * v, atol=1e-12)

    @pytest.mark.parametrize("d", [2, 3, 4, 5, 7, 8, 16])
    def test_unbiased(self, d):
        b = mub_set(d)
        assert len(b) == d + 1
        for ov in cross_overlaps(b):
            assert np.max(np.abs(ov - 1 / d)) <= 1e-10

    @pytest.mark.parametrize("d", [2, 3, 4, 5, 8])
    def test_orthonormal_and_ordering(self, d):
        b = mub_set(d)
        for basis in b.bases:
            assert np.max(np.abs(basis @ basis.conj().T - np.eye(d))) <= 1e-10
        assert np.allclose(b.bases[0], np.eye(d))
        assert np.allclose(np.abs(b.bases[1]), 1 / np.sqrt(d))

    @pytest.mark.parametrize("d", [3, 4, 5])
    def test_first_nonzero_entry_real_positive(self, d):
        for basis in mub_set(d).bases:
            for row in basis:
                first = row[np.argmax(np.abs(row) > 1e-12)]
                assert abs(first.imag) < 1e-12 and first.real > 0

    @pytest.mark.parametrize("d", [6, 10, 12])
    def test_unsupported(self, d):
        with pytest.raises(UnsupportedDimensionError):
            mub_set(d)

    def test_read_only(self):
        with pytest.raises(ValueError):
            mub_set(4).bases[0][0, 0] = 2

    def test_projectors_resolve_identity(self):
        gammas = mub_set(4).projectors()
        assert gammas.shape == (20, 4, 4)
        assert np.allclose(gammas.sum(axis=0), 5 * np.eye(4))

    def test_gf4_self_dual_basis(self):
        f = GF2k(2)
        basis = f.self_dual_basis()
        gram = [[f.trace[f.mul[a, b]] for b in basis] for a in basis]
        assert gram == [[1, 0], [0, 1]]


class TestGellMann:
    def test_qubit_reduces_to_pauli(self):
        ops = gellmann_ops(2)
        for op, name in zip(ops.operators, "XYZ"):
            assert np.allclose(op, PAULI[name])

    @pytest.mark.parametrize("d", [2, 3, 4, 5, 8])
    def test_count_and_orthogonality(self, d):
        ops = gellmann_ops(d).stack()
        assert len(ops) == d * d - 1
        gram = np.einsum("aij,bji->ab", ops, ops)
        assert np.max(np.abs(gram - 2 * np.eye(len(ops)))) <= 1e-12
        for op in ops:
            assert np.max(np.abs(op - op.conj().T)) <= 1e-12
            assert abs(np.trace(op)) <= 1e-12

    def test_d3_diagonal(self):
        assert np.allclose(diagonal_gellmann(3, 1), np.sqrt(1 / 3) * np.diag([1, 1, -2]))

    @pytest.mark.parametrize("d", [3, 4, 6])
    def test_spectra(self, d):
        ops = gellmann_ops(d)
        for op, label in zip(ops.operators, ops.labels):
            w = np.sort(np.linalg.eigvalsh(op))
            if label[0] in "SA":
                expect = np.sort([-1, 1] + [0] * (d - 2))
            else:
                l = int(label[1:])
                expect = np.sqrt(2 / ((l + 1) * (l + 2))) * np.sort([1] * (l + 1) + [-(l + 1)] + [0] * (d - l - 2))
            assert np.allclose(w, expect, atol=1e-12)

    @pytest.mark.parametrize("d", range(2, 9))
    def test_two_mode_support(self, d):
        assert verify_two_mode_support(gellmann_ops(d), tol=1e-10)

    def test_fourier_counterexample(self):
        assert not verify_two_mode_support([fourier_projector(4)])
        ops = list(gellmann_ops(4).operators) + [fourier_projector(4)]
        assert not verify_two_mode_support(ops)


class TestCounting:
    @pytest.mark.parametrize("d,N,expect", [(4, 2, (25, 225, 17)), (2, 1, (3, 3, 3)), (3, 2, (16, 64, 10)),
                                            (2, 2, (9, 9, 5)), (5, 3, (216, 13824, 126))])
    def test_table(self, d, N, expect):
        assert measurement_counts(d, N) == expect

    @pytest.mark.parametrize("d", range(3, 10))
    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_local_beats_pauli(self, d, N):
        local, pauli, _ = measurement_counts(d, N)
        assert local < pauli

    def test_invalid(self):
        with pytest.raises(ValueError):
            measurement_counts(1, 2)


class TestProjectorIndex:
    def test_examples(self):
        assert projector_index(0, 0, 4) == 0
        assert projector_index(2, 3, 4) == 11

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_round_trip(self, d):
        seen = set()
        for m in range(d + 1):
            for n in range(d):
                p = projector_index(m, n, d)
                assert decode_projector_index(p, d) == (m, n)
                seen.add(p)
        assert seen == set(range(d * (d + 1)))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            projector_index(0, 4, 4)
