import json

import numpy as np
import pytest

from freemarg.herm import (
    DensityMatrix,
    HermitianOperator,
    LayoutError,
    SubsystemLayout,
    SubsystemSet,
    ValidationError,
    eig_hermitian,
    embedding_to_hermitian,
    partial_trace,
    partial_transpose,
    permute_factors,
    psd_split,
    real_embedding,
    tensor,
    trace_norm,
)
from freemarg.states import ket, maximally_mixed, pure, qubit_layout, w_marginal, w_state

from conftest import rand_herm


def herm(labels, m):
    return HermitianOperator(qubit_layout(labels), m)


class TestLayouts:
    def test_basic(self):
        lay = SubsystemLayout([("A", 2), ("B", 3)])
        assert lay.total_dim == 6
        assert lay.labels == ("A", "B")
        assert lay.dim_of(["B"]) == 3

    def test_duplicate_labels_rejected(self):
        with pytest.raises(LayoutError):
            SubsystemLayout([("A", 2), ("A", 2)])

    def test_bad_dim_rejected(self):
        with pytest.raises(LayoutError):
            SubsystemLayout([("A", 0)])

    def test_subsystem_set_orders_members(self):
        lay = qubit_layout("ABC")
        s = SubsystemSet(lay, ("C", "A"))
        assert s.members == ("A", "C")

    def test_unknown_label(self):
        with pytest.raises(LayoutError):
            SubsystemSet(qubit_layout("AB"), ("Z",))


class TestHermitianValidation:
    def test_non_hermitian_rejected(self):
        m = np.array([[0, 1], [0, 0]], dtype=complex)
        with pytest.raises(ValidationError):
            HermitianOperator(qubit_layout("A"), m)

    def test_density_matrix_checks(self):
        lay = qubit_layout("A")
        with pytest.raises(ValidationError):
            DensityMatrix.from_array(lay, np.diag([1.5, -0.5]))
        with pytest.raises(ValidationError):
            DensityMatrix.from_array(lay, np.diag([0.7, 0.7]))

    def test_entries_immutable(self):
        op = herm("A", np.eye(2))
        with pytest.raises(ValueError):
            op.entries[0, 0] = 5.0


class TestTensor:
    def test_identity(self):
        out = tensor(herm("A", np.eye(2)), herm("B", np.eye(2)))
        assert np.array_equal(out.entries, np.eye(4))

    def test_computational_basis(self):
        p0 = herm("A", np.diag([1.0, 0.0]))
        p1 = herm("B", np.diag([0.0, 1.0]))
        out = tensor(p0, p1)
        assert np.allclose(out.entries, np.diag([0, 1, 0, 0]))

    def test_trace_multiplicative(self, rng):
        for _ in range(20):
            a = herm("A", rand_herm(rng, 2))
            b = herm("B", rand_herm(rng, 2))
            assert tensor(a, b).trace() == pytest.approx(a.trace() * b.trace(), abs=1e-12)

    def test_label_collision(self):
        with pytest.raises(LayoutError):
            tensor(herm("A", np.eye(2)), herm("A", np.eye(2)))


class TestPartialTrace:
    def test_max_entangled_marginal(self):
        lay = qubit_layout("AB")
        phi = pure(lay, ket(lay, "00") + ket(lay, "11"))
        red = partial_trace(phi.op, SubsystemSet(lay, ("A",)))
        assert np.allclose(red.entries, np.eye(2) / 2, atol=1e-14)

    def test_product_state(self, rng):
        lay = qubit_layout("AB")
        a = rand_herm(rng, 2)
        a = a @ a.conj().T
        a /= np.trace(a).real
        rho = tensor(herm("A", a), herm("B", np.diag([0.25, 0.75])))
        red = partial_trace(rho, SubsystemSet(lay, ("A",)))
        assert np.allclose(red.entries, a, atol=1e-14)

    def test_w_state_marginal(self):
        # two-body reduction of the W state: 2/3 |psi><psi| + 1/3 |00><00|
        lay = qubit_layout("ABC")
        red = partial_trace(w_state(lay).op, SubsystemSet(lay, ("A", "B")))
        assert np.allclose(red.entries, w_marginal().entries, atol=1e-14)

    def test_trace_preserved(self, rng):
        lay = qubit_layout("ABC")
        m = rand_herm(rng, 8)
        red = partial_trace(HermitianOperator(lay, m), SubsystemSet(lay, ("B",)))
        assert red.trace() == pytest.approx(np.trace(m).real, abs=1e-12)

    def test_tensor_then_trace(self, rng):
        for _ in range(10):
            a = herm("A", rand_herm(rng, 2))
            b = herm("B", rand_herm(rng, 2))
            both = tensor(a, b)
            red = partial_trace(both, SubsystemSet(both.layout, ("A",)))
            assert np.max(np.abs(red.entries - b.trace() * a.entries)) < 1e-12


class TestPartialTranspose:
    def test_product_case(self, rng):
        a, b = rand_herm(rng, 2), rand_herm(rng, 2)
        rho = tensor(herm("A", a), herm("B", b))
        pt = partial_transpose(rho, SubsystemSet(rho.layout, ("B",)))
        assert np.allclose(pt.entries, np.kron(a, b.T), atol=1e-14)

    def test_max_entangled_negative_eigenvalue(self):
        lay = qubit_layout("AB")
        phi = pure(lay, ket(lay, "00") + ket(lay, "11"))
        pt = partial_transpose(phi.op, SubsystemSet(lay, ("B",)))
        assert pt.min_eig() == pytest.approx(-0.5, abs=1e-12)

    def test_involution(self, rng):
        lay = qubit_layout("ABC")
        m = HermitianOperator(lay, rand_herm(rng, 8))
        part = SubsystemSet(lay, ("A", "C"))
        twice = partial_transpose(partial_transpose(m, part), part)
        assert np.max(np.abs(twice.entries - m.entries)) < 1e-14

    def test_commutes_with_partial_trace_on_disjoint_factors(self, rng):
        lay = qubit_layout("ABC")
        m = HermitianOperator(lay, rand_herm(rng, 8))
        keep = SubsystemSet(lay, ("A", "B"))
        part = SubsystemSet(lay, ("A",))
        left = partial_trace(partial_transpose(m, part), keep)
        sub_part = SubsystemSet(left.layout, ("A",))
        right = partial_transpose(partial_trace(m, keep), sub_part)
        assert np.max(np.abs(left.entries - right.entries)) < 1e-12


class TestEig:
    def test_diagonal(self):
        lay = SubsystemLayout([("A", 3)])
        vals, vecs = eig_hermitian(HermitianOperator(lay, np.diag([3.0, 1.0, 2.0])))
        assert np.allclose(vals, [1, 2, 3])

    def test_pauli_x(self):
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        vals, vecs = eig_hermitian(herm("A", sx))
        assert np.allclose(vals, [-1, 1])

    def test_published_shifted_witness_spectrum(self):
        # the four reference eigenvalues of the shifted W-marginal witness
        from freemarg.discrimination import W_EXAMPLE_WEIGHTS, w_example_witness_block

        block = w_example_witness_block()
        shifted = HermitianOperator(block.layout, block.entries + 0.01 * np.eye(4))
        vals, _ = eig_hermitian(shifted)
        assert np.max(np.abs(vals - W_EXAMPLE_WEIGHTS)) < 1e-12

    def test_reconstruction(self, rng):
        for d in (2, 4, 8):
            m = rand_herm(rng, d)
            op = HermitianOperator(SubsystemLayout([("A", d)]), m)
            vals, vecs = eig_hermitian(op)
            rebuilt = (vecs * vals) @ vecs.conj().T
            scale = max(1.0, np.max(np.abs(m)))
            assert np.max(np.abs(rebuilt - m)) < 1e-10 * scale

    def test_phase_convention(self, rng):
        m = rand_herm(rng, 4)
        _, vecs = eig_hermitian(HermitianOperator(SubsystemLayout([("A", 4)]), m))
        for k in range(4):
            first = vecs[np.flatnonzero(np.abs(vecs[:, k]) > 1e-12)[0], k]
            assert abs(first.imag) < 1e-12 and first.real > 0

    def test_deterministic(self, rng):
        m = rand_herm(rng, 6)
        op = HermitianOperator(SubsystemLayout([("A", 6)]), m)
        v1, w1 = eig_hermitian(op)
        v2, w2 = eig_hermitian(op)
        assert np.array_equal(v1, v2) and np.array_equal(w1, w2)


class TestRealEmbedding:
    def test_real_input_is_block_diagonal(self, rng):
        a = rand_herm(rng, 3).real
        emb = real_embedding(HermitianOperator(SubsystemLayout([("A", 3)]), a))
        assert np.allclose(emb, np.block([[a, np.zeros((3, 3))], [np.zeros((3, 3)), a]]))

    def test_pauli_y_spectrum(self):
        sy = np.array([[0, -1j], [1j, 0]])
        emb = real_embedding(herm("A", sy))
        assert np.allclose(emb, emb.T)
        assert np.allclose(np.linalg.eigvalsh(emb), [-1, -1, 1, 1])

    def test_trace_doubles(self, rng):
        m = rand_herm(rng, 4)
        assert np.trace(real_embedding(m)) == pytest.approx(2 * np.trace(m).real, abs=1e-12)

    def test_psd_iff(self, rng):
        m = rand_herm(rng, 4)
        assert (np.linalg.eigvalsh(real_embedding(m))[0] >= -1e-12) == \
               (np.linalg.eigvalsh(m)[0] >= -1e-12)

    def test_eigenvalues_doubled(self, rng):
        m = rand_herm(rng, 3)
        inner = np.linalg.eigvalsh(m)
        outer = np.linalg.eigvalsh(real_embedding(m))
        assert np.allclose(outer, np.repeat(inner, 2), atol=1e-12)

    def test_round_trip(self, rng):
        m = rand_herm(rng, 4)
        assert np.max(np.abs(embedding_to_hermitian(real_embedding(m)) - m)) < 1e-14


class TestNorms:
    def test_trace_norm_matches_psd_split(self, rng):
        for _ in range(10):
            m = rand_herm(rng, 5)
            op = HermitianOperator(SubsystemLayout([("A", 5)]), m)
            pos, neg = psd_split(op)
            assert trace_norm(op) == pytest.approx(
                np.trace(pos).real + np.trace(neg).real, abs=1e-10)
            assert np.max(np.abs(pos - neg - m)) < 1e-12
            assert np.linalg.eigvalsh(pos)[0] > -1e-12
            assert np.linalg.eigvalsh(neg)[0] > -1e-12


class TestPermute:
    def test_permutation_round_trip(self, rng):
        lay = qubit_layout("ABC")
        m = HermitianOperator(lay, rand_herm(rng, 8))
        p = permute_factors(m, ("C", "A", "B"))
        assert p.layout.labels == ("C", "A", "B")
        back = permute_factors(p, ("A", "B", "C"))
        assert np.max(np.abs(back.entries - m.entries)) < 1e-14

    def test_matches_kron_swap(self, rng):
        a, b = rand_herm(rng, 2), rand_herm(rng, 3)
        big = tensor(HermitianOperator(SubsystemLayout([("A", 2)]), a),
                     HermitianOperator(SubsystemLayout([("B", 3)]), b))
        swapped = permute_factors(big, ("B", "A"))
        assert np.allclose(swapped.entries, np.kron(b, a), atol=1e-14)


class TestSerialization:
    def test_exact_round_trip(self, rng):
        m = rand_herm(rng, 4)
        op = HermitianOperator(qubit_layout("AB"), m)
        text = json.dumps(op.to_json())
        back = HermitianOperator.from_json(json.loads(text))
        assert np.array_equal(back.entries, op.entries)
        assert back.layout == op.layout

    def test_density_round_trip(self):
        rho = maximally_mixed(qubit_layout("AB"))
        back = DensityMatrix.from_json(json.loads(json.dumps(rho.to_json())))
        assert np.array_equal(back.entries, rho.entries)
