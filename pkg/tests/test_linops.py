import numpy as np
import pytest

from conftest import counted, random_spd
from slmpcg.linops import (
    DimensionMismatchError,
    LinearOperator,
    NotSpdError,
    check_spd_probes,
    dense_eig,
    direct_solve,
    energy_norm,
    load_matrix_text,
    save_matrix_text,
    symmetric_sqrt,
)


class TestEnergyNorm:
    def test_identity(self):
        A = LinearOperator.identity(3)
        assert energy_norm(A, np.array([3.0, 4.0, 0.0])) == pytest.approx(5.0)

    def test_diagonal_quadratic_form(self):
        A = counted(np.diag([1.0, 4.0]))
        assert energy_norm(A, np.array([1.0, 1.0])) == pytest.approx(np.sqrt(5.0))

    def test_zero_vector(self):
        A = LinearOperator.identity(4)
        assert energy_norm(A, np.zeros(4)) == 0.0

    def test_consumes_exactly_one_matvec(self):
        A = counted(np.diag([1.0, 2.0]))
        energy_norm(A, np.array([1.0, 1.0]))
        assert A.matvec_count == 1

    def test_dimension_mismatch(self):
        A = LinearOperator.identity(3)
        with pytest.raises(DimensionMismatchError):
            energy_norm(A, np.ones(4))

    def test_indefinite_raises(self):
        A = counted(np.diag([1.0, -1.0]))
        with pytest.raises(NotSpdError):
            energy_norm(A, np.array([0.0, 1.0]))


class TestDenseEig:
    def test_diagonal_sorted(self):
        eig = dense_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(eig.values, [3.0, 2.0, 1.0])
        # eigenvectors are a signed permutation of the identity columns
        assert np.allclose(np.abs(eig.vectors).sum(axis=0), 1.0)
        assert np.allclose(np.abs(eig.vectors).sum(axis=1), 1.0)

    def test_two_by_two_hand_values(self):
        eig = dense_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(eig.values, [3.0, 1.0])

    def test_reconstruction(self):
        A, _ = random_spd(np.random.default_rng(0), 50)
        eig = dense_eig(A)
        R = (eig.vectors * eig.values) @ eig.vectors.T
        assert np.linalg.norm(R - A, 2) <= 1e-8 * eig.values[0]
        assert np.abs(eig.vectors.T @ eig.vectors - np.eye(50)).max() <= 1e-10

    def test_rejects_non_symmetric(self):
        with pytest.raises(DimensionMismatchError):
            dense_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(NotSpdError):
            dense_eig(np.diag([1.0, -2.0]))


class TestDirectSolve:
    def test_identity(self):
        x = direct_solve(np.eye(3), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(x, [1.0, 2.0, 3.0])

    def test_diagonal(self):
        x = direct_solve(np.diag([1.0, 2.0, 3.0]), np.ones(3))
        np.testing.assert_allclose(x, [1.0, 0.5, 1.0 / 3.0])

    def test_random_residual(self):
        rng = np.random.default_rng(1)
        A, _ = random_spd(rng, 20)
        b = rng.standard_normal(20)
        x = direct_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSpdError):
            direct_solve(np.diag([1.0, -1.0]), np.ones(2))


class TestSymmetricSqrt:
    def test_identity(self):
        np.testing.assert_allclose(symmetric_sqrt(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            symmetric_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0])
        )

    def test_reconstruction(self):
        A, eig = random_spd(np.random.default_rng(2), 30)
        L = symmetric_sqrt(A)
        assert np.allclose(L, L.T)
        assert np.linalg.norm(L @ L - A, 2) <= 1e-8 * eig.values[0]


class TestOperator:
    def test_agrees_with_dense_on_probes(self):
        rng = np.random.default_rng(3)
        A, _ = random_spd(rng, 25)
        op = counted(A)
        for _ in range(100):
            v = rng.standard_normal(25)
            ref = A @ v
            assert np.linalg.norm(op(v) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_counter_increments_once_per_apply(self):
        op = counted(np.eye(5))
        assert op.matvec_count == 0
        for expected in range(1, 6):
            op(np.ones(5))
            assert op.matvec_count == expected

    def test_probe_validation(self):
        rng = np.random.default_rng(4)
        A, _ = random_spd(rng, 15)
        check_spd_probes(counted(A), rng)
        with pytest.raises(NotSpdError):
            check_spd_probes(counted(np.diag([1.0] * 7 + [-1.0] * 8)), rng)

    def test_error_zero_iff_exact(self):
        rng = np.random.default_rng(5)
        A, _ = random_spd(rng, 10)
        b = rng.standard_normal(10)
        x_star = direct_solve(A, b)
        assert energy_norm(counted(A), x_star - x_star) <= 1e-12
        assert energy_norm(counted(A), x_star - (x_star + 1e-3)) > 1e-5

    def test_rejects_bad_dim(self):
        with pytest.raises(ValueError):
            LinearOperator(0, lambda v: v)


def test_matrix_text_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    A, _ = random_spd(rng, 7)
    path = tmp_path / "mat.txt"
    save_matrix_text(path, A)
    first = open(path).readline().strip()
    assert first == "7"
    np.testing.assert_array_equal(load_matrix_text(path), A)
