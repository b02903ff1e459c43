import numpy as np
from scipy.sparse import csr_matrix

from pygeotherm import (
    DifferenceFormula, KrylovPhi, NonConvergenceError, StructuralError, arnoldi, dense_phi_action, dissipative_matrix, jacobian_free_action,
    phi_krylov,
)
from test.test_base import TestBase


class TestArnoldi(TestBase):
    def test_basis_is_orthonormal(self):
        rng = np.random.default_rng(1)
        matrix = dissipative_matrix(60, rng)
        decomposition = arnoldi(lambda w: matrix @ w, rng.normal(size=60), 10)
        self.assertFalse(decomposition.happy_breakdown)
        self.assertEqual(10, decomposition.dimension)
        self.assertAllClose(np.eye(11), decomposition.basis.T @ decomposition.basis, atol=1e-12)

    def test_arnoldi_relation(self):
        rng = np.random.default_rng(2)
        matrix = dissipative_matrix(40, rng)
        decomposition = arnoldi(lambda w: matrix @ w, rng.normal(size=40), 8)
        self.assertAllClose(decomposition.basis @ decomposition.hessenberg, matrix @ decomposition.basis[:, :8], atol=1e-10)

    def test_happy_breakdown_on_invariant_subspace(self):
        matrix = np.diag([-1.0, -2.0, -3.0, -4.0])
        decomposition = arnoldi(lambda w: matrix @ w, np.array([1.0, 1.0, 0.0, 0.0]), 10)
        self.assertTrue(decomposition.happy_breakdown)
        self.assertEqual(2, decomposition.dimension)
        self.assertEqual((2, 2), decomposition.h_bar.shape)

    def test_zero_start_vector(self):
        self.assertRaises(
            StructuralError("arnoldi: start vector has zero norm"),
            lambda: arnoldi(lambda w: w, np.zeros(3), 2)
        )

    def test_dimension_must_be_positive(self):
        self.assertRaises(
            StructuralError("Krylov dimension must be at least 1, got 0"),
            lambda: arnoldi(lambda w: w, np.ones(3), 0)
        )


class TestPhiKrylov(TestBase):
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        for n in (25, 80, 200):
            matrix = dissipative_matrix(n, rng)
            v = rng.normal(size=n)
            expected = dense_phi_action(1, matrix.toarray(), v)
            result = phi_krylov(lambda w: matrix @ w, 1.0, v, 1, m=10, tol=1e-10)
            self.assertLessEqual(np.linalg.norm(result.value - expected) / np.linalg.norm(expected), 1e-6)

    def test_phi_two_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        matrix = dissipative_matrix(50, rng)
        v = rng.normal(size=50)
        expected = dense_phi_action(2, matrix.toarray(), v)
        result = phi_krylov(lambda w: matrix @ w, 1.0, v, 2, m=10, tol=1e-10)
        self.assertLessEqual(np.linalg.norm(result.value - expected) / np.linalg.norm(expected), 1e-6)

    def test_small_system_is_exact(self):
        matrix = np.array([[-1.0, 0.5, 0.0], [0.5, -2.0, 0.3], [0.0, 0.3, -0.7]])
        v = np.array([1.0, -2.0, 0.5])
        result = phi_krylov(lambda w: matrix @ w, 0.8, v, 1, m=10)
        self.assertAllClose(dense_phi_action(1, 0.8 * matrix, v), result.value, rtol=1e-12)
        self.assertEqual(1, result.substeps)
        self.assertEqual(0.0, result.err_estimate)

    def test_large_step_is_split(self):
        rng = np.random.default_rng(8)
        matrix = dissipative_matrix(100, rng, bound=50.0)
        v = rng.normal(size=100)
        result = phi_krylov(lambda w: matrix @ w, 2.0, v, 1, m=10, tol=1e-10)
        self.assertGreater(result.substeps, 1)
        expected = dense_phi_action(1, 2.0 * matrix.toarray(), v)
        self.assertLessEqual(np.linalg.norm(result.value - expected) / np.linalg.norm(expected), 1e-6)

    def test_zero_vector(self):
        result = phi_krylov(lambda w: w, 1.0, np.zeros(4), 1)
        self.assertEqual([0.0] * 4, result.value.tolist())
        self.assertEqual(0, result.matvec_count)

    def test_counts_matvecs(self):
        rng = np.random.default_rng(10)
        matrix = dissipative_matrix(30, rng)
        calls = []

        def action(w: np.ndarray) -> np.ndarray:
            calls.append(1)
            return matrix @ w

        result = phi_krylov(action, 0.1, rng.normal(size=30), 1, m=10)
        self.assertEqual(len(calls), result.matvec_count)

    def test_substep_cap(self):
        rng = np.random.default_rng(12)
        matrix = dissipative_matrix(100, rng)
        v = rng.normal(size=100)
        error = self.assertRaisesType(NonConvergenceError, lambda: phi_krylov(lambda w: matrix @ w, 50.0, v, 1, m=2, tol=1e-14, max_substeps=1))
        self.assertTrue(str(error).startswith("phi_krylov: no convergence within 1 substeps"))
        self.assertGreater(error.best_estimate, 1e-14)

    def test_nonpositive_step(self):
        self.assertRaises(
            StructuralError("phi_krylov: time step must be positive, got 0.0"),
            lambda: phi_krylov(lambda w: w, 0.0, np.ones(2), 1)
        )

    def test_backend_uses_action(self):
        matrix = csr_matrix(np.diag([-1.0, -3.0]))
        backend = KrylovPhi(m=4, tol=1e-12)
        result = backend.apply(None, lambda w: matrix @ w, 0.5, np.array([1.0, 1.0]), 1, 1.0)
        self.assertAllClose([(np.exp(-0.5) - 1) / -0.5, (np.exp(-1.5) - 1) / -1.5], result.value, rtol=1e-12)
        self.assertEqual("Krylov", backend.label)


class TestJacobianFreeAction(TestBase):
    def test_linear_function_is_exact(self):
        matrix = np.array([[2.0, -1.0], [0.5, 3.0]])
        y = np.array([1.0, 2.0])
        v = np.array([0.3, -0.7])
        result = jacobian_free_action(lambda x, t: matrix @ x, y, 0.0, v)
        self.assertAllClose(matrix @ v, result, rtol=1e-6)

    def test_central_difference(self):
        y = np.array([1.0, 2.0])
        v = np.array([1.0, 0.0])
        result = jacobian_free_action(lambda x, t: x ** 3, y, 0.0, v, formula=DifferenceFormula.CENTRAL)
        self.assertAllClose([3.0, 0.0], result, rtol=1e-7, atol=1e-9)

    def test_zero_direction(self):
        self.assertEqual([0.0, 0.0], jacobian_free_action(lambda x, t: x ** 2, np.ones(2), 0.0, np.zeros(2)).tolist())

    def test_negative_perturbation(self):
        self.assertRaises(
            StructuralError("Perturbation must be non-negative, got -1.0"),
            lambda: jacobian_free_action(lambda x, t: x, np.ones(2), 0.0, np.ones(2), eps=-1.0)
        )
