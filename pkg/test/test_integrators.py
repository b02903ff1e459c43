import numpy as np
from scipy.sparse import csr_matrix, diags

from pygeotherm import (
    ORDER_SCHEMES, FunctionSystem, IntegratorOptions, KrylovPhi, LejaControl, LejaPhi, LinearSettings, NewtonSettings, PhysicalDomainError,
    SchemeId, SemilinearProblem, StepController, StepFailure, StructuralError, WorkCounters, adapt_step, etd1_step, integrate, observed_order,
    order_errors, stability_function, step, theta_euler_step,
)
from test.test_base import TestBase

EIGENVALUES = np.array([-0.1, -1.0, -5.0, -40.0])
ALL_LABELS = ("theta:1", "theta:0.5", "erem-krylov", "erem-leja", "rosm:1", "rosm:0.5", "ros2", "ros3p")


def linear_system() -> FunctionSystem:
    matrix = csr_matrix(diags(EIGENVALUES))
    return FunctionSystem(lambda y, t: matrix @ y, matrix, autonomous=True)


def tight_options(jacobian_free: bool = False) -> IntegratorOptions:
    return IntegratorOptions(
        NewtonSettings(1e-14, 1e-14), LinearSettings(1e-14, 100), KrylovPhi(10, 1e-12), LejaPhi(LejaControl(1e-12, 1e-12)), jacobian_free,
    )


class TestSingleSteps(TestBase):
    def test_one_step_applies_the_stability_function(self):
        y0 = np.ones(4)
        for label in ALL_LABELS:
            scheme = SchemeId.parse(label)
            result = step(scheme, linear_system(), y0, 0.0, 0.2, tight_options()).y
            self.assertAllClose(stability_function(scheme, 0.2 * EIGENVALUES).real, result, rtol=1e-8)

    def test_theta_euler_explicit(self):
        result = theta_euler_step(linear_system(), np.ones(4), 0.0, 0.01, 0.0)
        self.assertAllClose(1.0 + 0.01 * EIGENVALUES, result, rtol=1e-15)

    def test_theta_euler_nonlinear(self):
        system = FunctionSystem(lambda y, t: -y ** 3, lambda y, t: csr_matrix(np.diag(-3.0 * y ** 2)), autonomous=True)
        x = theta_euler_step(system, np.array([1.0]), 0.0, 0.5, 1.0, NewtonSettings(1e-13, 1e-13))
        # x + 0.5 x^3 = 1
        self.assertAllClose([0.0], x + 0.5 * x ** 3 - 1.0, atol=1e-12)

    def test_newton_iteration_cap(self):
        system = FunctionSystem(lambda y, t: -y ** 3, lambda y, t: csr_matrix(np.diag(-3.0 * y ** 2)), autonomous=True)
        self.assertRaises(
            StepFailure("Newton did not converge in 1 iterations (theta=1, tau=0.5)"),
            lambda: theta_euler_step(system, np.array([1.0]), 0.0, 0.5, 1.0, NewtonSettings(1e-13, 1e-13, max_iterations=1))
        )

    def test_theta_out_of_range(self):
        self.assertRaises(
            StructuralError("theta must lie in [0, 1], got 2.0"),
            lambda: theta_euler_step(linear_system(), np.ones(4), 0.0, 0.1, 2.0)
        )

    def test_nonpositive_step(self):
        self.assertRaises(
            StructuralError("Time step must be positive, got -0.1"),
            lambda: theta_euler_step(linear_system(), np.ones(4), 0.0, -0.1, 1.0)
        )

    def test_diverging_newton_fails_the_step(self):
        # The first update overshoots to x < 0, where sqrt is undefined
        system = FunctionSystem(lambda y, t: -np.sqrt(y), lambda y, t: csr_matrix(np.diag(-0.5 / np.sqrt(y))), autonomous=True)
        with np.errstate(invalid="ignore"):
            self.assertRaises(
                StepFailure("Newton residual is not finite at iteration 2 (theta=1, tau=100)"),
                lambda: theta_euler_step(system, np.array([1.0]), 0.0, 100.0, 1.0)
            )

    def test_non_finite_step_fails(self):
        system = FunctionSystem(lambda y, t: 1e308 * y, csr_matrix(np.eye(1)), autonomous=True)
        with np.errstate(over="ignore"):
            error = self.assertRaisesType(StepFailure, lambda: step(SchemeId.parse("theta:0"), system, np.array([10.0]), 0.0, 10.0))
        self.assertEqual("Implicit(theta=0) step of 10 produced non-finite values", str(error))
        self.assertEqual(10.0, error.tau)

    def test_rosenbrock_embedded_solution(self):
        outcome = step(SchemeId.parse("ros3p"), linear_system(), np.ones(4), 0.0, 0.1, tight_options())
        self.assertIsNotNone(outcome.y_embedded)
        self.assertGreater(float(np.max(np.abs(outcome.y - outcome.y_embedded))), 0.0)
        self.assertIsNone(step(SchemeId.parse("rosm:0.5"), linear_system(), np.ones(4), 0.0, 0.1, tight_options()).y_embedded)

    def test_jacobian_free_erem_matches_assembled(self):
        problem = SemilinearProblem(n=30)
        y0 = problem.exact(0.0)
        scheme = SchemeId.parse("erem-krylov")
        assembled = step(scheme, problem.system(), y0, 0.0, 0.05, tight_options()).y
        free = step(scheme, problem.system(), y0, 0.0, 0.05, tight_options(jacobian_free=True)).y
        self.assertAllClose(assembled, free, rtol=1e-6, atol=1e-9)

    def test_etd1_on_linear_problem_is_exact(self):
        matrix = csr_matrix(diags(EIGENVALUES))
        result = etd1_step(matrix, lambda y: np.zeros_like(y), np.ones(4), 0.3, KrylovPhi(10, 1e-12))
        self.assertAllClose(np.exp(0.3 * EIGENVALUES), result, rtol=1e-10)

    def test_etd1_with_constant_forcing(self):
        matrix = csr_matrix(diags([-2.0]))
        result = etd1_step(matrix, lambda y: np.array([4.0]), np.array([0.0]), 1.0, KrylovPhi(10, 1e-12))
        # y' = -2y + 4 from 0: y(1) = 2 (1 - e^-2)
        self.assertAllClose([2.0 * (1.0 - np.exp(-2.0))], result, rtol=1e-10)


class TestWorkCounters(TestBase):
    def run_counted(self, label: str, system: FunctionSystem, steps: int = 3) -> WorkCounters:
        counters = WorkCounters()
        integrate(SchemeId.parse(label), system, np.ones(4), 0.0, 0.1 * steps, 0.1, tight_options(), counters)
        return counters

    def test_rosenbrock_solves_per_step(self):
        self.assertEqual(3, self.run_counted("rosm:0.5", linear_system()).linsolves)
        self.assertEqual(6, self.run_counted("ros2", linear_system()).linsolves)
        self.assertEqual(9, self.run_counted("ros3p", linear_system()).linsolves)
        self.assertEqual(0, self.run_counted("ros3p", linear_system()).newton_iterations)

    def test_exponential_scheme_solves_nothing(self):
        counters = self.run_counted("erem-krylov", linear_system())
        self.assertEqual(0, counters.linsolves)
        self.assertEqual(0, counters.newton_iterations)
        self.assertEqual(3, counters.phi_evaluations)
        self.assertEqual(3, counters.steps)
        self.assertGreater(counters.matvecs, 0)

    def test_nonautonomous_exponential_step_needs_two_actions(self):
        matrix = csr_matrix(diags(EIGENVALUES))
        system = FunctionSystem(lambda y, t: matrix @ y + t, matrix, lambda y, t: np.ones_like(y))
        self.assertEqual(6, self.run_counted("erem-leja", system).phi_evaluations)

    def test_theta_euler_counts_newton(self):
        counters = self.run_counted("theta:1", linear_system())
        self.assertGreaterEqual(counters.newton_iterations, 3)
        self.assertEqual(counters.newton_iterations, counters.linsolves)

    def test_add(self):
        first = self.run_counted("ros2", linear_system())
        second = self.run_counted("ros2", linear_system())
        total = WorkCounters().add(first).add(second)
        self.assertEqual(12, total.linsolves)
        self.assertEqual(6, total.as_dict()["steps"])


class TestIntegrate(TestBase):
    def test_last_step_lands_on_end(self):
        counters = WorkCounters()
        result = integrate(SchemeId.parse("erem-krylov"), linear_system(), np.ones(4), 0.0, 1.0, 0.3, tight_options(), counters)
        self.assertEqual(4, counters.steps)
        # The exponential scheme is exact on a linear autonomous system
        self.assertAllClose(np.exp(EIGENVALUES), result, rtol=1e-9, atol=1e-12 * np.linalg.norm(np.ones(4)))

    def test_observed_orders(self):
        problem = SemilinearProblem()
        for scheme, expected, tolerance in ORDER_SCHEMES:
            with self.subTest(scheme=scheme.label):
                slope = observed_order((0.1, 0.05, 0.025, 0.0125), order_errors(scheme, problem))
                self.assertLessEqual(abs(slope - expected), tolerance)

    def test_observed_order_of_exact_power_law(self):
        taus = np.array([0.1, 0.05, 0.025])
        self.assertAllClose(3.0, observed_order(taus, 7.0 * taus ** 3), rtol=1e-12)

    def test_finite_difference_time_derivative(self):
        system = FunctionSystem(lambda y, t: np.sin(t) * y)
        self.assertAllClose([np.cos(1.0) * 2.0], system.df_dt(np.array([2.0]), 1.0), rtol=1e-6)


class TestStability(TestBase):
    def test_exponential_scheme_is_exact(self):
        z = np.array([-3.0, -0.5 + 2.0j])
        self.assertAllClose(np.exp(z), stability_function(SchemeId.parse("erem-leja"), z), rtol=1e-15)

    def test_l_stable_limits(self):
        for label in ("theta:1", "rosm:1"):
            self.assertLess(abs(stability_function(SchemeId.parse(label), -1e6)), 1e-5)
        self.assertAllClose(1.0, abs(stability_function(SchemeId.parse("theta:0.5"), -1e8)), rtol=1e-6)

    def test_rosenbrock_consistency(self):
        for label, order in (("ros2", 2), ("ros3p", 3)):
            z = 0.01
            self.assertLess(abs(stability_function(SchemeId.parse(label), -z) - np.exp(-z)), 10 * z ** (order + 1))

    def test_pole(self):
        self.assertRaises(
            PhysicalDomainError("Stability function of theta:1 has a pole at the requested point"),
            lambda: stability_function(SchemeId.parse("theta:1"), 1.0)
        )


class TestStepController(TestBase):
    def test_accepts_small_errors_and_grows(self):
        controller = StepController(10.0)
        accepted, tau = adapt_step(controller, 0.1, 2)
        self.assertTrue(accepted)
        self.assertAllClose(10.0 * 0.9 * 0.1 ** -0.5, tau)
        self.assertEqual(tau, controller.tau)

    def test_rejects_and_shrinks(self):
        controller = StepController(10.0)
        accepted, tau = adapt_step(controller, 1e6, 2)
        self.assertFalse(accepted)
        self.assertAllClose(2.0, tau)

    def test_zero_error_uses_largest_factor(self):
        controller = StepController(1.0)
        self.assertEqual((True, 6.0), adapt_step(controller, 0.0, 3))

    def test_error_norm(self):
        controller = StepController(1.0, tol_a=1.0, tol_r=0.0)
        self.assertAllClose(np.sqrt(2.5), controller.error_norm(np.array([1.0, 2.0]), np.array([0.0, 0.0]), np.zeros(2)))

    def test_invalid_factors(self):
        self.assertRaises(
            StructuralError("Step factors must satisfy 0 < min < 1 < max, got 1.5, 6.0"),
            lambda: StepController(1.0, fac_min=1.5)
        )
