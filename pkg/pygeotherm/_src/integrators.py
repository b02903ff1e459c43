from abc import ABCMeta, abstractmethod
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix, identity

from .enums import PhiMethod, SchemeFamily
from .exceptions import PhysicalDomainError, StepFailure, StructuralError
from .jacobian import jacobian as colored_jacobian
from .krylov import KrylovPhi, jacobian_free_action
from .leja import LejaControl, LejaPhi
from .linalg import Ilu0, LinearSolveReport, as_sparse, bicgstab_ilu0
from .logger import _logger
from .phi import MatrixAction, PhiBackend, PhiResult, phi_pair
from .tableaus import RosenbrockTableau, SchemeId, _SchemeRegistrar

Rhs = Callable[[np.ndarray, float], np.ndarray]


class OdeSystem(metaclass=ABCMeta):
    """
    y' = f(y, t) with a sparse Jacobian.
    """
    autonomous: bool = True

    @abstractmethod
    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError()

    @abstractmethod
    def jacobian(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> csr_matrix:
        """
        :param f0: rhs(y, t), when already known
        """
        raise NotImplementedError()

    def df_dt(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Partial derivative of f in t; zero for autonomous systems, otherwise a forward difference.
        """
        if self.autonomous:
            return np.zeros_like(y, dtype=float)
        h = np.sqrt(np.finfo(float).eps) * max(1.0, abs(t))
        base = self.rhs(y, t) if f0 is None else f0
        return (self.rhs(y, t + h) - base) / h


class FunctionSystem(OdeSystem):
    """
    An OdeSystem from plain callables. Without an explicit Jacobian one is built by finite differences on `pattern`
    (dense when no pattern is given).
    """
    def __init__(
            self, rhs: Rhs, jacobian: Union[None, csr_matrix, np.ndarray, Callable[[np.ndarray, float], csr_matrix]] = None,
            df_dt: Optional[Rhs] = None, autonomous: bool = False, pattern: Optional[csr_matrix] = None,
    ) -> None:
        self.__rhs = rhs
        self.__df_dt = df_dt
        self.autonomous = autonomous
        self.__pattern = pattern
        if jacobian is None or callable(jacobian):
            self.__jacobian = jacobian
        else:
            constant = as_sparse(jacobian)
            self.__jacobian = lambda y, t: constant

    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(self.__rhs(y, t), dtype=float)

    def jacobian(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> csr_matrix:
        if self.__jacobian is not None:
            return as_sparse(self.__jacobian(y, t))
        pattern = self.__pattern if self.__pattern is not None else csr_matrix(np.ones((len(y), len(y))))
        return colored_jacobian(self.rhs, y, t, pattern, f0=f0)

    def df_dt(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> np.ndarray:
        if self.__df_dt is not None:
            return np.asarray(self.__df_dt(y, t), dtype=float)
        return super().df_dt(y, t, f0)


class WorkCounters:
    matvecs: int
    linsolves: int
    linear_iterations: int
    newton_iterations: int
    phi_evaluations: int
    jacobian_evaluations: int
    steps: int
    rejected_steps: int

    def __init__(self) -> None:
        self.matvecs = 0
        self.linsolves = 0
        self.linear_iterations = 0
        self.newton_iterations = 0
        self.phi_evaluations = 0
        self.jacobian_evaluations = 0
        self.steps = 0
        self.rejected_steps = 0

    def __repr__(self) -> str:
        return f"WorkCounters({', '.join(f'{k}={v}' for k, v in self.as_dict().items())})"

    def as_dict(self) -> dict:
        return dict(vars(self))

    def add(self, other: 'WorkCounters') -> 'WorkCounters':
        for name, value in other.as_dict().items():
            setattr(self, name, getattr(self, name) + value)
        return self

    def record_solve(self, report: LinearSolveReport) -> None:
        self.linsolves += 1
        self.linear_iterations += report.iterations

    def record_phi(self, *results: PhiResult) -> None:
        for result in results:
            self.phi_evaluations += 1
            self.matvecs += result.matvec_count


class NewtonSettings:
    atol: float
    rtol: float
    max_iterations: int
    rebuild_jacobian: bool

    def __init__(self, atol: float = 1e-6, rtol: float = 1e-6, max_iterations: int = 25, rebuild_jacobian: bool = True) -> None:
        self.atol = atol
        self.rtol = rtol
        self.max_iterations = max_iterations
        self.rebuild_jacobian = rebuild_jacobian


class LinearSettings(NamedTuple):
    tol: float = 1e-10
    max_iter: int = 500


def _solve(matrix: csr_matrix, b: np.ndarray, linear: LinearSettings, counters: WorkCounters, tau: float, preconditioner: Optional[Ilu0] = None) -> np.ndarray:
    x, report = bicgstab_ilu0(matrix, b, tol=linear.tol, max_iter=linear.max_iter, preconditioner=preconditioner)
    counters.record_solve(report)
    if not report.converged:
        raise StepFailure(f"Linear solve did not converge: relative residual {report.final_residual:.3e} after {report.iterations} iterations", tau)
    return x


def theta_euler_step(
        system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, theta: float, newton: Optional[NewtonSettings] = None,
        linear: LinearSettings = LinearSettings(), counters: Optional[WorkCounters] = None,
) -> np.ndarray:
    """
    Solve X - tau*theta*f(X, t_n + tau) - tau*(1 - theta)*f(y_n, t_n) - y_n = 0 by Newton's method started at y_n.
    theta = 0 is explicit Euler, without any solve.

    :raises StepFailure: if Newton does not converge within the iteration cap, a residual is not finite, or a linear solve fails
    """
    if tau <= 0:
        raise StructuralError(f"Time step must be positive, got {tau}")
    if not 0.0 <= theta <= 1.0:
        raise StructuralError(f"theta must lie in [0, 1], got {theta}")
    newton = NewtonSettings() if newton is None else newton
    counters = WorkCounters() if counters is None else counters
    y_n = np.asarray(y_n, dtype=float)
    f_n = system.rhs(y_n, t_n) if theta < 1 else np.zeros_like(y_n)
    if theta == 0:
        return y_n + tau * f_n

    t_next = t_n + tau
    explicit_part = y_n + tau * (1.0 - theta) * f_n
    x = y_n.copy()
    matrix, preconditioner = None, None
    for iteration in range(1, newton.max_iterations + 1):
        f_x = system.rhs(x, t_next)
        residual = x - tau * theta * f_x - explicit_part
        if not np.all(np.isfinite(residual)):
            raise StepFailure(f"Newton residual is not finite at iteration {iteration} (theta={theta:g}, tau={tau:g})", tau)
        if matrix is None or newton.rebuild_jacobian:
            counters.jacobian_evaluations += 1
            matrix = as_sparse(identity(len(x), format='csr') - tau * theta * system.jacobian(x, t_next, f_x))
            preconditioner = Ilu0(matrix)
        delta = _solve(matrix, -residual, linear, counters, tau, preconditioner)
        x = x + delta
        counters.newton_iterations += 1
        change = float(np.max(np.abs(delta))) if len(delta) else 0.0
        _logger.debug(f"Newton iteration {iteration}: max update {change:.3e}")
        if change <= newton.atol + newton.rtol * float(np.max(np.abs(x))):
            return x
    raise StepFailure(f"Newton did not converge in {newton.max_iterations} iterations (theta={theta:g}, tau={tau:g})", tau)


def erem_step_autonomous(
        f_n: np.ndarray, jacobian: Optional[csr_matrix], apply_j: MatrixAction, y_n: np.ndarray, tau: float, backend: PhiBackend,
) -> Tuple[np.ndarray, PhiResult]:
    """
    y_n + tau*phi_1(tau J) f(y_n): a single phi_1 action.
    """
    y_n = np.asarray(y_n, dtype=float)
    result = backend.apply(jacobian, apply_j, tau, f_n, 1, float(np.max(np.abs(y_n))) if len(y_n) else 0.0)
    return y_n + tau * result.value, result


def erem_step_nonautonomous(
        f_n: np.ndarray, df_dt: np.ndarray, jacobian: Optional[csr_matrix], apply_j: MatrixAction, y_n: np.ndarray, tau: float, backend: PhiBackend,
) -> Tuple[np.ndarray, List[PhiResult]]:
    """
    y_n + tau*phi_1(tau J) f + tau^2*phi_2(tau J) f_t.
    """
    y_n = np.asarray(y_n, dtype=float)
    increment, first, second = phi_pair(backend, jacobian, apply_j, tau, f_n, df_dt, float(np.max(np.abs(y_n))) if len(y_n) else 0.0)
    return y_n + increment, [first, second]


def rosm_step(
        f_n: np.ndarray, jacobian: csr_matrix, df_dt: np.ndarray, y_n: np.ndarray, tau: float, gamma: float,
        linear: LinearSettings = LinearSettings(), counters: Optional[WorkCounters] = None,
) -> np.ndarray:
    """
    y_n + tau*(I - tau*gamma*J)^-1 (f + gamma*tau*f_t): one linear solve.
    """
    counters = WorkCounters() if counters is None else counters
    matrix = as_sparse(identity(jacobian.shape[0], format='csr') - tau * gamma * jacobian)
    k = _solve(matrix, f_n + gamma * tau * df_dt, linear, counters, tau)
    return np.asarray(y_n, dtype=float) + tau * k


def rosenbrock_s_stage_step(
        f: Rhs, jacobian: csr_matrix, df_dt: np.ndarray, y_n: np.ndarray, t_n: float, tau: float, tab: RosenbrockTableau,
        f_n: Optional[np.ndarray] = None, linear: LinearSettings = LinearSettings(), counters: Optional[WorkCounters] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One step of an s-stage Rosenbrock method. All stages share the matrix (1/(tau*gamma)) I - J and one ILU(0) factorization.

    :return: The order-p solution and the embedded solution
    """
    counters = WorkCounters() if counters is None else counters
    y_n = np.asarray(y_n, dtype=float)
    matrix = as_sparse(identity(jacobian.shape[0], format='csr') / (tau * tab.gamma) - jacobian)
    preconditioner = Ilu0(matrix)
    stages: List[np.ndarray] = []
    previous_argument, previous_time, previous_value = y_n, t_n, f(y_n, t_n) if f_n is None else f_n
    for i in range(tab.stages):
        argument = y_n + sum((tab.a[i, j] * stages[j] for j in range(i)), np.zeros_like(y_n))
        stage_time = t_n + tab.alpha[i] * tau
        if stage_time != previous_time or not np.array_equal(argument, previous_argument):
            previous_argument, previous_time, previous_value = argument, stage_time, f(argument, stage_time)
        rhs = previous_value - sum(((tab.c[i, j] / tau) * stages[j] for j in range(i)), np.zeros_like(y_n)) + tau * tab.gamma_i[i] * df_dt
        stages.append(_solve(matrix, rhs, linear, counters, tau, preconditioner))
    y_next = y_n + sum(b * k for b, k in zip(tab.b, stages))
    y_embedded = y_n + sum(b * k for b, k in zip(tab.b_hat, stages))
    return y_next, y_embedded


def etd1_step(L: csr_matrix, N: Callable[[np.ndarray], np.ndarray], y_n: np.ndarray, tau: float, backend: PhiBackend) -> np.ndarray:
    """
    Exponential Euler for y' = L y + N(y): y_n + tau*phi_1(tau L)(L y_n + N(y_n)).
    """
    L = as_sparse(L)
    y_n = np.asarray(y_n, dtype=float)
    result = backend.apply(L, lambda v: L @ v, tau, L @ y_n + N(y_n), 1, float(np.max(np.abs(y_n))))
    return y_n + tau * result.value


_STABILITY = _SchemeRegistrar("stability function")


def _check_poles(denominator: np.ndarray, scheme: SchemeId) -> None:
    if np.any(denominator == 0):
        raise PhysicalDomainError(f"Stability function of {scheme.label} has a pole at the requested point")


@_STABILITY(SchemeFamily.THETA_EULER, SchemeFamily.ROSM)
def _one_stage_stability(scheme: SchemeId, z: np.ndarray) -> np.ndarray:
    weight = scheme.parameter
    denominator = 1.0 - weight * z
    _check_poles(denominator, scheme)
    return (1.0 + z * (1.0 - weight)) / denominator


@_STABILITY(SchemeFamily.EREM)
def _exponential_stability(scheme: SchemeId, z: np.ndarray) -> np.ndarray:
    return np.exp(z)


@_STABILITY(SchemeFamily.ROS2, SchemeFamily.ROS3P)
def _rosenbrock_stability(scheme: SchemeId, z: np.ndarray) -> np.ndarray:
    tab = scheme.tableau
    denominator = 1.0 / tab.gamma - z
    _check_poles(denominator, scheme)
    stages = []
    for i in range(tab.stages):
        argument = 1.0 + sum((tab.a[i, j] * stages[j] for j in range(i)), np.zeros_like(z))
        coupling = sum((tab.c[i, j] * stages[j] for j in range(i)), np.zeros_like(z))
        stages.append((z * argument - coupling) / denominator)
    return 1.0 + sum(b * k for b, k in zip(tab.b, stages))


def stability_function(scheme: SchemeId, z: Union[complex, np.ndarray]) -> Union[complex, np.ndarray]:
    """
    R(z) with y_next = R(tau*lambda) y_n on y' = lambda y.

    :raises PhysicalDomainError: at a pole
    """
    values = np.asarray(z, dtype=complex)
    result = _STABILITY.for_scheme(scheme)(scheme, values)
    return complex(result) if values.ndim == 0 else result


class StepController:
    tol_a: float
    tol_r: float
    safety: float
    fac_min: float
    fac_max: float
    tau: float

    def __init__(self, tau: float, tol_a: float = 1e-6, tol_r: float = 1e-6, safety: float = 0.9, fac_min: float = 0.2, fac_max: float = 6.0) -> None:
        if not 0 < fac_min < 1 < fac_max:
            raise StructuralError(f"Step factors must satisfy 0 < min < 1 < max, got {fac_min}, {fac_max}")
        if not 0 < safety <= 1:
            raise StructuralError(f"Safety factor must lie in (0, 1], got {safety}")
        self.tau = tau
        self.tol_a = tol_a
        self.tol_r = tol_r
        self.safety = safety
        self.fac_min = fac_min
        self.fac_max = fac_max

    def error_norm(self, y_next: np.ndarray, y_embedded: np.ndarray, y_n: np.ndarray) -> float:
        """
        RMS of the embedded difference, weighted by tol_a + tol_r*max(|y_n|, |y_next|).
        """
        scale = self.tol_a + self.tol_r * np.maximum(np.abs(y_n), np.abs(y_next))
        return float(np.sqrt(np.mean(((y_next - y_embedded) / scale) ** 2)))


def adapt_step(controller: StepController, err: float, p: int) -> Tuple[bool, float]:
    """
    Accept when err <= 1; the next step is tau*clamp(safety*err^(-1/p), fac_min, fac_max). Updates controller.tau.
    """
    assert err >= 0, "Error norms are non-negative"
    factor = controller.fac_max if err == 0 else min(controller.fac_max, max(controller.fac_min, controller.safety * err ** (-1.0 / p)))
    controller.tau = controller.tau * factor
    return err <= 1.0, controller.tau


class IntegratorOptions:
    """
    Everything a scheme needs beyond the system and the step: Newton and linear-solver settings and the phi backends.
    """
    newton: NewtonSettings
    linear: LinearSettings
    krylov: KrylovPhi
    leja: LejaPhi
    jacobian_free: bool

    def __init__(
            self, newton: Optional[NewtonSettings] = None, linear: LinearSettings = LinearSettings(), krylov: Optional[KrylovPhi] = None,
            leja: Optional[LejaPhi] = None, jacobian_free: bool = False,
    ) -> None:
        self.newton = NewtonSettings() if newton is None else newton
        self.linear = linear
        self.krylov = KrylovPhi() if krylov is None else krylov
        self.leja = LejaPhi(LejaControl()) if leja is None else leja
        self.jacobian_free = jacobian_free

    def backend(self, method: PhiMethod) -> PhiBackend:
        return self.leja if method is PhiMethod.LEJA else self.krylov


class StepOutcome(NamedTuple):
    y: np.ndarray
    y_embedded: Optional[np.ndarray]


_STEPPERS = _SchemeRegistrar("step function")


@_STEPPERS(SchemeFamily.THETA_EULER)
def _theta_euler(
        scheme: SchemeId, system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, options: IntegratorOptions, counters: WorkCounters,
        phi_method: Optional[PhiMethod],
) -> StepOutcome:
    return StepOutcome(theta_euler_step(system, y_n, t_n, tau, scheme.parameter, options.newton, options.linear, counters), None)


@_STEPPERS(SchemeFamily.EREM)
def _erem(
        scheme: SchemeId, system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, options: IntegratorOptions, counters: WorkCounters,
        phi_method: Optional[PhiMethod],
) -> StepOutcome:
    backend = options.backend(scheme.phi_method if phi_method is None else phi_method)
    f_n = system.rhs(y_n, t_n)
    matrix = None
    if not options.jacobian_free or isinstance(backend, LejaPhi):
        counters.jacobian_evaluations += 1
        matrix = system.jacobian(y_n, t_n, f_n)
    if options.jacobian_free:
        def apply_j(v: np.ndarray) -> np.ndarray:
            return jacobian_free_action(system.rhs, y_n, t_n, v, f_n=f_n)
    else:
        def apply_j(v: np.ndarray) -> np.ndarray:
            return matrix @ v
    if system.autonomous:
        y_next, result = erem_step_autonomous(f_n, matrix, apply_j, y_n, tau, backend)
        counters.record_phi(result)
    else:
        y_next, results = erem_step_nonautonomous(f_n, system.df_dt(y_n, t_n, f_n), matrix, apply_j, y_n, tau, backend)
        counters.record_phi(*results)
    return StepOutcome(y_next, None)


@_STEPPERS(SchemeFamily.ROSM)
def _rosm(
        scheme: SchemeId, system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, options: IntegratorOptions, counters: WorkCounters,
        phi_method: Optional[PhiMethod],
) -> StepOutcome:
    f_n = system.rhs(y_n, t_n)
    counters.jacobian_evaluations += 1
    matrix = system.jacobian(y_n, t_n, f_n)
    y_next = rosm_step(f_n, matrix, system.df_dt(y_n, t_n, f_n), y_n, tau, scheme.parameter, options.linear, counters)
    return StepOutcome(y_next, None)


@_STEPPERS(SchemeFamily.ROS2, SchemeFamily.ROS3P)
def _rosenbrock(
        scheme: SchemeId, system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, options: IntegratorOptions, counters: WorkCounters,
        phi_method: Optional[PhiMethod],
) -> StepOutcome:
    f_n = system.rhs(y_n, t_n)
    counters.jacobian_evaluations += 1
    matrix = system.jacobian(y_n, t_n, f_n)
    y_next, y_embedded = rosenbrock_s_stage_step(
        system.rhs, matrix, system.df_dt(y_n, t_n, f_n), y_n, t_n, tau, scheme.tableau, f_n, options.linear, counters,
    )
    return StepOutcome(y_next, y_embedded)


def step(
        scheme: SchemeId, system: OdeSystem, y_n: np.ndarray, t_n: float, tau: float, options: Optional[IntegratorOptions] = None,
        counters: Optional[WorkCounters] = None, phi_method: Optional[PhiMethod] = None,
) -> StepOutcome:
    """
    Advance `system` by one step of `scheme`.

    :param phi_method: Overrides the phi backend of an EREM scheme
    """
    options = IntegratorOptions() if options is None else options
    counters = WorkCounters() if counters is None else counters
    outcome = _STEPPERS.for_scheme(scheme)(scheme, system, np.asarray(y_n, dtype=float), t_n, tau, options, counters, phi_method)
    if not np.all(np.isfinite(outcome.y)):
        raise StepFailure(f"{scheme.display_name} step of {tau:g} produced non-finite values", tau)
    counters.steps += 1
    return outcome


def integrate(
        scheme: SchemeId, system: OdeSystem, y0: np.ndarray, t0: float, t_end: float, tau: float, options: Optional[IntegratorOptions] = None,
        counters: Optional[WorkCounters] = None,
) -> np.ndarray:
    """
    Fixed-step integration from t0 to t_end; the last step is shortened to land on t_end.
    """
    y, t = np.asarray(y0, dtype=float), t0
    while t < t_end - 1e-12 * max(1.0, abs(t_end)):
        h = min(tau, t_end - t)
        y = step(scheme, system, y, t, h, options, counters).y
        t += h
    return y
