import sys
import time
from typing import Callable, List, NamedTuple, Optional, Sequence, TextIO

import numpy as np

from .enums import PhiMethod, SchemeFamily
from .integrators import IntegratorOptions, LinearSettings, NewtonSettings, integrate, stability_function
from .krylov import KrylovPhi, phi_krylov
from .leja import LejaControl, LejaPhi, phi_leja
from .linalg import dense_expm, dense_phi, dense_phi_action, gershgorin_interval, phi_scalar
from .logger import _logger
from .oracles import SemilinearProblem, dissipative_matrix, observed_order
from .tableaus import ROS2_1, ROS3P, SchemeId

ORDER_SCHEMES = (
    (SchemeId(SchemeFamily.THETA_EULER, 1.0), 1.0, 0.15),
    (SchemeId(SchemeFamily.THETA_EULER, 0.5), 2.0, 0.2),
    (SchemeId(SchemeFamily.EREM, phi_method=PhiMethod.KRYLOV), 2.0, 0.2),
    (SchemeId(SchemeFamily.EREM, phi_method=PhiMethod.LEJA), 2.0, 0.2),
    (SchemeId(SchemeFamily.ROSM, 1.0), 1.0, 0.15),
    (SchemeId(SchemeFamily.ROSM, 0.5), 2.0, 0.2),
    (SchemeId(SchemeFamily.ROS2), 2.0, 0.2),
    (SchemeId(SchemeFamily.ROS3P), 3.0, 0.3),
)
ORDER_TAUS = (0.1, 0.05, 0.025, 0.0125)

# Printed digits of the Rosenbrock coefficients
TABLEAU_DIGITS = {
    "ROS2 gamma": (ROS2_1.gamma, "1.707106781186547e+00"),
    "ROS2 a21": (ROS2_1.a[1, 0], "5.857864376269050e-01"),
    "ROS2 c21": (ROS2_1.c[1, 0], "1.171572875253810e+00"),
    "ROS2 b1": (ROS2_1.b[0], "8.786796564403575e-01"),
    "ROS2 b2": (ROS2_1.b[1], "2.928932188134525e-01"),
    "ROS3p gamma": (ROS3P.gamma, "7.886751345948129e-01"),
    "ROS3p a21": (ROS3P.a[1, 0], "1.267949192431123e+00"),
    "ROS3p c21": (ROS3P.c[1, 0], "1.607695154586736e+00"),
    "ROS3p c31": (ROS3P.c[2, 0], "3.464101615137755e+00"),
    "ROS3p c32": (ROS3P.c[2, 1], "1.732050807568877e+00"),
    "ROS3p b2": (ROS3P.b[1], "5.773502691896258e-01"),
    "ROS3p b3": (ROS3P.b[2], "4.226497308103742e-01"),
    "ROS3p b_hat1": (ROS3P.b_hat[0], "2.113248654051871e+00"),
}


class SelftestFailure(Exception):
    pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SelftestFailure(message)


class Check(NamedTuple):
    name: str
    run: Callable[[], str]


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


def _dense_identities() -> str:
    rng = np.random.default_rng(7)
    matrix = rng.normal(size=(6, 6))
    identity = np.eye(6)
    worst = max(
        np.max(np.abs(dense_phi(1, matrix) @ matrix + identity - dense_expm(matrix))),
        np.max(np.abs(dense_phi(2, matrix) @ matrix + identity - dense_phi(1, matrix))),
    )
    b = rng.normal(size=6)
    worst = max(worst, np.max(np.abs(dense_phi_action(2, matrix, b) - dense_phi(2, matrix) @ b)))
    z = np.array([-30.0, -1.0, -1e-3, 0.0, 1e-3, 0.4, 2.0])
    worst = max(worst, np.max(np.abs(phi_scalar(1, z) * z + 1 - np.exp(z))))
    _require(worst < 1e-10, f"largest identity defect {worst:.2e}")
    return f"largest identity defect {worst:.2e}"


def _backend_agreement() -> str:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(20, 201))
        matrix = dissipative_matrix(n, rng)
        v = rng.normal(size=n)
        oracle = dense_phi_action(1, matrix.toarray(), v)
        krylov = phi_krylov(lambda w: matrix @ w, 1.0, v, 1, m=10, tol=1e-10).value
        leja = phi_leja(lambda w: matrix @ w, 1.0, v, 1, gershgorin_interval(matrix), LejaControl(1e-10, 1e-10), max(np.max(np.abs(v)), 1.0)).value
        for value in (krylov, leja):
            worst = max(worst, np.linalg.norm(value - oracle) / np.linalg.norm(oracle))
    _require(worst <= 1e-6, f"largest relative deviation {worst:.2e}")
    return f"largest relative deviation {worst:.2e} over 10 matrices"


def _tableau_fidelity() -> str:
    mismatched = [name for name, (value, digits) in TABLEAU_DIGITS.items() if f"{value:.15e}" != digits]
    _require(not mismatched, f"coefficients differ: {', '.join(mismatched)}")
    return f"{len(TABLEAU_DIGITS)} coefficients match"


def _stability() -> str:
    real = -np.logspace(-3, 6, 60)
    imaginary = np.concatenate([[0.0], np.logspace(-3, 6, 60), -np.logspace(-3, 6, 60)])
    z = (np.concatenate([real, [0.0]])[:, None] + 1j * imaginary[None, :]).ravel()
    for label in ("theta:0.5", "theta:1", "rosm:0.5", "rosm:1"):
        worst = np.max(np.abs(stability_function(SchemeId.parse(label), z)))
        _require(worst <= 1 + 1e-12, f"{label}: |R(z)| reaches {worst:.15g} on the left half-plane")
    for label in ("theta:1", "rosm:1"):
        limit = abs(stability_function(SchemeId.parse(label), -1e6))
        _require(limit < 1e-5, f"{label}: |R(-1e6)| = {limit:.2e}")
    return "A-stable for theta, gamma in {0.5, 1}; L-stable limit for 1"


def order_errors(scheme: SchemeId, problem: SemilinearProblem, taus: Sequence[float] = ORDER_TAUS, t_end: float = 1.0) -> List[float]:
    """
    Max-norm errors at `t_end` of fixed-step runs on the manufactured semilinear problem.
    """
    options = IntegratorOptions(
        NewtonSettings(1e-13, 1e-13), LinearSettings(1e-13, 1000), KrylovPhi(20, 1e-12), LejaPhi(LejaControl(1e-10, 1e-10, max_degree=200)),
    )
    system = problem.system()
    exact = problem.exact(t_end)
    return [float(np.max(np.abs(integrate(scheme, system, problem.exact(0.0), 0.0, t_end, tau, options) - exact))) for tau in taus]


def _order_check(scheme: SchemeId, expected: float, tolerance: float) -> Callable[[], str]:
    def check() -> str:
        slope = observed_order(ORDER_TAUS, order_errors(scheme, SemilinearProblem()))
        _require(abs(slope - expected) <= tolerance, f"slope {slope:.3f}, expected {expected:g} +- {tolerance:g}")
        return f"slope {slope:.3f}"
    return check


def checks() -> List[Check]:
    suite = [
        Check("dense phi identities", _dense_identities),
        Check("Krylov and Leja against dense phi", _backend_agreement),
        Check("Rosenbrock coefficients", _tableau_fidelity),
        Check("stability functions", _stability),
    ]
    suite.extend(Check(f"order of {scheme.display_name}", _order_check(scheme, expected, tolerance)) for scheme, expected, tolerance in ORDER_SCHEMES)
    return suite


def run_selftest(out: Optional[TextIO] = None) -> int:
    """
    Runs every check, printing one line each.

    :return: 0 when every check passes, 3 otherwise
    """
    out = sys.stdout if out is None else out
    results = []
    for check in checks():
        start = time.perf_counter()
        try:
            detail = check.run()
            passed = True
        except SelftestFailure as e:
            detail, passed = str(e), False
        except (ArithmeticError, ValueError, RuntimeError) as e:
            detail, passed = f"{e.__class__.__name__}: {e}", False
        result = CheckResult(check.name, passed, detail, time.perf_counter() - start)
        results.append(result)
        print(f"{'PASS' if passed else 'FAIL'} {result.name}: {result.detail} ({result.seconds:.2f} s)", file=out)
    failed = [result.name for result in results if not result.passed]
    if failed:
        _logger.error(f"Selftest failed: {', '.join(failed)}")
        return 3
    return 0
