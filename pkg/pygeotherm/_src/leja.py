from collections import deque
from threading import Lock
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix

from .exceptions import StructuralError
from .linalg import dense_phi_action, gershgorin_interval, phi_scalar
from .logger import _logger
from .phi import DEFAULT_MAX_SUBSTEPS, MatrixAction, PhiBackend, PhiResult, _CountingAction, _Evaluation, _phi_with_substeps

_DEGENERATE_WIDTH = 1e-300
_INTERVAL_INFLATION = 0.01


class LejaSequence:
    """
    Fast Leja points on the reference interval [-2, 2], starting at the right endpoint.
    """
    points: np.ndarray

    def __init__(self, points: np.ndarray) -> None:
        self.points = points

    @property
    def capacity(self) -> int:
        return len(self.points) - 1


def _generate_fast_leja(count: int) -> List[float]:
    """
    Candidates are midpoints of adjacent accepted points. The candidate with the largest distance product is accepted
    and replaced by the midpoints of the two intervals it creates. Products are kept as sums of logarithms.
    """
    points = [2.0, -2.0]
    # (candidate, left end, right end, log of distance product)
    candidates: List[Tuple[float, float, float, float]] = []

    def log_product(x: float) -> float:
        return float(np.sum(np.log(np.abs(x - np.asarray(points)))))

    candidates.append((0.0, -2.0, 2.0, log_product(0.0)))
    while len(points) < count:
        best = max(range(len(candidates)), key=lambda k: candidates[k][3])
        accepted, left, right, _ = candidates.pop(best)
        candidates = [(x, a, b, value + np.log(abs(x - accepted))) for x, a, b, value in candidates]
        points.append(accepted)
        for a, b in ((left, accepted), (accepted, right)):
            midpoint = 0.5 * (a + b)
            candidates.append((midpoint, a, b, log_product(midpoint)))
    return points[:count]


class _LejaCache:
    """
    Process-wide, append-only cache of the fast Leja sequence. Greedy generation makes every sequence a prefix of longer ones.
    """
    __points: List[float]
    __lock: Lock

    def __init__(self) -> None:
        self.__points = []
        self.__lock = Lock()

    def get(self, count: int) -> np.ndarray:
        with self.__lock:
            if len(self.__points) < count:
                self.__points = _generate_fast_leja(count)
            return np.array(self.__points[:count])


_LEJA_CACHE = _LejaCache()


def fast_leja_points(m: int) -> LejaSequence:
    """
    :param m: Index of the last point; m+1 points are returned
    """
    if m < 1:
        raise StructuralError(f"At least one Leja point beyond the first is required, got {m}")
    return LejaSequence(_LEJA_CACHE.get(m + 1))


class DividedDifferences:
    d: np.ndarray
    interval: Tuple[float, float]
    tau: float
    phi_order: int

    def __init__(self, d: np.ndarray, interval: Tuple[float, float], tau: float, phi_order: int) -> None:
        self.d = d
        self.interval = interval
        self.tau = tau
        self.phi_order = phi_order

    @property
    def center(self) -> float:
        return 0.5 * (self.interval[0] + self.interval[1])

    @property
    def half_width(self) -> float:
        """
        One quarter of the interval length: the scale mapping [-2, 2] onto the interval.
        """
        return 0.25 * (self.interval[1] - self.interval[0])


def divided_differences(i: int, tau: float, interval: Tuple[float, float], xi: LejaSequence, m: int) -> DividedDifferences:
    """
    Divided differences of phi_i(tau*(c + gamma*x)) at the Leja points x_0..x_m, read off the first column of
    phi_i(tau*(c*I + gamma*L)) where L is lower bidiagonal with the points on its diagonal and ones below it.

    :param interval: Spectral interval of J (not scaled by tau)
    """
    alpha, beta = interval
    if beta < alpha:
        raise StructuralError(f"Invalid interval ({alpha}, {beta})")
    if m < 0 or m > xi.capacity:
        raise StructuralError(f"Degree {m} outside the available Leja points (0..{xi.capacity})")
    center = 0.5 * (alpha + beta)
    gamma = 0.25 * (beta - alpha)
    d = np.zeros(m + 1)
    if beta - alpha < _DEGENERATE_WIDTH:
        d[0] = phi_scalar(i, tau * center)
        return DividedDifferences(d, interval, tau, i)
    bidiagonal = np.diag(xi.points[:m + 1]) + np.diag(np.ones(m), -1)
    matrix = tau * (center * np.eye(m + 1) + gamma * bidiagonal)
    unit = np.zeros(m + 1)
    unit[0] = 1.0
    return DividedDifferences(dense_phi_action(i, matrix, unit), interval, tau, i)


class LejaControl:
    tol_a: float
    tol_r: float
    p: int
    max_degree: int
    error_window: int

    def __init__(self, tol_a: float = 1e-6, tol_r: float = 1e-6, p: int = 2, max_degree: int = 120, error_window: int = 5) -> None:
        if tol_a <= 0 or tol_r <= 0:
            raise StructuralError(f"Leja tolerances must be positive, got tol_a={tol_a}, tol_r={tol_r}")
        assert error_window == 5, "The stopping rule averages the last five error estimates"
        self.tol_a = tol_a
        self.tol_r = tol_r
        self.p = p
        self.max_degree = max_degree
        self.error_window = error_window


def inflate_interval(interval: Tuple[float, float]) -> Tuple[float, float]:
    alpha, beta = interval
    margin = _INTERVAL_INFLATION * (beta - alpha)
    return alpha - margin, beta + margin


def _interpolate(
        apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, interval: Tuple[float, float], ctrl: LejaControl, y_norm_inf: float,
        cache: Dict[Tuple[int, float], DividedDifferences],
) -> _Evaluation:
    key = (i, tau)
    if key not in cache:
        cache[key] = divided_differences(i, tau, interval, fast_leja_points(ctrl.max_degree), ctrl.max_degree)
    differences = cache[key]
    d, center, gamma = differences.d, differences.center, differences.half_width
    scale = ctrl.tol_a + ctrl.tol_r * y_norm_inf

    if gamma == 0:
        # Point spectrum: J acts as center*I on v
        residual = apply_j(v) - center * v
        estimate = float(np.sqrt(np.mean((tau * residual / scale) ** 2)))
        return _Evaluation(d[0] * v, estimate, 10 ** ctrl.p * estimate < 1)

    xi = fast_leja_points(ctrl.max_degree).points
    result = d[0] * v
    q = v.copy()
    window = deque(maxlen=ctrl.error_window)
    estimate = np.inf
    for degree in range(1, ctrl.max_degree + 1):
        q = (apply_j(q) - center * q) / gamma - xi[degree - 1] * q
        term = d[degree] * q
        result = result + term
        estimate = float(np.sqrt(np.mean((term / scale) ** 2)))
        window.append(estimate)
        if 10 ** ctrl.p * np.mean(window) < 1:
            _logger.debug(f"phi_leja: converged at degree {degree}")
            return _Evaluation(result, estimate, True)
    return _Evaluation(result, estimate, False)


def phi_leja(
        apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, interval: Tuple[float, float], ctrl: Optional[LejaControl] = None,
        y_norm_inf: Optional[float] = None, max_substeps: int = DEFAULT_MAX_SUBSTEPS,
) -> PhiResult:
    """
    phi_i(tau J) v by Newton interpolation at fast Leja points mapped onto the spectral interval of J.

    :param interval: Spectral interval of J, e.g. from gershgorin_interval; it is inflated by 1% on each side
    :param y_norm_inf: Max-norm of the current solution for the weighted error norm; ||v||_inf when omitted
    """
    ctrl = LejaControl() if ctrl is None else ctrl
    v = np.asarray(v, dtype=float)
    if y_norm_inf is None:
        y_norm_inf = float(np.max(np.abs(v))) if v.size else 0.0
    inflated = inflate_interval(interval)
    counting = _CountingAction(apply_j)
    cache: Dict[Tuple[int, float], DividedDifferences] = {}
    return _phi_with_substeps(
        lambda h, w, order: _interpolate(counting, h, w, order, inflated, ctrl, y_norm_inf, cache), counting, tau, v, i, max_substeps, "phi_leja",
    )


class LejaPhi(PhiBackend):
    ctrl: LejaControl
    max_substeps: int

    def __init__(self, ctrl: Optional[LejaControl] = None, max_substeps: int = DEFAULT_MAX_SUBSTEPS) -> None:
        self.ctrl = LejaControl() if ctrl is None else ctrl
        self.max_substeps = max_substeps

    @property
    def label(self) -> str:
        return "Leja"

    def apply(self, jacobian: Optional[csr_matrix], apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, y_norm_inf: float) -> PhiResult:
        assert jacobian is not None, "The Leja backend needs the assembled Jacobian for its spectral interval"
        return phi_leja(apply_j, tau, v, i, gershgorin_interval(jacobian), self.ctrl, y_norm_inf, self.max_substeps)
