from abc import ABCMeta, abstractmethod
from math import factorial
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix

from .exceptions import NonConvergenceError, StructuralError
from .logger import _logger

MatrixAction = Callable[[np.ndarray], np.ndarray]

DEFAULT_MAX_SUBSTEPS = 1000


class PhiResult(NamedTuple):
    value: np.ndarray
    err_estimate: float
    matvec_count: int
    substeps: int


class _Evaluation(NamedTuple):
    value: np.ndarray
    err_estimate: float
    accepted: bool


class _CountingAction:
    """
    Wraps a matrix-action callback and counts its invocations.
    """
    count: int

    def __init__(self, action: MatrixAction) -> None:
        self.__action = action
        self.count = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        self.count += 1
        return self.__action(x)


# Evaluates phi_order(h*J) w for one (sub)step length h
_Evaluator = Callable[[float, np.ndarray, int], _Evaluation]


def _compose(evaluate: _Evaluator, apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, substeps: int) -> Optional[_Evaluation]:
    """
    phi_i(tau J) v from `substeps` equal substeps of the linear problem u' = J u + t^(i-1)/(i-1)! v, u(0) = 0, whose
    solution satisfies u(tau) = tau^i phi_i(tau J) v. One substep of length h is exact:
    u(t+h) = u(t) + h phi_1(hJ)(J u(t) + g(t)) + sum_{l=1}^{i-1} h^(l+1) phi_(l+1)(hJ) g^(l)(t).

    :return: None as soon as any sub-evaluation is not accepted
    """
    h = tau / substeps
    higher: Dict[int, np.ndarray] = {}
    worst = 0.0
    for order in range(2, i + 1):
        evaluation = evaluate(h, v, order)
        if not evaluation.accepted:
            return None
        higher[order] = evaluation.value
        worst = max(worst, evaluation.err_estimate)

    u = np.zeros_like(v)
    for step in range(substeps):
        t = step * h
        forcing = (t ** (i - 1) / factorial(i - 1)) * v
        direction = (apply_j(u) if step > 0 else 0.0) + forcing
        if np.any(direction):
            evaluation = evaluate(h, direction, 1)
            if not evaluation.accepted:
                return None
            worst = max(worst, evaluation.err_estimate)
            u = u + h * evaluation.value
        for order in range(2, i + 1):
            u = u + h ** order * (t ** (i - order) / factorial(i - order)) * higher[order]
    return _Evaluation(u / tau ** i, worst, True)


def _phi_with_substeps(
        evaluate: _Evaluator, apply_j: _CountingAction, tau: float, v: np.ndarray, i: int, max_substeps: int, backend: str,
) -> PhiResult:
    """
    Direct evaluation first; on failure, the step is split into 2, 4, 8, ... equal substeps up to `max_substeps`.
    """
    if tau <= 0:
        raise StructuralError(f"{backend}: time step must be positive, got {tau}")
    if i < 1:
        raise StructuralError(f"{backend}: phi order must be at least 1, got {i}")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return PhiResult(np.zeros_like(v), 0.0, 0, 0)

    direct = evaluate(tau, v, i)
    if direct.accepted:
        return PhiResult(direct.value, direct.err_estimate, apply_j.count, 1)
    best = direct.err_estimate
    substeps = 2
    while substeps <= max_substeps:
        _logger.debug(f"{backend}: splitting step {tau:.6g} into {substeps} substeps")
        composed = _compose(evaluate, apply_j, tau, v, i, substeps)
        if composed is not None:
            return PhiResult(composed.value, composed.err_estimate, apply_j.count, substeps)
        substeps *= 2
    raise NonConvergenceError(f"{backend}: no convergence within {max_substeps} substeps, best estimate {best:.3e}", best, tau)


class PhiBackend(metaclass=ABCMeta):
    """
    Evaluates phi_i(tau J) v for the Jacobian of the current step.
    """
    @abstractmethod
    def apply(self, jacobian: Optional[csr_matrix], apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, y_norm_inf: float) -> PhiResult:
        """
        :param jacobian: The assembled Jacobian, when available (required by backends which need a spectral interval)
        :param apply_j: The action of the Jacobian, possibly Jacobian-free
        :param tau: Step length
        :param v: Vector to act on
        :param i: Order of the phi-function
        :param y_norm_inf: Max-norm of the current solution, used by weighted error norms
        """
        raise NotImplementedError()

    @property
    @abstractmethod
    def label(self) -> str:
        raise NotImplementedError()


def phi_pair(backend: PhiBackend, jacobian: Optional[csr_matrix], apply_j: MatrixAction, tau: float, v: np.ndarray, w: np.ndarray, y_norm_inf: float) -> Tuple[np.ndarray, PhiResult, PhiResult]:
    """
    tau*phi_1(tau J) v + tau^2*phi_2(tau J) w, as needed by the non-autonomous exponential Rosenbrock-Euler step.
    """
    first = backend.apply(jacobian, apply_j, tau, v, 1, y_norm_inf)
    second = backend.apply(jacobian, apply_j, tau, w, 2, y_norm_inf)
    return tau * first.value + tau ** 2 * second.value, first, second
