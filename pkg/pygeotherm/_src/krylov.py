from typing import Callable, Optional

import numpy as np
from scipy.sparse import csr_matrix

from .enums import DifferenceFormula
from .exceptions import StructuralError
from .linalg import dense_phi_action
from .phi import DEFAULT_MAX_SUBSTEPS, MatrixAction, PhiBackend, PhiResult, _CountingAction, _Evaluation, _phi_with_substeps

_BREAKDOWN_TOLERANCE = 1e-14
_REORTHOGONALIZATION_THRESHOLD = 1e-8


class ArnoldiDecomposition:
    """
    Orthonormal Krylov basis V and upper Hessenberg H with J V_k = V_{k+1} H.
    On happy breakdown the basis holds only the k invariant directions.
    """
    basis: np.ndarray
    hessenberg: np.ndarray
    dimension: int
    happy_breakdown: bool

    def __init__(self, basis: np.ndarray, hessenberg: np.ndarray, dimension: int, happy_breakdown: bool) -> None:
        self.basis = basis
        self.hessenberg = hessenberg
        self.dimension = dimension
        self.happy_breakdown = happy_breakdown

    @property
    def h_bar(self) -> np.ndarray:
        """
        H_m bordered by the row h_{m+1,m} e_m^T and a zero column, or H_k itself after a happy breakdown.
        """
        k = self.dimension
        if self.happy_breakdown:
            return self.hessenberg[:k, :k].copy()
        bordered = np.zeros((k + 1, k + 1))
        bordered[:, :k] = self.hessenberg[:k + 1, :k]
        return bordered


def arnoldi(apply_j: MatrixAction, v: np.ndarray, m: int) -> ArnoldiDecomposition:
    """
    Arnoldi iteration with modified Gram-Schmidt, plus one classical Gram-Schmidt pass when orthogonality degrades.
    """
    if m < 1:
        raise StructuralError(f"Krylov dimension must be at least 1, got {m}")
    v = np.asarray(v, dtype=float)
    beta = np.linalg.norm(v)
    if not beta > 0:
        raise StructuralError("arnoldi: start vector has zero norm")
    basis = np.zeros((v.shape[0], m + 1))
    hessenberg = np.zeros((m + 1, m))
    basis[:, 0] = v / beta
    for j in range(m):
        w = apply_j(basis[:, j])
        product_norm = np.linalg.norm(w)
        for i in range(j + 1):
            hessenberg[i, j] = basis[:, i] @ w
            w = w - hessenberg[i, j] * basis[:, i]
        h_next = np.linalg.norm(w)
        if h_next > 0:
            overlap = basis[:, :j + 1].T @ w
            if np.max(np.abs(overlap)) > _REORTHOGONALIZATION_THRESHOLD * h_next:
                w = w - basis[:, :j + 1] @ overlap
                hessenberg[:j + 1, j] += overlap
                h_next = np.linalg.norm(w)
        hessenberg[j + 1, j] = h_next
        if h_next <= _BREAKDOWN_TOLERANCE * product_norm or product_norm == 0:
            return ArnoldiDecomposition(basis[:, :j + 1], hessenberg[:j + 2, :j + 1], j + 1, True)
        basis[:, j + 1] = w / h_next
    return ArnoldiDecomposition(basis, hessenberg, m, False)


def _project(apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, m: int, tol: float) -> _Evaluation:
    beta = np.linalg.norm(v)
    decomposition = arnoldi(apply_j, v, m)
    small = dense_phi_action(i, tau * decomposition.h_bar, np.eye(decomposition.h_bar.shape[0])[:, 0])
    value = beta * (decomposition.basis[:, :small.shape[0]] @ small)
    if decomposition.happy_breakdown:
        return _Evaluation(value, 0.0, True)
    # Contribution of the last basis vector, relative to the result
    value_norm = np.linalg.norm(value)
    estimate = beta * abs(small[-1]) / max(value_norm, np.finfo(float).tiny)
    return _Evaluation(value, estimate, estimate <= tol)


def phi_krylov(
        apply_j: MatrixAction, tau: float, v: np.ndarray, i: int = 1, m: int = 10, tol: float = 1e-6, max_substeps: int = DEFAULT_MAX_SUBSTEPS,
) -> PhiResult:
    """
    phi_i(tau J) v ~ ||v|| V_{m+1} phi_i(tau H_bar) e_1, with equal-substep splitting of tau when the estimate exceeds `tol`.

    :param apply_j: Action of J
    :param tau: Step length, positive
    :param v: Vector to act on
    :param i: Order of the phi-function
    :param m: Krylov dimension
    :param tol: Accepted relative estimate of the truncation term
    :param max_substeps: Cap on the number of substeps
    """
    if m < 1:
        raise StructuralError(f"Krylov dimension must be at least 1, got {m}")
    counting = _CountingAction(apply_j)
    return _phi_with_substeps(lambda h, w, order: _project(counting, h, w, order, m, tol), counting, tau, v, i, max_substeps, "phi_krylov")


def jacobian_free_action(
        f: Callable[[np.ndarray, float], np.ndarray], y_n: np.ndarray, t_n: float, v: np.ndarray, eps: float = 0.0,
        formula: DifferenceFormula = DifferenceFormula.FORWARD, f_n: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Directional derivative of f at y_n along v by finite differences.

    :param eps: Perturbation size; 0 selects sqrt(machine epsilon)*(1 + ||y_n||_inf)/||v||_2
    :param f_n: f(y_n, t_n), when already known (forward formula only)
    """
    if eps < 0:
        raise StructuralError(f"Perturbation must be non-negative, got {eps}")
    v = np.asarray(v, dtype=float)
    v_norm = np.linalg.norm(v)
    if v_norm == 0:
        return np.zeros_like(v)
    if eps == 0:
        eps = np.sqrt(np.finfo(float).eps) * (1.0 + np.max(np.abs(y_n))) / v_norm
    if formula is DifferenceFormula.CENTRAL:
        return (f(y_n + eps * v, t_n) - f(y_n - eps * v, t_n)) / (2.0 * eps)
    base = f(y_n, t_n) if f_n is None else f_n
    return (f(y_n + eps * v, t_n) - base) / eps


class KrylovPhi(PhiBackend):
    m: int
    tol: float
    max_substeps: int

    def __init__(self, m: int = 10, tol: float = 1e-6, max_substeps: int = DEFAULT_MAX_SUBSTEPS) -> None:
        self.m = m
        self.tol = tol
        self.max_substeps = max_substeps

    @property
    def label(self) -> str:
        return "Krylov"

    def apply(self, jacobian: Optional[csr_matrix], apply_j: MatrixAction, tau: float, v: np.ndarray, i: int, y_norm_inf: float) -> PhiResult:
        return phi_krylov(apply_j, tau, v, i, self.m, self.tol, self.max_substeps)
