from math import factorial
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix, csr_matrix, identity, issparse, tril, triu
from scipy.sparse.linalg import LinearOperator, bicgstab, spsolve_triangular

from .exceptions import StructuralError
from .logger import _logger

SparseMatrix = csr_matrix
DenseMatrix = np.ndarray

_PIVOT_FLOOR = 1e-12
_SERIES_RADIUS = 0.5


class LinearSolveReport(NamedTuple):
    iterations: int
    final_residual: float
    converged: bool


def as_sparse(matrix: Union[csr_matrix, np.ndarray]) -> csr_matrix:
    """
    Convert to the canonical row-major format: float values, duplicates summed, column indices sorted within every row.
    """
    if issparse(matrix):
        result = csr_matrix(matrix, dtype=float, copy=True)
    else:
        dense = np.atleast_2d(np.asarray(matrix, dtype=float))
        if dense.ndim != 2:
            raise StructuralError(f"Expected a 2-dimensional matrix, got {dense.ndim} dimensions")
        result = csr_matrix(dense)
    result.sum_duplicates()
    result.sort_indices()
    return result


def check_structure(matrix: csr_matrix) -> None:
    indptr, indices = matrix.indptr, matrix.indices
    if len(matrix.data) != len(indices):
        raise StructuralError(f"Value array length {len(matrix.data)} differs from index array length {len(indices)}")
    if len(indices) > 0 and (indices.min() < 0 or indices.max() >= matrix.shape[1]):
        raise StructuralError(f"Column index out of range for a matrix with {matrix.shape[1]} columns")
    for row in range(matrix.shape[0]):
        row_columns = indices[indptr[row]:indptr[row + 1]]
        if np.any(np.diff(row_columns) <= 0):
            raise StructuralError(f"Column indices of row {row} are not strictly increasing")


def spmv(matrix: csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != matrix.shape[1]:
        raise StructuralError(f"spmv: vector of shape {x.shape} does not match a matrix with {matrix.shape[1]} columns")
    return matrix @ x


def _with_diagonal(matrix: csr_matrix) -> csr_matrix:
    """
    Same pattern as the input, plus explicitly stored (possibly zero) diagonal entries.
    """
    n = matrix.shape[0]
    coo = matrix.tocoo()
    rows = np.concatenate([coo.row, np.arange(n)])
    columns = np.concatenate([coo.col, np.arange(n)])
    values = np.concatenate([coo.data, np.zeros(n)])
    result = coo_matrix((values, (rows, columns)), shape=matrix.shape).tocsr()
    result.sum_duplicates()
    result.sort_indices()
    return result


class Ilu0:
    """
    Incomplete LU factorization restricted to the sparsity pattern of the factored matrix (no fill-in).
    The unit lower factor and the upper factor share the pattern of the input; near-zero pivots are
    replaced by sign(pivot)*max(|pivot|, 1e-12*row-norm).
    """
    lower: csr_matrix
    upper: csr_matrix
    replaced_pivots: int

    def __init__(self, matrix: csr_matrix) -> None:
        if matrix.shape[0] != matrix.shape[1]:
            raise StructuralError(f"ILU(0) needs a square matrix, got shape {matrix.shape}")
        pattern = _with_diagonal(as_sparse(matrix))
        n = pattern.shape[0]
        indptr = pattern.indptr.tolist()
        indices = pattern.indices.tolist()
        values = pattern.data.tolist()
        row_norms = np.sqrt(np.asarray(pattern.multiply(pattern).sum(axis=1)).ravel()).tolist()
        diagonal_position = [indptr[row] + indices[indptr[row]:indptr[row + 1]].index(row) for row in range(n)]
        self.replaced_pivots = 0

        for row in range(n):
            start, end = indptr[row], indptr[row + 1]
            position_of = {indices[k]: k for k in range(start, end)}
            for k in range(start, diagonal_position[row]):
                pivot_row = indices[k]
                values[k] /= values[diagonal_position[pivot_row]]
                multiplier = values[k]
                for kk in range(diagonal_position[pivot_row] + 1, indptr[pivot_row + 1]):
                    target = position_of.get(indices[kk])
                    if target is not None:
                        values[target] -= multiplier * values[kk]
            pivot = values[diagonal_position[row]]
            floor = _PIVOT_FLOOR * row_norms[row] if row_norms[row] > 0 else 1.0
            if abs(pivot) < floor:
                values[diagonal_position[row]] = floor if pivot >= 0 else -floor
                self.replaced_pivots += 1

        if self.replaced_pivots > 0:
            _logger.warning(f"ILU(0) replaced {self.replaced_pivots} near-zero pivots")
        factors = csr_matrix((np.asarray(values), pattern.indices.copy(), pattern.indptr.copy()), shape=pattern.shape)
        self.lower = (tril(factors, k=-1, format='csr') + identity(n, format='csr')).tocsr()
        self.upper = triu(factors, format='csr')
        self.lower.sort_indices()
        self.upper.sort_indices()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        intermediate = spsolve_triangular(self.lower, rhs, lower=True, unit_diagonal=True)
        return spsolve_triangular(self.upper, intermediate, lower=False)

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.lower.shape, matvec=self.solve, dtype=float)


def _relative_residual(matrix: csr_matrix, b: np.ndarray, x: np.ndarray) -> float:
    b_norm = np.linalg.norm(b)
    residual_norm = np.linalg.norm(b - matrix @ x)
    return residual_norm / b_norm if b_norm > 0 else residual_norm


def bicgstab_ilu0(
        matrix: csr_matrix, b: np.ndarray, x0: Optional[np.ndarray] = None, tol: float = 1e-6, max_iter: int = 500, preconditioner: Optional[Ilu0] = None,
) -> Tuple[np.ndarray, LinearSolveReport]:
    """
    Solve A x = b with BiCGStab preconditioned by ILU(0).

    :param matrix: Square system matrix
    :param b: Right-hand side
    :param x0: Initial guess, zero when omitted
    :param tol: Requested relative residual ||b - A x|| / ||b||
    :param max_iter: Iteration cap per attempt
    :param preconditioner: A factorization to reuse (e.g. across the stages of a Rosenbrock step); computed from `matrix` when omitted
    :return: The solution and a report whose residual is recomputed independently of the Krylov recursion
    """
    if matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"bicgstab_ilu0 needs a square matrix, got shape {matrix.shape}")
    if tol <= 0:
        raise StructuralError(f"bicgstab_ilu0 tolerance must be positive, got {tol}")
    b = np.asarray(b, dtype=float)
    if b.shape != (matrix.shape[0],):
        raise StructuralError(f"bicgstab_ilu0: right-hand side of shape {b.shape} does not match a matrix of shape {matrix.shape}")
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return np.zeros_like(b), LinearSolveReport(0, 0.0, True)
    # scipy's breakdown test is absolute, so the system is solved for b / ||b||
    b = b / b_norm
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float) / b_norm
    if preconditioner is None:
        preconditioner = Ilu0(matrix)

    iterations = 0

    def count(_: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    operator = preconditioner.as_operator()
    # The recursive residual of BiCGStab can drift from the true one; a restart from the current iterate repairs that
    for attempt in range(3):
        x, info = bicgstab(matrix, b, x0=x, rtol=tol, atol=0.0, maxiter=max_iter, M=operator, callback=count)
        residual = _relative_residual(matrix, b, x)
        if residual <= tol:
            return x * b_norm, LinearSolveReport(iterations, residual, True)
        if info < 0:
            _logger.debug(f"BiCGStab breakdown after {iterations} iterations (relative residual {residual:.3e}), restarting without preconditioner")
            operator = None
        elif info > 0:
            break
    residual = _relative_residual(matrix, b, x)
    return x * b_norm, LinearSolveReport(iterations, residual, residual <= tol)


def _check_dense(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"{name} needs a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise StructuralError(f"{name} received non-finite entries")
    return matrix


def dense_expm(matrix: DenseMatrix) -> DenseMatrix:
    """
    Matrix exponential by degree-13 Padé approximation with scaling and squaring.
    """
    return scipy.linalg.expm(_check_dense(matrix, "dense_expm"))


def dense_phi(i: int, matrix: DenseMatrix) -> DenseMatrix:
    """
    phi_i of a small dense matrix, read off the exponential of the block matrix [[A, I, 0..], [0, 0, I..], .., [0, .., 0]].
    """
    if i < 1:
        raise StructuralError(f"phi order must be at least 1, got {i}")
    matrix = _check_dense(matrix, "dense_phi")
    n = matrix.shape[0]
    augmented = np.zeros((n * (i + 1), n * (i + 1)))
    augmented[:n, :n] = matrix
    for block in range(i):
        augmented[block * n:(block + 1) * n, (block + 1) * n:(block + 2) * n] = np.eye(n)
    return scipy.linalg.expm(augmented)[:n, i * n:]


def dense_phi_action(i: int, matrix: DenseMatrix, b: np.ndarray) -> np.ndarray:
    """
    phi_i(A) b for a small dense A, through the exponential of [[A, b, 0], [0, 0, I], [0, 0, 0]] of size n+i.
    """
    if i < 0:
        raise StructuralError(f"phi order must be non-negative, got {i}")
    matrix = _check_dense(matrix, "dense_phi_action")
    if i == 0:
        return scipy.linalg.expm(matrix) @ b
    n = matrix.shape[0]
    augmented = np.zeros((n + i, n + i))
    augmented[:n, :n] = matrix
    augmented[:n, n] = b
    for k in range(1, i):
        augmented[n + k - 1, n + k] = 1.0
    return scipy.linalg.expm(augmented)[:n, n + i - 1]


def phi_scalar(i: int, z: Union[float, complex, np.ndarray]) -> Union[float, complex, np.ndarray]:
    """
    Scalar phi_i, evaluated elementwise. Uses the Taylor series sum_k z^k/(k+i)! when |z| < 0.5 and the recurrence
    phi_i(z) = (phi_{i-1}(z) - 1/(i-1)!)/z elsewhere.
    """
    if i < 0:
        raise StructuralError(f"phi order must be non-negative, got {i}")
    shape = np.shape(z)
    dtype = complex if np.iscomplexobj(z) else float
    z_array = np.atleast_1d(np.asarray(z, dtype=dtype)).ravel()
    if i == 0:
        result = np.exp(z_array)
        return result.reshape(shape) if shape else result[0]

    small = np.abs(z_array) < _SERIES_RADIUS
    result = np.empty_like(z_array)

    # 30 terms bring the series below machine precision for |z| < 0.5
    series = np.zeros_like(z_array[small])
    term = np.full_like(series, 1.0 / factorial(i))
    for k in range(30):
        series = series + term
        term = term * z_array[small] / (k + i + 1)
    result[small] = series

    large = ~small
    value = np.exp(z_array[large])
    for order in range(1, i + 1):
        value = (value - 1.0 / factorial(order - 1)) / z_array[large]
    result[large] = value
    return result.reshape(shape) if shape else result[0]


def gershgorin_interval(matrix: csr_matrix) -> Tuple[float, float]:
    """
    Real interval containing the projections of all Gershgorin discs, hence every real eigenvalue.
    """
    if matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"gershgorin_interval needs a square matrix, got shape {matrix.shape}")
    diagonal = matrix.diagonal()
    radius = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(diagonal)
    return float(np.min(diagonal - radius)), float(np.max(diagonal + radius))
