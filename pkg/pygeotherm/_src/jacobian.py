from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .exceptions import StructuralError
from .linalg import as_sparse

Rhs = Callable[[np.ndarray, float], np.ndarray]


def color_columns(pattern: csr_matrix) -> np.ndarray:
    """
    Greedy distance-2 coloring: two columns get different colors whenever some row has a nonzero in both, so all columns
    of one color can be perturbed together.
    """
    structure = as_sparse(pattern)
    structure.data[:] = 1.0
    conflicts = (structure.T @ structure).tocsr()
    n = structure.shape[1]
    colors = np.full(n, -1, dtype=int)
    for column in range(n):
        neighbors = conflicts.indices[conflicts.indptr[column]:conflicts.indptr[column + 1]]
        taken = set(colors[neighbors].tolist())
        color = 0
        while color in taken:
            color += 1
        colors[column] = color
    return colors


def jacobian(
        rhs: Rhs, y: np.ndarray, t: float, pattern: csr_matrix, colors: Optional[np.ndarray] = None, f0: Optional[np.ndarray] = None,
) -> csr_matrix:
    """
    Forward-difference Jacobian of `rhs` on a known sparsity pattern, one extra rhs evaluation per color.
    Column j is perturbed by sqrt(eps)*(1 + |y_j|).

    :param colors: Output of `color_columns(pattern)`, when already computed
    :param f0: rhs(y, t), when already known
    """
    y = np.asarray(y, dtype=float)
    if pattern.shape != (y.shape[0], y.shape[0]):
        raise StructuralError(f"Sparsity pattern of shape {pattern.shape} does not match a state of length {y.shape[0]}")
    colors = color_columns(pattern) if colors is None else colors
    base = rhs(y, t) if f0 is None else f0
    structure = pattern.tocoo()
    rows, columns = structure.row, structure.col
    values = np.zeros(rows.shape[0])
    increments = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(y))
    for color in range(int(colors.max()) + 1 if len(colors) else 0):
        selected = colors == color
        perturbation = np.where(selected, increments, 0.0)
        difference = rhs(y + perturbation, t) - base
        entries = selected[columns]
        values[entries] = difference[rows[entries]] / increments[columns[entries]]
    return as_sparse(coo_matrix((values, (rows, columns)), shape=pattern.shape))
