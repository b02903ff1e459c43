from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix, diags

from .integrators import FunctionSystem


def observed_order(taus: Sequence[float], errors: Sequence[float]) -> float:
    """
    Least-squares slope of log(error) against log(tau).
    """
    taus = np.asarray(taus, dtype=float)
    errors = np.asarray(errors, dtype=float)
    assert len(taus) == len(errors) >= 2, "A slope needs at least two points"
    return float(np.polyfit(np.log(taus), np.log(errors), 1)[0])


def dissipative_matrix(n: int, rng: np.random.Generator, bound: float = 50.0, density: float = 0.05) -> csr_matrix:
    """
    Random symmetric, diagonally dominant matrix with non-positive spectrum whose Gershgorin interval lies in [-bound, 0].
    """
    couplings = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    couplings = (couplings + couplings.T) / 2
    np.fill_diagonal(couplings, 0.0)
    matrix = couplings - np.diag(couplings.sum(axis=1) + rng.uniform(0.0, 1.0, n))
    lower = np.min(np.diag(matrix) - (np.abs(matrix).sum(axis=1) - np.abs(np.diag(matrix))))
    return csr_matrix(matrix * (bound / abs(lower)))


class SemilinearProblem:
    """
    u' = D u_xx - u^2 + s(x, t) on (0, 1) with homogeneous Dirichlet ends, discretized by central differences on `n` interior points.
    The source s is manufactured from the discrete operator, so
    u(t) = exp(-t) sin(pi x) + 0.1 sin(2t) x (1 - x)
    solves the semi-discrete system exactly.
    """
    n: int
    diffusion: float
    x: np.ndarray
    laplacian: csr_matrix

    def __init__(self, n: int = 100, diffusion: float = 0.01) -> None:
        self.n = n
        self.diffusion = diffusion
        h = 1.0 / (n + 1)
        self.x = np.linspace(h, 1.0 - h, n)
        self.laplacian = csr_matrix(diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) * (diffusion / h ** 2))

    def __repr__(self) -> str:
        return f"SemilinearProblem(n={self.n}, diffusion={self.diffusion:g})"

    def exact(self, t: float) -> np.ndarray:
        return np.exp(-t) * np.sin(np.pi * self.x) + 0.1 * np.sin(2 * t) * self.x * (1 - self.x)

    def _exact_rate(self, t: float) -> np.ndarray:
        return -np.exp(-t) * np.sin(np.pi * self.x) + 0.2 * np.cos(2 * t) * self.x * (1 - self.x)

    def _exact_acceleration(self, t: float) -> np.ndarray:
        return np.exp(-t) * np.sin(np.pi * self.x) - 0.4 * np.sin(2 * t) * self.x * (1 - self.x)

    def source(self, t: float) -> np.ndarray:
        u = self.exact(t)
        return self._exact_rate(t) - self.laplacian @ u + u ** 2

    def source_rate(self, t: float) -> np.ndarray:
        u, rate = self.exact(t), self._exact_rate(t)
        return self._exact_acceleration(t) - self.laplacian @ rate + 2 * u * rate

    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        return self.laplacian @ y - y ** 2 + self.source(t)

    def jacobian(self, y: np.ndarray, t: float) -> csr_matrix:
        return csr_matrix(self.laplacian + diags(-2.0 * y))

    def system(self, pattern: Optional[csr_matrix] = None) -> FunctionSystem:
        """
        :param pattern: When given, the Jacobian is built by colored finite differences on it instead of analytically
        """
        if pattern is not None:
            return FunctionSystem(self.rhs, df_dt=lambda y, t: self.source_rate(t), pattern=pattern)
        return FunctionSystem(self.rhs, self.jacobian, lambda y, t: self.source_rate(t))
