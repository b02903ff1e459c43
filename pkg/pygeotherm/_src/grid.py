from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .enums import WellKind
from .exceptions import ConfigurationError, PhysicalDomainError, StructuralError

SIDES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


class StructuredGrid:
    """
    Uniform structured grid of nx*ny*nz parallelepiped cells. Cell (i, j, k) has index i + nx*(j + ny*k).
    Interior faces are oriented from the owner (lower index along the face axis) to the neighbor.
    """
    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    centers: np.ndarray
    owner: np.ndarray
    neighbor: np.ndarray
    face_axis: np.ndarray
    face_area: np.ndarray
    d_owner: np.ndarray
    d_neighbor: np.ndarray
    boundary_cell: np.ndarray
    boundary_axis: np.ndarray
    boundary_sign: np.ndarray
    boundary_area: np.ndarray
    boundary_distance: np.ndarray
    boundary_side: np.ndarray

    def __init__(self, nx: int, ny: int, nz: int, dx: float, dy: float, dz: float) -> None:
        if min(nx, ny, nz) < 1:
            raise StructuralError(f"Cell counts must be positive, got ({nx}, {ny}, {nz})")
        if min(dx, dy, dz) <= 0:
            raise StructuralError(f"Cell sizes must be positive, got ({dx}, {dy}, {dz})")
        self.nx, self.ny, self.nz = int(nx), int(ny), int(nz)
        self.dx, self.dy, self.dz = float(dx), float(dy), float(dz)
        spacing = np.array([self.dx, self.dy, self.dz])
        areas = np.array([self.dy * self.dz, self.dx * self.dz, self.dx * self.dy])

        i, j, k = np.meshgrid(np.arange(self.nx), np.arange(self.ny), np.arange(self.nz), indexing='ij')
        i, j, k = (a.transpose(2, 1, 0).ravel() for a in (i, j, k))
        ijk = np.stack([i, j, k], axis=1)
        self.centers = (ijk + 0.5) * spacing
        counts = np.array([self.nx, self.ny, self.nz])

        owners, neighbors, axes = [], [], []
        boundary_cells, boundary_axes, boundary_signs, boundary_sides = [], [], [], []
        strides = np.array([1, self.nx, self.nx * self.ny])
        cells = np.arange(self.cell_count)
        for axis in range(3):
            has_next = ijk[:, axis] < counts[axis] - 1
            owners.append(cells[has_next])
            neighbors.append(cells[has_next] + strides[axis])
            axes.append(np.full(np.count_nonzero(has_next), axis))
            for sign, on_side in ((-1, ijk[:, axis] == 0), (1, ijk[:, axis] == counts[axis] - 1)):
                boundary_cells.append(cells[on_side])
                boundary_axes.append(np.full(np.count_nonzero(on_side), axis))
                boundary_signs.append(np.full(np.count_nonzero(on_side), sign))
                boundary_sides.append(np.full(np.count_nonzero(on_side), 2 * axis + (sign > 0)))

        self.owner = np.concatenate(owners)
        self.neighbor = np.concatenate(neighbors)
        self.face_axis = np.concatenate(axes)
        self.face_area = areas[self.face_axis]
        self.d_owner = 0.5 * spacing[self.face_axis]
        self.d_neighbor = 0.5 * spacing[self.face_axis]
        self.boundary_cell = np.concatenate(boundary_cells)
        self.boundary_axis = np.concatenate(boundary_axes)
        self.boundary_sign = np.concatenate(boundary_signs)
        self.boundary_area = areas[self.boundary_axis]
        self.boundary_distance = 0.5 * spacing[self.boundary_axis]
        self.boundary_side = np.concatenate(boundary_sides)

    def __repr__(self) -> str:
        return f"StructuredGrid({self.nx}x{self.ny}x{self.nz}, cell {self.dx:g} x {self.dy:g} x {self.dz:g} m)"

    @property
    def cell_count(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def volumes(self) -> np.ndarray:
        return np.full(self.cell_count, self.cell_volume)

    @property
    def face_count(self) -> int:
        return self.owner.shape[0]

    @property
    def face_normals(self) -> np.ndarray:
        return np.eye(3)[self.face_axis]

    @property
    def boundary_centers(self) -> np.ndarray:
        offset = np.eye(3)[self.boundary_axis] * (self.boundary_sign * self.boundary_distance)[:, None]
        return self.centers[self.boundary_cell] + offset

    def index(self, i: int, j: int, k: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= k < self.nz):
            raise StructuralError(f"Cell ({i}, {j}, {k}) outside {self}")
        return i + self.nx * (j + self.ny * k)

    def ijk(self, cell: int) -> Tuple[int, int, int]:
        return cell % self.nx, (cell // self.nx) % self.ny, cell // (self.nx * self.ny)

    def cell_at(self, x: float, y: float, z: float) -> int:
        """
        The cell containing the point; points on the outer boundary belong to the adjacent cell.
        """
        i = min(max(int(np.floor(x / self.dx)), 0), self.nx - 1)
        j = min(max(int(np.floor(y / self.dy)), 0), self.ny - 1)
        k = min(max(int(np.floor(z / self.dz)), 0), self.nz - 1)
        return self.index(i, j, k)

    def column_at(self, x: float, y: float) -> np.ndarray:
        """
        All cells of the vertical line through (x, y).
        """
        base = self.cell_at(x, y, 0.0)
        return base + self.nx * self.ny * np.arange(self.nz)

    def oriented_area_sums(self) -> np.ndarray:
        """
        Per cell, the sum of outward area vectors over all its faces; zero for a closed cell.
        """
        result = np.zeros((self.cell_count, 3))
        vectors = self.face_normals * self.face_area[:, None]
        np.add.at(result, self.owner, vectors)
        np.add.at(result, self.neighbor, -vectors)
        boundary_vectors = np.eye(3)[self.boundary_axis] * (self.boundary_sign * self.boundary_area)[:, None]
        np.add.at(result, self.boundary_cell, boundary_vectors)
        return result

    def adjacency(self) -> csr_matrix:
        """
        Boolean pattern of the 7-point stencil, diagonal included.
        """
        n = self.cell_count
        rows = np.concatenate([np.arange(n), self.owner, self.neighbor])
        columns = np.concatenate([np.arange(n), self.neighbor, self.owner])
        pattern = coo_matrix((np.ones(rows.shape[0]), (rows, columns)), shape=(n, n)).tocsr()
        pattern.sum_duplicates()
        pattern.data[:] = 1.0
        return pattern

    def divergence(self, face_flux: np.ndarray, boundary_flux: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Net outflow per cell of fluxes oriented owner->neighbor on interior faces and outward on boundary faces.
        """
        n = self.cell_count
        result = np.zeros(n)
        result += np.bincount(self.owner, weights=face_flux, minlength=n)
        result -= np.bincount(self.neighbor, weights=face_flux, minlength=n)
        if boundary_flux is not None:
            result += np.bincount(self.boundary_cell, weights=boundary_flux, minlength=n)
        return result


class Transmissibilities(NamedTuple):
    interior: np.ndarray
    boundary: np.ndarray


def _per_face(k_cell: np.ndarray, cells: np.ndarray, axes: np.ndarray) -> np.ndarray:
    return k_cell[cells] if k_cell.ndim == 1 else k_cell[cells, axes]


def transmissibilities(grid: StructuredGrid, k_cell: np.ndarray, active_boundary: Optional[np.ndarray] = None) -> Transmissibilities:
    """
    Two-point transmissibilities: the harmonic combination |s| k_i k_j / (k_j d_i + k_i d_j) on interior faces and the one-sided
    |s| k_i / d_i on boundary faces.

    :param k_cell: Per-cell conductivity, either isotropic (n,) or diagonal (n, 3)
    :param active_boundary: Boundary faces on which a value is imposed; those require a positive conductivity too
    """
    k_cell = np.asarray(k_cell, dtype=float)
    if k_cell.shape not in ((grid.cell_count,), (grid.cell_count, 3)):
        raise StructuralError(f"Conductivity of shape {k_cell.shape} does not match {grid.cell_count} cells")
    k_owner = _per_face(k_cell, grid.owner, grid.face_axis)
    k_neighbor = _per_face(k_cell, grid.neighbor, grid.face_axis)
    bad = np.flatnonzero((k_owner <= 0) | (k_neighbor <= 0))
    if len(bad) > 0:
        face = int(bad[0])
        raise PhysicalDomainError(
            f"Nonpositive conductivity on face {face} between cells {grid.owner[face]} and {grid.neighbor[face]}: {k_owner[face]}, {k_neighbor[face]}"
        )
    interior = grid.face_area * k_owner * k_neighbor / (k_neighbor * grid.d_owner + k_owner * grid.d_neighbor)
    k_boundary = _per_face(k_cell, grid.boundary_cell, grid.boundary_axis)
    if active_boundary is not None:
        bad = np.flatnonzero(active_boundary & (k_boundary <= 0))
        if len(bad) > 0:
            raise PhysicalDomainError(f"Nonpositive conductivity {k_boundary[bad[0]]} on boundary face of cell {grid.boundary_cell[bad[0]]}")
    boundary = grid.boundary_area * np.maximum(k_boundary, 0.0) / grid.boundary_distance
    return Transmissibilities(interior, boundary)


class StateFields:
    """
    Rock temperature, fluid temperature (C) and pressure (Pa) per cell.
    """
    T_s: np.ndarray
    T_f: np.ndarray
    p: np.ndarray

    def __init__(self, T_s: np.ndarray, T_f: np.ndarray, p: np.ndarray) -> None:
        self.T_s = np.asarray(T_s, dtype=float).copy()
        self.T_f = np.asarray(T_f, dtype=float).copy()
        self.p = np.asarray(p, dtype=float).copy()
        if not (self.T_s.shape == self.T_f.shape == self.p.shape) or self.T_s.ndim != 1:
            raise StructuralError(f"State fields must be equal-length vectors, got {self.T_s.shape}, {self.T_f.shape}, {self.p.shape}")
        if not (np.all(np.isfinite(self.T_s)) and np.all(np.isfinite(self.T_f)) and np.all(np.isfinite(self.p))):
            raise StructuralError("State fields must be finite")

    @property
    def cell_count(self) -> int:
        return self.p.shape[0]

    @property
    def temperature(self) -> np.ndarray:
        """
        The temperature unknowns (T_s, T_f) stacked in one vector.
        """
        return np.concatenate([self.T_s, self.T_f])

    def with_temperature(self, temperature: np.ndarray) -> 'StateFields':
        n = self.cell_count
        return StateFields(temperature[:n], temperature[n:], self.p)

    def with_pressure(self, p: np.ndarray) -> 'StateFields':
        return StateFields(self.T_s, self.T_f, p)

    def copy(self) -> 'StateFields':
        return StateFields(self.T_s, self.T_f, self.p)


class WellSpec:
    """
    A rate-controlled (volumetric rate shared uniformly by its cells, positive when injecting) or pressure-controlled well.
    """
    name: str
    kind: WellKind
    cells: np.ndarray
    rate: float
    bottom_pressure: Optional[float]
    injection_temperature: Optional[float]

    def __init__(
            self, name: str, kind: WellKind, cells: Iterable[int], rate_m3_per_s: float = 0.0, bottom_pressure_pa: Optional[float] = None,
            injection_temperature_c: Optional[float] = None,
    ) -> None:
        self.name = name
        self.kind = kind
        self.cells = np.unique(np.asarray(list(cells), dtype=int))
        self.rate = float(rate_m3_per_s)
        self.bottom_pressure = bottom_pressure_pa
        self.injection_temperature = injection_temperature_c
        if len(self.cells) == 0:
            raise ConfigurationError(f"Well '{name}' has no cells")
        if kind is WellKind.RATE and self.rate == 0:
            raise ConfigurationError(f"Rate well '{name}' must have a nonzero rate")
        if kind is WellKind.PRESSURE and bottom_pressure_pa is None:
            raise ConfigurationError(f"Pressure well '{name}' needs a bottom pressure")
        if kind is WellKind.RATE and self.rate > 0 and injection_temperature_c is None:
            raise ConfigurationError(f"Injecting well '{name}' needs an injection temperature")

    def __repr__(self) -> str:
        return f"WellSpec('{self.name}', {self.kind.value}, {len(self.cells)} cells)"

    def validate(self, grid: StructuredGrid) -> None:
        if self.cells.min() < 0 or self.cells.max() >= grid.cell_count:
            raise ConfigurationError(f"Well '{self.name}' references cells outside {grid}")

    @property
    def injecting(self) -> bool:
        return self.kind is WellKind.RATE and self.rate > 0


class BoundaryConditions:
    """
    Per-side Dirichlet temperature and/or pressure values; sides without a value are homogeneous Neumann.
    """
    temperature: Dict[str, float]
    pressure: Dict[str, float]

    def __init__(self, temperature: Optional[Dict[str, float]] = None, pressure: Optional[Dict[str, float]] = None) -> None:
        self.temperature = dict(temperature or {})
        self.pressure = dict(pressure or {})
        for side in list(self.temperature) + list(self.pressure):
            if side not in SIDES:
                raise ConfigurationError(f"Unknown boundary side '{side}', expected one of {', '.join(SIDES)}")

    def _face_values(self, grid: StructuredGrid, values: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
        mask = np.zeros(grid.boundary_cell.shape[0], dtype=bool)
        face_values = np.zeros(grid.boundary_cell.shape[0])
        for side, value in values.items():
            on_side = grid.boundary_side == SIDES.index(side)
            mask |= on_side
            face_values[on_side] = value
        return mask, face_values

    def temperature_faces(self, grid: StructuredGrid) -> Tuple[np.ndarray, np.ndarray]:
        return self._face_values(grid, self.temperature)

    def pressure_faces(self, grid: StructuredGrid) -> Tuple[np.ndarray, np.ndarray]:
        return self._face_values(grid, self.pressure)

    @property
    def has_pressure(self) -> bool:
        return len(self.pressure) > 0


class VelocityField:
    """
    Volumetric fluxes (m^3/s): owner->neighbor on interior faces, outward on boundary faces.
    """
    interior: np.ndarray
    boundary: np.ndarray

    def __init__(self, interior: np.ndarray, boundary: np.ndarray) -> None:
        self.interior = interior
        self.boundary = boundary

    @staticmethod
    def zero(grid: StructuredGrid) -> 'VelocityField':
        return VelocityField(np.zeros(grid.face_count), np.zeros(grid.boundary_cell.shape[0]))

    def face_flux(self, face: int, from_cell: int, grid: StructuredGrid) -> float:
        """
        Flux across an interior face, leaving `from_cell`.
        """
        if from_cell == grid.owner[face]:
            return float(self.interior[face])
        if from_cell == grid.neighbor[face]:
            return -float(self.interior[face])
        raise StructuralError(f"Cell {from_cell} is not adjacent to face {face}")

    def net_outflow(self, grid: StructuredGrid) -> np.ndarray:
        return grid.divergence(self.interior, self.boundary)


def _potential_difference(grid: StructuredGrid, rho: np.ndarray, p: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    """
    (p_i - p_j) + rho_face g.(x_j - x_i) with the arithmetic face density.
    """
    rho_face = 0.5 * (rho[grid.owner] + rho[grid.neighbor])
    separation = grid.centers[grid.neighbor] - grid.centers[grid.owner]
    return p[grid.owner] - p[grid.neighbor] + rho_face * (separation @ gravity)


def darcy_velocity(
        grid: StructuredGrid, K: np.ndarray, mu: np.ndarray, rho: np.ndarray, p: np.ndarray, gravity: Sequence[float] = (0.0, 0.0, -9.81),
        boundaries: Optional[BoundaryConditions] = None, k_transmissibility: Optional[Transmissibilities] = None,
) -> VelocityField:
    """
    Two-point Darcy fluxes v = -(K/mu)(grad p - rho g). The permeability is averaged harmonically, the viscosity is taken
    from the upstream cell of the potential difference.

    :param k_transmissibility: Precomputed `transmissibilities(grid, K)`, to skip recomputation
    """
    gravity = np.asarray(gravity, dtype=float)
    trans = transmissibilities(grid, K) if k_transmissibility is None else k_transmissibility
    potential = _potential_difference(grid, rho, p, gravity)
    mu_upstream = np.where(potential >= 0, mu[grid.owner], mu[grid.neighbor])
    interior = trans.interior / mu_upstream * potential

    boundary = np.zeros(grid.boundary_cell.shape[0])
    if boundaries is not None and boundaries.has_pressure:
        mask, values = boundaries.pressure_faces(grid)
        cells = grid.boundary_cell[mask]
        separation = grid.boundary_centers[mask] - grid.centers[cells]
        boundary_potential = p[cells] - values[mask] + rho[cells] * (separation @ gravity)
        boundary[mask] = trans.boundary[mask] / mu[cells] * boundary_potential
    return VelocityField(interior, boundary)


def well_rates(grid: StructuredGrid, wells: Sequence[WellSpec]) -> np.ndarray:
    """
    Per-cell volumetric rate of the rate-controlled wells, apportioned uniformly over each well's cells.
    """
    rates = np.zeros(grid.cell_count)
    for well in wells:
        if well.kind is WellKind.RATE:
            np.add.at(rates, well.cells, well.rate / len(well.cells))
    return rates


def pressure_well_cells(wells: Sequence[WellSpec]) -> List[Tuple[WellSpec, np.ndarray]]:
    return [(well, well.cells) for well in wells if well.kind is WellKind.PRESSURE]
