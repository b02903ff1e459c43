import numpy as np

from pygeotherm import (
    BoundaryConditions, ConfigurationError, PhysicalDomainError, StateFields, StructuralError, StructuredGrid, VelocityField, WellSpec, darcy_velocity,
    transmissibilities, well_rates,
)
# noinspection PyProtectedMember
from pygeotherm._src.enums import WellKind
from test.test_base import TestBase


class TestStructuredGrid(TestBase):
    def test_counts(self):
        grid = StructuredGrid(4, 3, 2, 10.0, 20.0, 5.0)
        self.assertEqual(24, grid.cell_count)
        self.assertEqual(3 * 3 * 2 + 4 * 2 * 2 + 4 * 3 * 1, grid.face_count)
        self.assertEqual(2 * (3 * 2 + 4 * 2 + 4 * 3), grid.boundary_cell.shape[0])
        self.assertEqual(1000.0, grid.cell_volume)

    def test_index_ordering(self):
        grid = StructuredGrid(4, 3, 2, 1.0, 1.0, 1.0)
        self.assertEqual(0, grid.index(0, 0, 0))
        self.assertEqual(1, grid.index(1, 0, 0))
        self.assertEqual(4, grid.index(0, 1, 0))
        self.assertEqual(12, grid.index(0, 0, 1))
        self.assertEqual((3, 2, 1), grid.ijk(23))
        self.assertAllClose([3.5, 2.5, 1.5], grid.centers[23])

    def test_index_outside(self):
        grid = StructuredGrid(2, 2, 2, 1.0, 1.0, 1.0)
        self.assertRaises(
            StructuralError("Cell (2, 0, 0) outside StructuredGrid(2x2x2, cell 1 x 1 x 1 m)"),
            lambda: grid.index(2, 0, 0)
        )

    def test_invalid_dimensions(self):
        self.assertRaises(
            StructuralError("Cell counts must be positive, got (0, 1, 1)"),
            lambda: StructuredGrid(0, 1, 1, 1.0, 1.0, 1.0)
        )
        self.assertRaises(
            StructuralError("Cell sizes must be positive, got (1.0, -1.0, 1.0)"),
            lambda: StructuredGrid(1, 1, 1, 1.0, -1.0, 1.0)
        )

    def test_faces_point_from_owner_to_neighbor(self):
        grid = StructuredGrid(3, 3, 3, 2.0, 2.0, 2.0)
        separation = grid.centers[grid.neighbor] - grid.centers[grid.owner]
        self.assertAllClose(2.0 * grid.face_normals, separation)
        self.assertTrue(np.all(grid.owner < grid.neighbor))

    def test_cells_are_closed(self):
        grid = StructuredGrid(3, 4, 2, 1.0, 2.0, 3.0)
        self.assertAllClose(np.zeros((grid.cell_count, 3)), grid.oriented_area_sums(), atol=1e-12)

    def test_cell_at_and_column(self):
        grid = StructuredGrid(4, 4, 2, 100.0, 100.0, 50.0)
        self.assertEqual(grid.index(3, 3, 0), grid.cell_at(400.0, 400.0, 0.0))
        self.assertEqual(grid.index(1, 2, 1), grid.cell_at(150.0, 250.0, 75.0))
        self.assertEqual([0, 16], grid.column_at(0.0, 0.0).tolist())

    def test_adjacency_is_seven_point(self):
        grid = StructuredGrid(3, 3, 3, 1.0, 1.0, 1.0)
        adjacency = grid.adjacency()
        self.assertEqual(7, adjacency[grid.index(1, 1, 1)].nnz)
        self.assertEqual(4, adjacency[grid.index(0, 0, 0)].nnz)
        self.assertEqual(0, (adjacency - adjacency.T).nnz)

    def test_divergence_conserves(self):
        grid = StructuredGrid(3, 2, 2, 1.0, 1.0, 1.0)
        rng = np.random.default_rng(3)
        self.assertAlmostEqual(0.0, float(np.sum(grid.divergence(rng.normal(size=grid.face_count)))), places=12)

    def test_divergence_of_single_cell(self):
        grid = StructuredGrid(1, 1, 1, 1.0, 1.0, 1.0)
        self.assertEqual(0, grid.face_count)
        self.assertEqual([0.0], grid.divergence(np.zeros(0)).tolist())
        self.assertEqual([6.0], grid.divergence(np.zeros(0), np.ones(6)).tolist())


class TestTransmissibilities(TestBase):
    def test_harmonic_average(self):
        grid = StructuredGrid(2, 1, 1, 2.0, 1.0, 1.0)
        result = transmissibilities(grid, np.array([1.0, 3.0]))
        # area 1, half distances 1: k1 k2 / (k1 + k2)
        self.assertAllClose([0.75], result.interior)
        self.assertAllClose([1.0, 3.0, 4.0, 12.0, 4.0, 12.0, 4.0, 12.0, 4.0, 12.0], result.boundary)

    def test_anisotropic(self):
        grid = StructuredGrid(1, 2, 1, 1.0, 1.0, 1.0)
        k = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        self.assertAllClose([2.0], transmissibilities(grid, k).interior)

    def test_nonpositive_conductivity(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        self.assertRaises(
            PhysicalDomainError("Nonpositive conductivity on face 0 between cells 0 and 1: 1.0, 0.0"),
            lambda: transmissibilities(grid, np.array([1.0, 0.0]))
        )

    def test_shape_mismatch(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        self.assertRaises(
            StructuralError("Conductivity of shape (3,) does not match 2 cells"),
            lambda: transmissibilities(grid, np.ones(3))
        )


class TestDarcy(TestBase):
    def test_uniform_pressure_without_gravity_is_at_rest(self):
        grid = StructuredGrid(3, 3, 3, 10.0, 10.0, 10.0)
        n = grid.cell_count
        velocity = darcy_velocity(grid, np.full(n, 1e-13), np.full(n, 1e-3), np.full(n, 1000.0), np.full(n, 1e7), (0.0, 0.0, 0.0))
        self.assertEqual(0.0, float(np.max(np.abs(velocity.interior))))

    def test_hydrostatic_pressure_is_at_rest(self):
        grid = StructuredGrid(2, 2, 4, 10.0, 10.0, 10.0)
        n = grid.cell_count
        p = 1e7 + 1000.0 * 9.81 * grid.centers[:, 2]
        velocity = darcy_velocity(grid, np.full(n, 1e-13), np.full(n, 1e-3), np.full(n, 1000.0), p, (0.0, 0.0, 9.81))
        self.assertAllClose(np.zeros(grid.face_count), velocity.interior, atol=1e-15)

    def test_flow_runs_down_the_gradient(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        velocity = darcy_velocity(grid, np.full(2, 1e-12), np.array([1e-3, 2e-3]), np.full(2, 1000.0), np.array([2e5, 1e5]), (0.0, 0.0, 0.0))
        # Owner is upstream: its viscosity applies
        self.assertAllClose([1e-12 * 1e5 / 1e-3], velocity.interior)

    def test_pressure_boundary(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        boundaries = BoundaryConditions(pressure={"xmin": 2e5})
        velocity = darcy_velocity(grid, np.full(2, 1e-12), np.full(2, 1e-3), np.full(2, 1000.0), np.full(2, 1e5), (0.0, 0.0, 0.0), boundaries)
        inflow = velocity.boundary[grid.boundary_side == 0]
        self.assertAllClose([-2 * 1e-12 * 1e5 / 1e-3], inflow)
        self.assertAllClose(inflow, velocity.net_outflow(grid)[:1])

    def test_face_flux_direction(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        velocity = VelocityField(np.array([3.0]), np.zeros(grid.boundary_cell.shape[0]))
        self.assertEqual(3.0, velocity.face_flux(0, 0, grid))
        self.assertEqual(-3.0, velocity.face_flux(0, 1, grid))


class TestWellsAndBoundaries(TestBase):
    def test_rates_are_shared_by_cells(self):
        grid = StructuredGrid(2, 2, 2, 1.0, 1.0, 1.0)
        wells = [WellSpec("injector", WellKind.RATE, [0, 4], 2e-3, injection_temperature_c=10.0), WellSpec("producer", WellKind.RATE, [3], -1e-3)]
        rates = well_rates(grid, wells)
        self.assertAllClose([1e-3, 0, 0, -1e-3, 1e-3, 0, 0, 0], rates)
        self.assertTrue(wells[0].injecting)
        self.assertFalse(wells[1].injecting)

    def test_injector_needs_temperature(self):
        self.assertRaises(
            ConfigurationError("Injecting well 'w' needs an injection temperature"),
            lambda: WellSpec("w", WellKind.RATE, [0], 1e-3)
        )

    def test_pressure_well_needs_pressure(self):
        self.assertRaises(
            ConfigurationError("Pressure well 'w' needs a bottom pressure"),
            lambda: WellSpec("w", WellKind.PRESSURE, [0])
        )

    def test_well_outside_grid(self):
        grid = StructuredGrid(2, 1, 1, 1.0, 1.0, 1.0)
        well = WellSpec("w", WellKind.RATE, [5], -1e-3)
        self.assertRaises(
            ConfigurationError("Well 'w' references cells outside StructuredGrid(2x1x1, cell 1 x 1 x 1 m)"),
            lambda: well.validate(grid)
        )

    def test_unknown_side(self):
        self.assertRaises(
            ConfigurationError("Unknown boundary side 'top', expected one of xmin, xmax, ymin, ymax, zmin, zmax"),
            lambda: BoundaryConditions(temperature={"top": 10.0})
        )

    def test_side_faces(self):
        grid = StructuredGrid(2, 2, 1, 1.0, 1.0, 1.0)
        mask, values = BoundaryConditions(temperature={"zmax": 80.0}).temperature_faces(grid)
        self.assertEqual(4, int(np.count_nonzero(mask)))
        self.assertEqual([80.0] * 4, values[mask].tolist())


class TestStateFields(TestBase):
    def test_temperature_stacking(self):
        state = StateFields([1.0, 2.0], [3.0, 4.0], [5.0, 6.0])
        self.assertEqual([1.0, 2.0, 3.0, 4.0], state.temperature.tolist())
        updated = state.with_temperature(np.array([7.0, 8.0, 9.0, 10.0]))
        self.assertEqual([9.0, 10.0], updated.T_f.tolist())
        self.assertEqual([5.0, 6.0], updated.p.tolist())

    def test_non_finite(self):
        self.assertRaises(
            StructuralError("State fields must be finite"),
            lambda: StateFields([1.0], [np.nan], [1.0])
        )

    def test_length_mismatch(self):
        self.assertRaises(
            StructuralError("State fields must be equal-length vectors, got (1,), (2,), (1,)"),
            lambda: StateFields([1.0], [1.0, 2.0], [1.0])
        )
