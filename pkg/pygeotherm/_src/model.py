from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import bmat, csr_matrix, identity

from .enums import WellKind
from .exceptions import PhysicalDomainError, StructuralError
from .fluid import FluidModel, RockProps
from .grid import BoundaryConditions, StateFields, StructuredGrid, VelocityField, WellSpec, darcy_velocity, transmissibilities, well_rates
from .integrators import OdeSystem
from .jacobian import color_columns, jacobian


class ReservoirModel:
    """
    Finite-volume semi-discretization of coupled rock/fluid heat transport and single-phase mass balance.

    Temperatures are advanced by dT_s/dt = G1, dT_f/dt = G2 and the pressure by dp/dt = G4 = G3 + phi*alpha_f/S * G2, where
    S = phi*beta_f + phi0*alpha_b is the storage coefficient.
    """
    grid: StructuredGrid
    rock: RockProps
    fluid: FluidModel
    wells: Tuple[WellSpec, ...]
    boundaries: BoundaryConditions
    he: float
    gravity: np.ndarray

    def __init__(
            self, grid: StructuredGrid, rock: RockProps, fluid: FluidModel, wells: Sequence[WellSpec] = (), boundaries: Optional[BoundaryConditions] = None,
            he: float = 1e4, gravity: Sequence[float] = (0.0, 0.0, -9.81),
    ) -> None:
        if rock.cell_count != grid.cell_count:
            raise StructuralError(f"Rock properties for {rock.cell_count} cells do not match {grid}")
        if he < 0:
            raise PhysicalDomainError(f"Heat transfer coefficient must be non-negative, got {he}")
        for well in wells:
            well.validate(grid)
        self.grid = grid
        self.rock = rock
        self.fluid = fluid
        self.wells = tuple(wells)
        self.boundaries = BoundaryConditions() if boundaries is None else boundaries
        self.he = float(he)
        self.gravity = np.asarray(gravity, dtype=float)
        self.__temperature_faces = self.boundaries.temperature_faces(grid)
        self.__pressure_faces = self.boundaries.pressure_faces(grid)
        self.__permeability = transmissibilities(grid, rock.permeability, active_boundary=self.__pressure_faces[0])
        self.__rates = well_rates(grid, self.wells)
        self.__injection_temperature = np.full(grid.cell_count, np.nan)
        self.__pressure_well = np.zeros(grid.cell_count, dtype=bool)
        for well in self.wells:
            if well.injection_temperature is not None:
                self.__injection_temperature[well.cells] = well.injection_temperature
            if well.kind is WellKind.PRESSURE:
                self.__pressure_well[well.cells] = True
        self.__temperature_pattern: Optional[csr_matrix] = None
        self.__temperature_colors: Optional[np.ndarray] = None
        self.__pressure_colors: Optional[np.ndarray] = None

    @property
    def cell_count(self) -> int:
        return self.grid.cell_count

    @property
    def pressure_well_cells(self) -> np.ndarray:
        return np.flatnonzero(self.__pressure_well)

    @property
    def temperature_pattern(self) -> csr_matrix:
        """
        Grid adjacency for each temperature block plus the diagonal rock/fluid exchange coupling.
        """
        if self.__temperature_pattern is None:
            adjacency = self.grid.adjacency()
            eye = identity(self.cell_count, format='csr')
            self.__temperature_pattern = bmat([[adjacency, eye], [eye, adjacency]], format='csr')
            self.__temperature_colors = color_columns(self.__temperature_pattern)
        return self.__temperature_pattern

    @property
    def temperature_colors(self) -> np.ndarray:
        _ = self.temperature_pattern
        return self.__temperature_colors

    @property
    def pressure_pattern(self) -> csr_matrix:
        return self.grid.adjacency()

    @property
    def pressure_colors(self) -> np.ndarray:
        if self.__pressure_colors is None:
            self.__pressure_colors = color_columns(self.pressure_pattern)
        return self.__pressure_colors

    def velocity(self, state: StateFields) -> VelocityField:
        return darcy_velocity(
            self.grid, self.rock.permeability, self.fluid.viscosity(state.T_f), self.fluid.density(state.T_f), state.p, self.gravity, self.boundaries,
            self.__permeability,
        )

    def storage(self, phi: np.ndarray) -> np.ndarray:
        storage = phi * self.fluid.compressibility + self.rock.porosity0 * self.rock.alpha_b
        bad = np.flatnonzero(storage <= 0)
        if len(bad) > 0:
            raise PhysicalDomainError(f"Storage coefficient vanishes in cell {bad[0]}")
        return storage

    def _conduction_outflow(self, temperature: np.ndarray, conductivity: np.ndarray) -> np.ndarray:
        """
        Net conductive heat outflow per cell (W) with effective cell conductivities averaged harmonically.
        """
        if not np.any(conductivity):
            return np.zeros(self.cell_count)
        grid = self.grid
        mask, values = self.__temperature_faces
        trans = transmissibilities(grid, conductivity, active_boundary=mask)
        interior = trans.interior * (temperature[grid.owner] - temperature[grid.neighbor])
        boundary = np.where(mask, trans.boundary * (temperature[grid.boundary_cell] - values), 0.0)
        return grid.divergence(interior, boundary)

    def _boundary_inflow_temperature(self, T_f: np.ndarray) -> np.ndarray:
        """
        Temperature carried by fluid entering through each boundary face: the Dirichlet value where one is set.
        """
        mask, values = self.__temperature_faces
        return np.where(mask, values, T_f[self.grid.boundary_cell])

    def _advective_outflow(self, T_f: np.ndarray, vel: VelocityField) -> np.ndarray:
        """
        Net outflow of rho_f c_pf T_f with upstream face values (W).
        """
        grid = self.grid
        enthalpy = self.fluid.density(T_f) * self.fluid.heat_capacity(T_f) * T_f
        face_value = np.where(vel.interior >= 0, enthalpy[grid.owner], enthalpy[grid.neighbor])
        inflow_T = self._boundary_inflow_temperature(T_f)
        inflow_value = self.fluid.density(inflow_T) * self.fluid.heat_capacity(inflow_T) * inflow_T
        boundary_value = np.where(vel.boundary >= 0, enthalpy[grid.boundary_cell], inflow_value)
        return grid.divergence(vel.interior * face_value, vel.boundary * boundary_value)

    def well_flow(self, vel: VelocityField) -> np.ndarray:
        """
        Volumetric rate entering each cell from wells (m^3/s). Pressure-controlled cells supply whatever their faces carry away.
        """
        rates = self.__rates.copy()
        if np.any(self.__pressure_well):
            rates[self.__pressure_well] = vel.net_outflow(self.grid)[self.__pressure_well]
        return rates

    def _well_inflow_temperature(self, T_f: np.ndarray, rates: np.ndarray) -> np.ndarray:
        injected = np.where(np.isnan(self.__injection_temperature), T_f, self.__injection_temperature)
        return np.where(rates > 0, injected, T_f)

    def well_enthalpy(self, T_f: np.ndarray, vel: VelocityField) -> np.ndarray:
        """
        Enthalpy rate delivered by wells (W): injection at the well temperature, production at the cell temperature.
        """
        rates = self.well_flow(vel)
        temperature = self._well_inflow_temperature(T_f, rates)
        return self.fluid.density(temperature) * self.fluid.heat_capacity(temperature) * temperature * rates

    def well_mass(self, T_f: np.ndarray, vel: VelocityField) -> np.ndarray:
        rates = self.well_flow(vel)
        return self.fluid.density(self._well_inflow_temperature(T_f, rates)) * rates

    def mass_outflow(self, T_f: np.ndarray, vel: VelocityField) -> np.ndarray:
        """
        Net mass outflow per cell (kg/s) with upstream densities.
        """
        grid = self.grid
        rho = self.fluid.density(T_f)
        face_density = np.where(vel.interior >= 0, rho[grid.owner], rho[grid.neighbor])
        inflow_density = self.fluid.density(self._boundary_inflow_temperature(T_f))
        boundary_density = np.where(vel.boundary >= 0, rho[grid.boundary_cell], inflow_density)
        return grid.divergence(vel.interior * face_density, vel.boundary * boundary_density)

    def heat_capacities(self, state: StateFields) -> Tuple[np.ndarray, np.ndarray]:
        """
        Volumetric heat capacities (1 - phi) rho_s c_ps and phi rho_f c_pf (J/(m^3 K)).
        """
        phi = self.rock.porosity(state.p)
        rock = (1.0 - phi) * self.rock.density * self.rock.heat_capacity
        fluid = phi * self.fluid.density(state.T_f) * self.fluid.heat_capacity(state.T_f)
        for name, values in (("rock", rock), ("fluid", fluid)):
            bad = np.flatnonzero(values <= 0)
            if len(bad) > 0:
                raise PhysicalDomainError(f"Zero {name} heat capacity in cell {bad[0]}")
        return rock, fluid

    def rhs_temperature(self, state: StateFields, vel: Optional[VelocityField] = None, t: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """
        dT_s/dt and dT_f/dt.

        :param vel: Darcy fluxes to advect with; computed from `state` when omitted
        """
        vel = self.velocity(state) if vel is None else vel
        phi = self.rock.porosity(state.p)
        c_rock, c_fluid = self.heat_capacities(state)
        volume = self.grid.cell_volume
        exchange = self.he * (state.T_f - state.T_s)
        rock = (
            -self._conduction_outflow(state.T_s, (1.0 - phi) * self.rock.conductivity) / volume
            + (1.0 - phi) * self.rock.heat_production_rock + exchange
        )
        fluid = (
            -self._conduction_outflow(state.T_f, phi * self.fluid.conductivity) / volume
            - self._advective_outflow(state.T_f, vel) / volume
            + phi * self.rock.heat_production_fluid + self.well_enthalpy(state.T_f, vel) / volume - exchange
        )
        return rock / c_rock, fluid / c_fluid

    def mass_rate(self, state: StateFields, vel: VelocityField) -> np.ndarray:
        """
        Mass source minus net outflow per unit volume (kg/(m^3 s)).
        """
        return (self.well_mass(state.T_f, vel) - self.mass_outflow(state.T_f, vel)) / self.grid.cell_volume

    def rhs_pressure(self, state: StateFields, t: float = 0.0, vel: Optional[VelocityField] = None) -> np.ndarray:
        """
        dp/dt = G3 + phi*alpha_f/S * G2; zero in pressure-controlled well cells.
        """
        vel = self.velocity(state) if vel is None else vel
        phi = self.rock.porosity(state.p)
        storage = self.storage(phi)
        rho = self.fluid.density(state.T_f)
        _, fluid_rate = self.rhs_temperature(state, vel, t)
        result = self.mass_rate(state, vel) / (rho * storage) + phi * self.fluid.expansivity(state.T_f) / storage * fluid_rate
        result[self.__pressure_well] = 0.0
        return result

    def heat_content(self, state: StateFields) -> float:
        """
        Total heat content sum |cell| ((1 - phi) rho_s c_ps T_s + phi rho_f c_pf T_f) in J.
        """
        c_rock, c_fluid = self.heat_capacities(state)
        return float(self.grid.cell_volume * np.sum(c_rock * state.T_s + c_fluid * state.T_f))

    def heat_rate(self, state: StateFields, vel: Optional[VelocityField] = None) -> float:
        """
        Time derivative of the heat content implied by the right-hand sides, at frozen heat capacities (W).
        """
        c_rock, c_fluid = self.heat_capacities(state)
        rock, fluid = self.rhs_temperature(state, vel)
        return float(self.grid.cell_volume * np.sum(c_rock * rock + c_fluid * fluid))

    def temperature_system(self, state: StateFields, vel: Optional[VelocityField] = None) -> 'TemperatureSystem':
        return TemperatureSystem(self, state.p, self.velocity(state) if vel is None else vel)

    def pressure_system(self, state: StateFields) -> 'PressureSystem':
        return PressureSystem(self, state.T_s, state.T_f)


class TemperatureSystem(OdeSystem):
    """
    The (T_s, T_f) system with pressure and Darcy fluxes frozen.
    """
    autonomous = True

    def __init__(self, model: ReservoirModel, p: np.ndarray, vel: VelocityField) -> None:
        self.model = model
        self.p = p
        self.vel = vel

    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        n = self.model.cell_count
        rock, fluid = self.model.rhs_temperature(StateFields(y[:n], y[n:], self.p), self.vel, t)
        return np.concatenate([rock, fluid])

    def jacobian(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> csr_matrix:
        return jacobian(self.rhs, y, t, self.model.temperature_pattern, self.model.temperature_colors, f0)


class PressureSystem(OdeSystem):
    """
    The pressure system with both temperatures frozen; Darcy fluxes follow the pressure.
    """
    autonomous = True

    def __init__(self, model: ReservoirModel, T_s: np.ndarray, T_f: np.ndarray) -> None:
        self.model = model
        self.T_s = T_s
        self.T_f = T_f

    def rhs(self, y: np.ndarray, t: float) -> np.ndarray:
        return self.model.rhs_pressure(StateFields(self.T_s, self.T_f, y), t)

    def jacobian(self, y: np.ndarray, t: float, f0: Optional[np.ndarray] = None) -> csr_matrix:
        return jacobian(self.rhs, y, t, self.model.pressure_pattern, self.model.pressure_colors, f0)
