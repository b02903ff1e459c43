from typing import Optional, Union

import numpy as np

from .exceptions import PhysicalDomainError, StructuralError

Scalar = Union[float, np.ndarray]

DARCY_TO_M2 = 9.869233e-13

_DENSITY_RANGE_C = (0.0, 300.0)
_HEAT_CAPACITY_RANGE_C = (0.0, 100.0)
_VISCOSITY_RANGE_C = (0.0, 300.0)

_DENSITY_VERTEX_C = 3.9863
_DENSITY_SCALE = 508929.2
_DENSITY_NUMERATOR_SHIFT = 288.9414
_DENSITY_DENOMINATOR_SHIFT = 68.12963


class ClampCounter:
    """
    Counts evaluations whose temperature was clamped into the validity range of a correlation.
    """
    count: int

    def __init__(self) -> None:
        self.count = 0

    def clamp(self, temperature: Scalar, low: float, high: float) -> np.ndarray:
        temperature = np.asarray(temperature, dtype=float)
        outside = (temperature < low) | (temperature > high)
        self.count += int(np.count_nonzero(outside))
        return np.clip(temperature, low, high)


def _clamped(temperature: Scalar, low: float, high: float, clamps: Optional[ClampCounter]) -> np.ndarray:
    if clamps is None:
        return np.clip(np.asarray(temperature, dtype=float), low, high)
    return clamps.clamp(temperature, low, high)


def water_density(temperature_c: Scalar, clamps: Optional[ClampCounter] = None) -> Scalar:
    """
    Water density in kg/m^3; temperatures outside [0, 300] C are clamped.
    """
    t = _clamped(temperature_c, *_DENSITY_RANGE_C, clamps)
    ratio = (t + _DENSITY_NUMERATOR_SHIFT) / (t + _DENSITY_DENOMINATOR_SHIFT)
    return 1000.0 * (1.0 - (t - _DENSITY_VERTEX_C) ** 2 / _DENSITY_SCALE * ratio)


def water_density_derivative(temperature_c: Scalar, clamps: Optional[ClampCounter] = None) -> Scalar:
    """
    d(rho)/dT of `water_density`, in closed form.
    """
    t = _clamped(temperature_c, *_DENSITY_RANGE_C, clamps)
    shifted = t + _DENSITY_DENOMINATOR_SHIFT
    ratio = (t + _DENSITY_NUMERATOR_SHIFT) / shifted
    ratio_derivative = (_DENSITY_DENOMINATOR_SHIFT - _DENSITY_NUMERATOR_SHIFT) / shifted ** 2
    square = (t - _DENSITY_VERTEX_C) ** 2
    return -1000.0 / _DENSITY_SCALE * (2.0 * (t - _DENSITY_VERTEX_C) * ratio + square * ratio_derivative)


def water_viscosity(temperature_c: Scalar) -> Scalar:
    """
    Water viscosity in kg/(m s), three branches joined at 40 C and 100 C. The branches do not meet exactly: the jump is below 1%.
    """
    t = np.asarray(temperature_c, dtype=float)
    if np.any(t < _VISCOSITY_RANGE_C[0]) or np.any(t > _VISCOSITY_RANGE_C[1]):
        bad = t[(t < _VISCOSITY_RANGE_C[0]) | (t > _VISCOSITY_RANGE_C[1])].ravel()[0]
        raise PhysicalDomainError(f"Viscosity correlation is defined on [0, 300] C, got {bad} C")
    cold = 1.787e-3 * np.exp((-0.03288 + 1.962e-4 * t) * t)
    warm = 1e-3 * (1.0 + 0.015512 * (np.minimum(t, 100.0) - 20.0)) ** -1.572
    hot = 0.2414 * 10.0 ** (247.8 / (t + 133.15)) * 1e-4
    return np.where(t <= 40.0, cold, np.where(t <= 100.0, warm, hot))


def water_heat_capacity(temperature_c: Scalar, clamps: Optional[ClampCounter] = None) -> Scalar:
    """
    Water heat capacity in J/(kg C); the cubic is valid on (0, 100) C and clamped outside.
    """
    t = _clamped(temperature_c, *_HEAT_CAPACITY_RANGE_C, clamps)
    return ((-1.3320081e-4 * t + 0.0328405) * t - 1.9254125) * t + 4206.3640128


def expansivity(temperature_c: Scalar, clamps: Optional[ClampCounter] = None) -> Scalar:
    """
    Thermal expansivity -(1/rho) d(rho)/dT in 1/C.
    """
    return -water_density_derivative(temperature_c, clamps) / water_density(temperature_c)


def porosity(phi0: Scalar, p: Scalar, p0: float, alpha_b: Scalar) -> Scalar:
    """
    phi = phi0 (1 + alpha_b (p - p0)).

    :raises PhysicalDomainError: naming the first cell whose porosity leaves (0, 1)
    """
    phi0 = np.asarray(phi0, dtype=float)
    if np.any(phi0 <= 0) or np.any(phi0 >= 1):
        raise PhysicalDomainError(f"Reference porosity must lie in (0, 1), got {phi0[(phi0 <= 0) | (phi0 >= 1)].ravel()[0]}")
    result = phi0 * (1.0 + np.asarray(alpha_b, dtype=float) * (np.asarray(p, dtype=float) - p0))
    invalid = np.flatnonzero((result <= 0) | (result >= 1))
    if len(invalid) > 0:
        cell = int(invalid[0])
        raise PhysicalDomainError(f"Porosity {np.ravel(result)[cell]} of cell {cell} left (0, 1)")
    return result if result.ndim else float(result)


class FluidModel:
    """
    Water properties. Constant overrides replace the temperature correlations (a constant density has zero expansivity).
    """
    conductivity: float
    compressibility: float
    density_override: Optional[float]
    viscosity_override: Optional[float]
    heat_capacity_override: Optional[float]
    clamps: ClampCounter

    def __init__(
            self, conductivity_w_per_m_k: float = 0.6, compressibility_per_pa: float = 4.5e-10, density_kg_per_m3: Optional[float] = None,
            viscosity_pa_s: Optional[float] = None, heat_capacity_j_per_kg_k: Optional[float] = None,
    ) -> None:
        if conductivity_w_per_m_k < 0 or compressibility_per_pa < 0:
            raise PhysicalDomainError(f"Fluid conductivity and compressibility must be non-negative, got {conductivity_w_per_m_k} and {compressibility_per_pa}")
        for name, value in (("density", density_kg_per_m3), ("viscosity", viscosity_pa_s), ("heat capacity", heat_capacity_j_per_kg_k)):
            if value is not None and value <= 0:
                raise PhysicalDomainError(f"Fluid {name} override must be positive, got {value}")
        self.conductivity = conductivity_w_per_m_k
        self.compressibility = compressibility_per_pa
        self.density_override = density_kg_per_m3
        self.viscosity_override = viscosity_pa_s
        self.heat_capacity_override = heat_capacity_j_per_kg_k
        self.clamps = ClampCounter()

    def copy(self) -> 'FluidModel':
        """
        Same parameters, fresh clamp counter.
        """
        return FluidModel(self.conductivity, self.compressibility, self.density_override, self.viscosity_override, self.heat_capacity_override)

    def density(self, temperature_c: np.ndarray) -> np.ndarray:
        if self.density_override is not None:
            return np.full(np.shape(temperature_c), self.density_override)
        return water_density(temperature_c, self.clamps)

    def viscosity(self, temperature_c: np.ndarray) -> np.ndarray:
        if self.viscosity_override is not None:
            return np.full(np.shape(temperature_c), self.viscosity_override)
        return water_viscosity(temperature_c)

    def heat_capacity(self, temperature_c: np.ndarray) -> np.ndarray:
        if self.heat_capacity_override is not None:
            return np.full(np.shape(temperature_c), self.heat_capacity_override)
        return water_heat_capacity(temperature_c, self.clamps)

    def expansivity(self, temperature_c: np.ndarray) -> np.ndarray:
        if self.density_override is not None:
            return np.zeros(np.shape(temperature_c))
        return expansivity(temperature_c, self.clamps)


class RockProps:
    """
    Per-cell rock properties in SI units (permeability in m^2, one value per axis).
    """
    permeability: np.ndarray
    porosity0: np.ndarray
    density: np.ndarray
    heat_capacity: np.ndarray
    conductivity: np.ndarray
    alpha_b: np.ndarray
    reference_pressure: float
    heat_production_rock: np.ndarray
    heat_production_fluid: np.ndarray

    def __init__(
            self, permeability_m2: np.ndarray, porosity0: np.ndarray, density: np.ndarray, heat_capacity: np.ndarray, conductivity: np.ndarray,
            alpha_b: np.ndarray, reference_pressure: float, heat_production_rock: Optional[np.ndarray] = None, heat_production_fluid: Optional[np.ndarray] = None,
    ) -> None:
        porosity0 = np.asarray(porosity0, dtype=float)
        n = porosity0.shape[0]
        permeability_m2 = np.asarray(permeability_m2, dtype=float)
        if permeability_m2.ndim == 1:
            permeability_m2 = np.repeat(permeability_m2[:, None], 3, axis=1)
        if permeability_m2.shape != (n, 3):
            raise StructuralError(f"Permeability must have shape ({n}, 3), got {permeability_m2.shape}")
        if np.any(permeability_m2 < 0):
            raise PhysicalDomainError("Permeability must be non-negative")
        if np.any(porosity0 <= 0) or np.any(porosity0 >= 1):
            raise PhysicalDomainError("Reference porosity must lie in (0, 1)")
        alpha_b = np.broadcast_to(np.asarray(alpha_b, dtype=float), (n,)).copy()
        if np.any(alpha_b < 0):
            raise PhysicalDomainError("Bulk compressibility must be non-negative")
        self.permeability = permeability_m2
        self.porosity0 = porosity0
        self.density = np.broadcast_to(np.asarray(density, dtype=float), (n,)).copy()
        self.heat_capacity = np.broadcast_to(np.asarray(heat_capacity, dtype=float), (n,)).copy()
        self.conductivity = np.broadcast_to(np.asarray(conductivity, dtype=float), (n,)).copy()
        self.alpha_b = alpha_b
        self.reference_pressure = float(reference_pressure)
        self.heat_production_rock = np.zeros(n) if heat_production_rock is None else np.broadcast_to(np.asarray(heat_production_rock, dtype=float), (n,)).copy()
        self.heat_production_fluid = np.zeros(n) if heat_production_fluid is None else np.broadcast_to(np.asarray(heat_production_fluid, dtype=float), (n,)).copy()

    @property
    def cell_count(self) -> int:
        return self.porosity0.shape[0]

    def porosity(self, p: np.ndarray) -> np.ndarray:
        return porosity(self.porosity0, p, self.reference_pressure, self.alpha_b)
