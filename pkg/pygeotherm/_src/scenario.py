import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import yaml
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .enums import InitialPressureMode, Splitting, WellKind
from .exceptions import ConfigurationError, PhysicalDomainError
from .fluid import DARCY_TO_M2, FluidModel, RockProps
from .grid import SIDES, BoundaryConditions, StateFields, StructuredGrid, WellSpec, transmissibilities
from .logger import _logger
from .model import ReservoirModel
from .tableaus import SchemeId

SECONDS_PER_DAY = 86400.0
_FULL_SCALE_CELLS = 50 * 50 * 50
_STEADY_SWEEPS = 10
# YAML 1.1 resolves "1.0e7" (unsigned exponent) to a string
_FLOAT_PATTERN = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


def _check_keys(section: Mapping[str, Any], allowed: Iterable[str], path: str) -> None:
    if not isinstance(section, Mapping):
        raise ConfigurationError(f"'{path}' must be a mapping, got {type(section).__name__}")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(f"Unknown key '{path}.{unknown[0]}'" if path else f"Unknown key '{unknown[0]}'")


def _number(section: Mapping[str, Any], key: str, path: str, default: Any = None, positive: bool = False) -> Any:
    value = section.get(key, default)
    if value is None:
        if default is None and key not in section:
            raise ConfigurationError(f"Missing key '{path}.{key}'")
        return None
    if isinstance(value, str) and _FLOAT_PATTERN.fullmatch(value.strip()):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"'{path}.{key}' must be a number, got {value!r}")
    if positive and not value > 0:
        raise ConfigurationError(f"'{path}.{key}' must be positive, got {value}")
    return float(value)


def parse_duration(text: Union[str, float]) -> float:
    """
    Seconds from a number of seconds or a string with an `s`, `h` or `d` suffix.
    """
    if isinstance(text, (int, float)):
        return float(text)
    units = {'s': 1.0, 'h': 3600.0, 'd': SECONDS_PER_DAY}
    text = text.strip().lower()
    scale = units.get(text[-1:]) if text else None
    try:
        return float(text[:-1]) * scale if scale is not None else float(text)
    except ValueError:
        raise ConfigurationError(f"Invalid duration '{text}'") from None


class GridSpec:
    _KEYS = ("nx", "ny", "nz", "length_x_m", "length_y_m", "length_z_m")

    def __init__(self, nx: int, ny: int, nz: int, length_x_m: float, length_y_m: float, length_z_m: float) -> None:
        for name, count in (("nx", nx), ("ny", ny), ("nz", nz)):
            if not isinstance(count, int) or isinstance(count, bool) or count < 1:
                raise ConfigurationError(f"'grid.{name}' must be a positive integer, got {count!r}")
        self.nx, self.ny, self.nz = nx, ny, nz
        self.length_x_m, self.length_y_m, self.length_z_m = length_x_m, length_y_m, length_z_m

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'GridSpec':
        _check_keys(data, GridSpec._KEYS, "grid")
        return GridSpec(
            data.get("nx"), data.get("ny"), data.get("nz"),
            *(_number(data, key, "grid", positive=True) for key in GridSpec._KEYS[3:]),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self._KEYS}

    def build(self) -> StructuredGrid:
        return StructuredGrid(self.nx, self.ny, self.nz, self.length_x_m / self.nx, self.length_y_m / self.ny, self.length_z_m / self.nz)


class RockRegion:
    """
    Rock properties of the cells whose centers lie in [z_min_m, z_max_m).
    """
    _KEYS = (
        "name", "z_min_m", "z_max_m", "permeability_darcy", "porosity", "density_kg_per_m3", "heat_capacity_j_per_kg_k", "conductivity_w_per_m_k",
        "bulk_compressibility_per_pa", "heat_production_rock_w_per_m3", "heat_production_fluid_w_per_m3",
    )

    def __init__(
            self, name: str, z_min_m: float, z_max_m: float, permeability_darcy: Union[float, Sequence[float]], porosity: float, density_kg_per_m3: float,
            heat_capacity_j_per_kg_k: float, conductivity_w_per_m_k: float, bulk_compressibility_per_pa: float = 0.0,
            heat_production_rock_w_per_m3: float = 0.0, heat_production_fluid_w_per_m3: float = 0.0,
    ) -> None:
        if z_max_m <= z_min_m:
            raise ConfigurationError(f"Region '{name}' has an empty depth range [{z_min_m}, {z_max_m})")
        if not 0 < porosity < 1:
            raise ConfigurationError(f"Region '{name}' porosity must lie in (0, 1), got {porosity}")
        permeability = np.broadcast_to(np.asarray(permeability_darcy, dtype=float), (3,))
        if np.any(permeability <= 0):
            raise ConfigurationError(f"Region '{name}' permeability must be positive, got {permeability_darcy}")
        self.name = name
        self.z_min_m, self.z_max_m = z_min_m, z_max_m
        self.permeability_darcy = permeability_darcy
        self.porosity = porosity
        self.density_kg_per_m3 = density_kg_per_m3
        self.heat_capacity_j_per_kg_k = heat_capacity_j_per_kg_k
        self.conductivity_w_per_m_k = conductivity_w_per_m_k
        self.bulk_compressibility_per_pa = bulk_compressibility_per_pa
        self.heat_production_rock_w_per_m3 = heat_production_rock_w_per_m3
        self.heat_production_fluid_w_per_m3 = heat_production_fluid_w_per_m3

    @staticmethod
    def from_dict(data: Mapping[str, Any], index: int) -> 'RockRegion':
        path = f"rock_regions[{index}]"
        _check_keys(data, RockRegion._KEYS, path)
        permeability = data.get("permeability_darcy")
        if isinstance(permeability, list):
            if len(permeability) != 3 or not all(isinstance(k, (int, float)) for k in permeability):
                raise ConfigurationError(f"'{path}.permeability_darcy' must be a number or three numbers")
            permeability = [float(k) for k in permeability]
        else:
            permeability = _number(data, "permeability_darcy", path, positive=True)
        return RockRegion(
            str(data.get("name", f"region{index}")), _number(data, "z_min_m", path), _number(data, "z_max_m", path), permeability,
            _number(data, "porosity", path), _number(data, "density_kg_per_m3", path, positive=True),
            _number(data, "heat_capacity_j_per_kg_k", path, positive=True), _number(data, "conductivity_w_per_m_k", path, positive=True),
            _number(data, "bulk_compressibility_per_pa", path, 0.0), _number(data, "heat_production_rock_w_per_m3", path, 0.0),
            _number(data, "heat_production_fluid_w_per_m3", path, 0.0),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self._KEYS}

    def contains(self, z: np.ndarray) -> np.ndarray:
        return (z >= self.z_min_m) & (z < self.z_max_m)


class FluidSpec:
    _KEYS = ("conductivity_w_per_m_k", "compressibility_per_pa", "density_kg_per_m3", "viscosity_pa_s", "heat_capacity_j_per_kg_k")

    def __init__(
            self, conductivity_w_per_m_k: float = 0.6, compressibility_per_pa: float = 4.5e-10, density_kg_per_m3: Optional[float] = None,
            viscosity_pa_s: Optional[float] = None, heat_capacity_j_per_kg_k: Optional[float] = None,
    ) -> None:
        self.conductivity_w_per_m_k = conductivity_w_per_m_k
        self.compressibility_per_pa = compressibility_per_pa
        self.density_kg_per_m3 = density_kg_per_m3
        self.viscosity_pa_s = viscosity_pa_s
        self.heat_capacity_j_per_kg_k = heat_capacity_j_per_kg_k

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'FluidSpec':
        _check_keys(data, FluidSpec._KEYS, "fluid")
        return FluidSpec(
            _number(data, "conductivity_w_per_m_k", "fluid", 0.6), _number(data, "compressibility_per_pa", "fluid", 4.5e-10),
            *(_number(data, key, "fluid", None) if key in data else None for key in FluidSpec._KEYS[2:]),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self._KEYS}

    def build(self) -> FluidModel:
        try:
            return FluidModel(*(getattr(self, key) for key in self._KEYS))
        except PhysicalDomainError as e:
            raise ConfigurationError(f"Invalid fluid section: {e}") from e


class WellConfig:
    """
    A vertical well through the cells of the column containing (x_m, y_m), optionally limited to [z_min_m, z_max_m].
    """
    _KEYS = ("name", "kind", "x_m", "y_m", "z_min_m", "z_max_m", "rate_m3_per_s", "bottom_pressure_pa", "injection_temperature_c")

    def __init__(
            self, name: str, kind: WellKind, x_m: float, y_m: float, rate_m3_per_s: float = 0.0, bottom_pressure_pa: Optional[float] = None,
            injection_temperature_c: Optional[float] = None, z_min_m: Optional[float] = None, z_max_m: Optional[float] = None,
    ) -> None:
        self.name = name
        self.kind = kind
        self.x_m, self.y_m = x_m, y_m
        self.z_min_m, self.z_max_m = z_min_m, z_max_m
        self.rate_m3_per_s = rate_m3_per_s
        self.bottom_pressure_pa = bottom_pressure_pa
        self.injection_temperature_c = injection_temperature_c

    @staticmethod
    def from_dict(data: Mapping[str, Any], index: int) -> 'WellConfig':
        path = f"wells[{index}]"
        _check_keys(data, WellConfig._KEYS, path)
        try:
            kind = WellKind(data.get("kind", WellKind.RATE.value))
        except ValueError:
            raise ConfigurationError(f"'{path}.kind' must be 'rate' or 'pressure', got {data.get('kind')!r}") from None
        optional = {key: _number(data, key, path, None) if key in data else None for key in ("bottom_pressure_pa", "injection_temperature_c", "z_min_m", "z_max_m")}
        return WellConfig(
            str(data.get("name", f"well{index}")), kind, _number(data, "x_m", path), _number(data, "y_m", path), _number(data, "rate_m3_per_s", path, 0.0),
            **optional,
        )

    def to_dict(self) -> Dict[str, Any]:
        result = {key: getattr(self, key) for key in self._KEYS}
        result["kind"] = self.kind.value
        return result

    def resolve(self, grid: StructuredGrid) -> WellSpec:
        cells = grid.column_at(self.x_m, self.y_m)
        z = grid.centers[cells, 2]
        low = -np.inf if self.z_min_m is None else self.z_min_m
        high = np.inf if self.z_max_m is None else self.z_max_m
        cells = cells[(z >= low) & (z <= high)]
        if len(cells) == 0:
            raise ConfigurationError(f"Well '{self.name}' does not intersect any cell")
        return WellSpec(self.name, self.kind, cells, self.rate_m3_per_s, self.bottom_pressure_pa, self.injection_temperature_c)


def _boundaries_from_dict(data: Mapping[str, Any]) -> BoundaryConditions:
    _check_keys(data, ("temperature_c", "pressure_pa"), "boundaries")
    values = {}
    for key in ("temperature_c", "pressure_pa"):
        section = data.get(key) or {}
        _check_keys(section, SIDES, f"boundaries.{key}")
        values[key] = {side: _number(section, side, f"boundaries.{key}") for side in section}
    return BoundaryConditions(values["temperature_c"], values["pressure_pa"])


def _boundaries_to_dict(boundaries: BoundaryConditions) -> Dict[str, Any]:
    return {"temperature_c": dict(boundaries.temperature), "pressure_pa": dict(boundaries.pressure)}


class InitialSpec:
    """
    Initial temperature top_c + gradient*z (both phases in equilibrium), optionally with a smooth bump
    amplitude*sin(pi x/Lx) sin(pi y/Ly), and the initial pressure mode.
    """
    _KEYS = (
        "temperature_top_c", "temperature_gradient_c_per_m", "perturbation_amplitude_c", "pressure_mode", "reference_pressure_pa", "pin_point_m",
    )

    def __init__(
            self, temperature_top_c: float = 60.0, temperature_gradient_c_per_m: float = 0.3, perturbation_amplitude_c: float = 0.0,
            pressure_mode: InitialPressureMode = InitialPressureMode.STEADY, reference_pressure_pa: float = 1e7,
            pin_point_m: Optional[Sequence[float]] = (0.0, 0.0, 0.0),
    ) -> None:
        self.temperature_top_c = temperature_top_c
        self.temperature_gradient_c_per_m = temperature_gradient_c_per_m
        self.perturbation_amplitude_c = perturbation_amplitude_c
        self.pressure_mode = pressure_mode
        self.reference_pressure_pa = reference_pressure_pa
        self.pin_point_m = None if pin_point_m is None else [float(x) for x in pin_point_m]

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'InitialSpec':
        _check_keys(data, InitialSpec._KEYS, "initial")
        try:
            mode = InitialPressureMode(data.get("pressure_mode", InitialPressureMode.STEADY.value))
        except ValueError:
            raise ConfigurationError(f"'initial.pressure_mode' must be one of steady, hydrostatic, uniform, got {data.get('pressure_mode')!r}") from None
        pin = data.get("pin_point_m", [0.0, 0.0, 0.0])
        if pin is not None and (not isinstance(pin, list) or len(pin) != 3):
            raise ConfigurationError("'initial.pin_point_m' must be a list of three coordinates or null")
        return InitialSpec(
            _number(data, "temperature_top_c", "initial", 60.0), _number(data, "temperature_gradient_c_per_m", "initial", 0.3),
            _number(data, "perturbation_amplitude_c", "initial", 0.0), mode, _number(data, "reference_pressure_pa", "initial", 1e7, positive=True), pin,
        )

    def to_dict(self) -> Dict[str, Any]:
        result = {key: getattr(self, key) for key in self._KEYS}
        result["pressure_mode"] = self.pressure_mode.value
        return result


class RunSpec:
    _KEYS = ("final_time_days", "scheme", "splitting", "step_days", "adaptive", "min_step_s", "step_attempts")

    def __init__(
            self, final_time_days: float = 40.0, scheme: Union[str, SchemeId] = "erem-krylov", splitting: Splitting = Splitting.TROTTER,
            step_days: float = 5.0, adaptive: bool = False, min_step_s: float = 1.0, step_attempts: int = 8,
    ) -> None:
        if not final_time_days > 0:
            raise ConfigurationError(f"'run.final_time_days' must be positive, got {final_time_days}")
        if not step_days > 0:
            raise ConfigurationError(f"'run.step_days' must be positive, got {step_days}")
        self.final_time_days = final_time_days
        self.scheme = scheme if isinstance(scheme, SchemeId) else SchemeId.parse(scheme)
        self.splitting = splitting
        self.step_days = step_days
        self.adaptive = adaptive
        self.min_step_s = min_step_s
        self.step_attempts = step_attempts
        if adaptive and not self.scheme.has_embedded:
            raise ConfigurationError(f"Adaptive stepping needs an embedded solution; scheme {self.scheme.label} has none")

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'RunSpec':
        _check_keys(data, RunSpec._KEYS, "run")
        try:
            splitting = Splitting(data.get("splitting", Splitting.TROTTER.value))
        except ValueError:
            raise ConfigurationError(f"'run.splitting' must be 'trotter' or 'strang', got {data.get('splitting')!r}") from None
        attempts = data.get("step_attempts", 8)
        if not isinstance(attempts, int) or attempts < 1:
            raise ConfigurationError(f"'run.step_attempts' must be a positive integer, got {attempts!r}")
        return RunSpec(
            _number(data, "final_time_days", "run", 40.0), str(data.get("scheme", "erem-krylov")), splitting, _number(data, "step_days", "run", 5.0),
            bool(data.get("adaptive", False)), _number(data, "min_step_s", "run", 1.0, positive=True), attempts,
        )

    def to_dict(self) -> Dict[str, Any]:
        result = {key: getattr(self, key) for key in self._KEYS}
        result["scheme"] = self.scheme.label
        result["splitting"] = self.splitting.value
        return result

    @property
    def final_time_s(self) -> float:
        return self.final_time_days * SECONDS_PER_DAY

    @property
    def step_s(self) -> float:
        return self.step_days * SECONDS_PER_DAY


class ToleranceSpec:
    _KEYS = (
        "absolute", "relative", "krylov_dimension", "leja_max_degree", "newton_max_iterations", "linear_tolerance", "linear_max_iterations",
        "jacobian_free",
    )

    def __init__(
            self, absolute: float = 1e-6, relative: float = 1e-6, krylov_dimension: int = 10, leja_max_degree: int = 120, newton_max_iterations: int = 25,
            linear_tolerance: float = 1e-10, linear_max_iterations: int = 500, jacobian_free: bool = False,
    ) -> None:
        self.absolute = absolute
        self.relative = relative
        self.krylov_dimension = krylov_dimension
        self.leja_max_degree = leja_max_degree
        self.newton_max_iterations = newton_max_iterations
        self.linear_tolerance = linear_tolerance
        self.linear_max_iterations = linear_max_iterations
        self.jacobian_free = jacobian_free

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'ToleranceSpec':
        _check_keys(data, ToleranceSpec._KEYS, "tolerances")
        integers = {}
        for key, default in (("krylov_dimension", 10), ("leja_max_degree", 120), ("newton_max_iterations", 25), ("linear_max_iterations", 500)):
            value = data.get(key, default)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"'tolerances.{key}' must be a positive integer, got {value!r}")
            integers[key] = value
        return ToleranceSpec(
            _number(data, "absolute", "tolerances", 1e-6, positive=True), _number(data, "relative", "tolerances", 1e-6, positive=True),
            linear_tolerance=_number(data, "linear_tolerance", "tolerances", 1e-10, positive=True), jacobian_free=bool(data.get("jacobian_free", False)),
            **integers,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self._KEYS}


class ScenarioConfig:
    """
    Everything needed for one experiment. Depth z is measured along the third axis; the gravity vector decides which way is down.
    """
    _KEYS = ("name", "grid", "rock_regions", "fluid", "wells", "boundaries", "heat_transfer_w_per_m3_k", "gravity_m_per_s2", "initial", "run", "tolerances")

    def __init__(
            self, name: str, grid: GridSpec, rock_regions: List[RockRegion], fluid: Optional[FluidSpec] = None, wells: Sequence[WellConfig] = (),
            boundaries: Optional[BoundaryConditions] = None, heat_transfer_w_per_m3_k: float = 1e4, gravity_m_per_s2: Sequence[float] = (0.0, 0.0, -9.81),
            initial: Optional[InitialSpec] = None, run: Optional[RunSpec] = None, tolerances: Optional[ToleranceSpec] = None,
    ) -> None:
        if not rock_regions:
            raise ConfigurationError("At least one rock region is required")
        if len(gravity_m_per_s2) != 3:
            raise ConfigurationError(f"'gravity_m_per_s2' must have three components, got {list(gravity_m_per_s2)}")
        self.name = name
        self.grid = grid
        self.rock_regions = list(rock_regions)
        self.fluid = FluidSpec() if fluid is None else fluid
        self.wells = list(wells)
        self.boundaries = BoundaryConditions() if boundaries is None else boundaries
        self.heat_transfer_w_per_m3_k = heat_transfer_w_per_m3_k
        self.gravity_m_per_s2 = [float(g) for g in gravity_m_per_s2]
        self.initial = InitialSpec() if initial is None else initial
        self.run = RunSpec() if run is None else run
        self.tolerances = ToleranceSpec() if tolerances is None else tolerances

    def __repr__(self) -> str:
        return f"ScenarioConfig('{self.name}', {self.grid.nx}x{self.grid.ny}x{self.grid.nz})"

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'ScenarioConfig':
        _check_keys(data, ScenarioConfig._KEYS, "")
        for key in ("grid", "rock_regions"):
            if key not in data:
                raise ConfigurationError(f"Missing key '{key}'")
        regions = data["rock_regions"]
        if not isinstance(regions, list):
            raise ConfigurationError("'rock_regions' must be a list")
        wells = data.get("wells") or []
        if not isinstance(wells, list):
            raise ConfigurationError("'wells' must be a list")
        gravity = data.get("gravity_m_per_s2", [0.0, 0.0, -9.81])
        if not isinstance(gravity, list) or not all(isinstance(g, (int, float)) for g in gravity):
            raise ConfigurationError("'gravity_m_per_s2' must be a list of numbers")
        return ScenarioConfig(
            str(data.get("name", "scenario")), GridSpec.from_dict(data["grid"]), [RockRegion.from_dict(r, i) for i, r in enumerate(regions)],
            FluidSpec.from_dict(data.get("fluid") or {}), [WellConfig.from_dict(w, i) for i, w in enumerate(wells)],
            _boundaries_from_dict(data.get("boundaries") or {}), _number(data, "heat_transfer_w_per_m3_k", "", 1e4), gravity,
            InitialSpec.from_dict(data.get("initial") or {}), RunSpec.from_dict(data.get("run") or {}), ToleranceSpec.from_dict(data.get("tolerances") or {}),
        )

    @staticmethod
    def load(path: Union[str, Path]) -> 'ScenarioConfig':
        """
        :raises ConfigurationError: for unreadable files, YAML syntax errors and schema violations
        """
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f)
        except OSError as e:
            raise ConfigurationError(f"Cannot read scenario file '{path}': {e.strerror}") from e
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Invalid YAML in '{path}': {e}") from e
        if data is None:
            raise ConfigurationError(f"Scenario file '{path}' is empty")
        return ScenarioConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        """
        The fully-resolved document, defaults included.
        """
        return {
            "name": self.name,
            "grid": self.grid.to_dict(),
            "rock_regions": [region.to_dict() for region in self.rock_regions],
            "fluid": self.fluid.to_dict(),
            "wells": [well.to_dict() for well in self.wells],
            "boundaries": _boundaries_to_dict(self.boundaries),
            "heat_transfer_w_per_m3_k": self.heat_transfer_w_per_m3_k,
            "gravity_m_per_s2": list(self.gravity_m_per_s2),
            "initial": self.initial.to_dict(),
            "run": self.run.to_dict(),
            "tolerances": self.tolerances.to_dict(),
        }

    def echo(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def build_rock(self, grid: StructuredGrid) -> RockProps:
        z = grid.centers[:, 2]
        owner = np.full(grid.cell_count, -1)
        for index, region in enumerate(self.rock_regions):
            inside = region.contains(z)
            overlap = np.flatnonzero(inside & (owner >= 0))
            if len(overlap) > 0:
                raise ConfigurationError(f"Rock regions '{self.rock_regions[owner[overlap[0]]].name}' and '{region.name}' overlap at cell {overlap[0]}")
            owner[inside] = index
        uncovered = np.flatnonzero(owner < 0)
        if len(uncovered) > 0:
            raise ConfigurationError(f"Cell {uncovered[0]} at depth {z[uncovered[0]]:g} m is not covered by any rock region")

        def field(attribute: str) -> np.ndarray:
            return np.array([getattr(region, attribute) for region in self.rock_regions], dtype=float)[owner]

        permeability = np.array([np.broadcast_to(np.asarray(r.permeability_darcy, dtype=float), (3,)) for r in self.rock_regions])[owner] * DARCY_TO_M2
        return RockProps(
            permeability, field("porosity"), field("density_kg_per_m3"), field("heat_capacity_j_per_kg_k"), field("conductivity_w_per_m_k"),
            field("bulk_compressibility_per_pa"), self.initial.reference_pressure_pa, field("heat_production_rock_w_per_m3"),
            field("heat_production_fluid_w_per_m3"),
        )

    def build_model(self) -> ReservoirModel:
        grid = self.grid.build()
        wells = [well.resolve(grid) for well in self.wells]
        try:
            return ReservoirModel(
                grid, self.build_rock(grid), self.fluid.build(), wells, self.boundaries, self.heat_transfer_w_per_m3_k, self.gravity_m_per_s2,
            )
        except PhysicalDomainError as e:
            raise ConfigurationError(f"Scenario '{self.name}' is not physically valid: {e}") from e

    def initial_temperature(self, grid: StructuredGrid) -> np.ndarray:
        initial = self.initial
        x, y, z = grid.centers.T
        temperature = initial.temperature_top_c + initial.temperature_gradient_c_per_m * z
        if initial.perturbation_amplitude_c:
            temperature = temperature + initial.perturbation_amplitude_c * np.sin(np.pi * x / self.grid.length_x_m) * np.sin(np.pi * y / self.grid.length_y_m)
        return temperature

    def initial_state(self, model: Optional[ReservoirModel] = None) -> StateFields:
        model = self.build_model() if model is None else model
        temperature = self.initial_temperature(model.grid)
        return StateFields(temperature, temperature, initial_pressure(self, model, temperature))


def _pin_cell(scenario: ScenarioConfig, model: ReservoirModel) -> Optional[int]:
    pin = scenario.initial.pin_point_m
    return None if pin is None else model.grid.cell_at(*pin)


def _hydrostatic(model: ReservoirModel, rho: np.ndarray, reference_pressure: float, pin: Optional[int]) -> np.ndarray:
    """
    Zero vertical flux between stacked cells: p_above - p_below + rho_face g.(x_below - x_above) = 0.
    """
    grid = model.grid
    layer = grid.nx * grid.ny
    p = np.full(grid.cell_count, reference_pressure)
    for k in range(1, grid.nz):
        upper = np.arange((k - 1) * layer, k * layer)
        lower = upper + layer
        rho_face = 0.5 * (rho[upper] + rho[lower])
        p[lower] = p[upper] + rho_face * ((grid.centers[lower] - grid.centers[upper]) @ model.gravity)
    if pin is not None:
        p += reference_pressure - p[pin]
    return p


def _steady_pressure(model: ReservoirModel, temperature: np.ndarray, reference_pressure: float, pin: Optional[int], guess: np.ndarray) -> np.ndarray:
    grid = model.grid
    fluid = model.fluid
    rho, mu = fluid.density(temperature), fluid.viscosity(temperature)
    trans = transmissibilities(grid, model.rock.permeability)
    gravity_term = 0.5 * (rho[grid.owner] + rho[grid.neighbor]) * ((grid.centers[grid.neighbor] - grid.centers[grid.owner]) @ model.gravity)
    n = grid.cell_count
    pressure_mask, pressure_values = model.boundaries.pressure_faces(grid)
    fixed_cells = model.pressure_well_cells
    well_mass = np.zeros(n)
    for well in model.wells:
        if well.kind is WellKind.RATE:
            injected = temperature[well.cells] if well.injection_temperature is None or well.rate < 0 else np.full(len(well.cells), well.injection_temperature)
            np.add.at(well_mass, well.cells, fluid.density(injected) * well.rate / len(well.cells))
    if len(fixed_cells) == 0 and not np.any(pressure_mask):
        if pin is None:
            raise ConfigurationError("Steady pressure is undetermined: no pressure well, pressure boundary or pin point")
        fixed_cells = np.array([pin])
    fixed_values = np.full(n, reference_pressure)
    for well in model.wells:
        if well.kind is WellKind.PRESSURE:
            fixed_values[well.cells] = well.bottom_pressure

    p = guess.copy()
    for sweep in range(_STEADY_SWEEPS):
        potential = p[grid.owner] - p[grid.neighbor] + gravity_term
        upstream = np.where(potential >= 0, grid.owner, grid.neighbor)
        conductance = rho[upstream] * trans.interior / mu[upstream]
        rows = np.concatenate([grid.owner, grid.owner, grid.neighbor, grid.neighbor])
        columns = np.concatenate([grid.owner, grid.neighbor, grid.neighbor, grid.owner])
        values = np.concatenate([conductance, -conductance, conductance, -conductance])
        b = well_mass.copy()
        np.add.at(b, grid.owner, -conductance * gravity_term)
        np.add.at(b, grid.neighbor, conductance * gravity_term)
        if np.any(pressure_mask):
            cells = grid.boundary_cell[pressure_mask]
            boundary_conductance = rho[cells] * trans.boundary[pressure_mask] / mu[cells]
            separation = grid.boundary_centers[pressure_mask] - grid.centers[cells]
            rows = np.concatenate([rows, cells])
            columns = np.concatenate([columns, cells])
            values = np.concatenate([values, boundary_conductance])
            np.add.at(b, cells, boundary_conductance * (pressure_values[pressure_mask] - rho[cells] * (separation @ model.gravity)))
        keep = ~np.isin(rows, fixed_cells)
        rows = np.concatenate([rows[keep], fixed_cells])
        columns = np.concatenate([columns[keep], fixed_cells])
        values = np.concatenate([values[keep], np.ones(len(fixed_cells))])
        b[fixed_cells] = fixed_values[fixed_cells]
        matrix = coo_matrix((values, (rows, columns)), shape=(n, n)).tocsc()
        updated = spsolve(matrix, b)
        if not np.all(np.isfinite(updated)):
            raise ConfigurationError("Steady pressure system is singular")
        new_upstream = np.where(updated[grid.owner] - updated[grid.neighbor] + gravity_term >= 0, grid.owner, grid.neighbor)
        p = updated
        if np.array_equal(new_upstream, upstream):
            _logger.debug(f"Steady pressure: upstream directions settled after {sweep + 1} sweeps")
            break
    return p


def initial_pressure(scenario: ScenarioConfig, model: Optional[ReservoirModel] = None, temperature: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Initial pressure by the configured mode. The steady mode solves the discrete steady mass balance with fluid properties at
    the initial temperature; upstream directions are re-evaluated until they settle.

    :raises ConfigurationError: if the steady system has no pressure reference
    """
    model = scenario.build_model() if model is None else model
    temperature = scenario.initial_temperature(model.grid) if temperature is None else temperature
    reference = scenario.initial.reference_pressure_pa
    mode = scenario.initial.pressure_mode
    if mode is InitialPressureMode.UNIFORM:
        return np.full(model.cell_count, reference)
    pin = _pin_cell(scenario, model)
    hydrostatic = _hydrostatic(model, model.fluid.density(temperature), reference, pin)
    if mode is InitialPressureMode.HYDROSTATIC:
        return hydrostatic
    return _steady_pressure(model, temperature, reference, pin, hydrostatic)


def two_layer_scenario(
        nx: int = 50, ny: int = 50, nz: int = 50, final_time_days: float = 40.0, step_days: float = 5.0, scheme: str = "erem-krylov",
) -> ScenarioConfig:
    """
    A 1 km x 1 km x 100 m two-layer reservoir: a tight upper half over a more permeable lower half, an injector at 10 C along the
    vertical edge at (1000, 1000) and a producer along the edge at (0, 0). z is depth, so gravity points along +z.
    Well rates are scaled by the cell count relative to the 50x50x50 grid.
    """
    scale = nx * ny * nz / _FULL_SCALE_CELLS
    regions = [
        RockRegion("upper", 0.0, 50.0, 1e-2, 0.2, 2800.0, 850.0, 2.0, 1e-7),
        RockRegion("lower", 50.0, 100.0, 1e-1, 0.4, 3000.0, 1000.0, 3.0, 1e-7),
    ]
    wells = [
        WellConfig("injector", WellKind.RATE, 1000.0, 1000.0, 1.04 * scale, injection_temperature_c=10.0),
        WellConfig("producer", WellKind.RATE, 0.0, 0.0, -0.104 * scale),
    ]
    return ScenarioConfig(
        f"two_layer_{nx}x{ny}x{nz}", GridSpec(nx, ny, nz, 1000.0, 1000.0, 100.0), regions, FluidSpec(), wells, BoundaryConditions(), 1e4, (0.0, 0.0, 9.81),
        InitialSpec(60.0, 0.3), RunSpec(final_time_days, scheme, Splitting.TROTTER, step_days), ToleranceSpec(),
    )


def desk_scenario(**kwargs: Any) -> ScenarioConfig:
    return two_layer_scenario(20, 20, 4, **kwargs)
