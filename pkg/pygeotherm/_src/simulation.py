import os
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from redo import retrier

from .enums import PhiMethod, SchemeFamily, Splitting
from .exceptions import ConfigurationError, PhysicalDomainError, SimulationAborted, StepFailure
from .grid import StateFields
from .integrators import IntegratorOptions, LinearSettings, NewtonSettings, StepController, WorkCounters, adapt_step, step
from .krylov import KrylovPhi
from .leja import LejaControl, LejaPhi
from .logger import _logger
from .model import ReservoirModel
from .scenario import ScenarioConfig
from .tableaus import SchemeId

T = TypeVar('T')

TIMESERIES_COLUMNS = (
    "time_s", "tau_s", "min_T_f", "max_T_f", "mean_T_s", "mean_p", "matvecs", "linsolves", "newton_iterations", "phi_evaluations", "clamp_warnings",
)


class StepRetryConfig:
    """
    Retries a failing step with half the step size each time, down to `min_step` seconds.
    """
    def __init__(self, attempts: int = 8, min_step: float = 1.0) -> None:
        self.attempts = attempts
        self.min_step = min_step

    def retry(self, action: Callable[[float], T], tau: float) -> Tuple[T, float]:
        """
        :return: The result of the first successful attempt and the step size it used
        """
        attempt = 1
        current = tau
        for _ in retrier(attempts=self.attempts, sleeptime=0, max_sleeptime=0, sleepscale=1, jitter=0):
            try:
                return action(current), current
            except StepFailure as e:
                if attempt == self.attempts or current / 2 < self.min_step:
                    _logger.warning(f"Reached maximum number of attempts ({attempt}) or minimum step ({self.min_step} s), raising exception")
                    raise
                _logger.info(f"Attempt number {attempt} out of {self.attempts} failed with step {current:g} s, halving. Exception: {e.__class__.__name__}('{str(e)}')")
                current /= 2
            attempt += 1


NO_STEP_RETRIES = StepRetryConfig(1)


def integrator_options(scenario: ScenarioConfig) -> IntegratorOptions:
    tolerances = scenario.tolerances
    return IntegratorOptions(
        NewtonSettings(tolerances.absolute, tolerances.relative, tolerances.newton_max_iterations),
        LinearSettings(tolerances.linear_tolerance, tolerances.linear_max_iterations),
        KrylovPhi(tolerances.krylov_dimension, tolerances.relative),
        LejaPhi(LejaControl(tolerances.absolute, tolerances.relative, max_degree=tolerances.leja_max_degree)),
        tolerances.jacobian_free,
    )


class RunResult:
    scenario: ScenarioConfig
    scheme: SchemeId
    model: ReservoirModel
    initial_state: StateFields
    final_state: StateFields
    timeseries: pd.DataFrame
    temperature_counters: WorkCounters
    pressure_counters: WorkCounters
    cpu_seconds: float
    clamp_warnings: int

    def __init__(
            self, scenario: ScenarioConfig, scheme: SchemeId, model: ReservoirModel, initial_state: StateFields, final_state: StateFields,
            timeseries: pd.DataFrame, temperature_counters: WorkCounters, pressure_counters: WorkCounters, cpu_seconds: float,
    ) -> None:
        self.scenario = scenario
        self.scheme = scheme
        self.model = model
        self.initial_state = initial_state
        self.final_state = final_state
        self.timeseries = timeseries
        self.temperature_counters = temperature_counters
        self.pressure_counters = pressure_counters
        self.cpu_seconds = cpu_seconds
        self.clamp_warnings = model.fluid.clamps.count

    def __repr__(self) -> str:
        return f"RunResult({self.scenario.name}, {self.scheme.label}, {len(self.timeseries)} steps, {self.cpu_seconds:.3g} s)"

    @property
    def counters(self) -> WorkCounters:
        return WorkCounters().add(self.temperature_counters).add(self.pressure_counters)


class _SplitStepper:
    """
    Advances the temperature and pressure systems in sequence, each by one step of the scheme.
    """
    def __init__(self, model: ReservoirModel, scheme: SchemeId, splitting: Splitting, options: IntegratorOptions) -> None:
        self.model = model
        self.scheme = scheme
        self.splitting = splitting
        self.options = options
        self.temperature_counters = WorkCounters()
        self.pressure_counters = WorkCounters()

    def _temperature(self, state: StateFields, t: float, tau: float, errors: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> StateFields:
        system = self.model.temperature_system(state)
        y = state.temperature
        outcome = step(self.scheme, system, y, t, tau, self.options, self.temperature_counters)
        if outcome.y_embedded is not None:
            errors.append((outcome.y, outcome.y_embedded, y))
        return state.with_temperature(outcome.y)

    def _pressure(self, state: StateFields, t: float, tau: float, errors: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> StateFields:
        system = self.model.pressure_system(state)
        # EREM always advances the pressure with the Krylov backend
        phi_method = PhiMethod.KRYLOV if self.scheme.family is SchemeFamily.EREM else None
        outcome = step(self.scheme, system, state.p, t, tau, self.options, self.pressure_counters, phi_method)
        if outcome.y_embedded is not None:
            errors.append((outcome.y, outcome.y_embedded, state.p))
        return state.with_pressure(outcome.y)

    def advance(self, state: StateFields, t: float, tau: float) -> Tuple[StateFields, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
        """
        :raises StepFailure: also when a state leaves the physical domain during the step
        """
        errors: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        try:
            if self.splitting is Splitting.TROTTER:
                state = self._temperature(state, t, tau, errors)
                state = self._pressure(state, t, tau, errors)
            else:
                state = self._temperature(state, t, tau / 2, errors)
                state = self._pressure(state, t, tau, errors)
                state = self._temperature(state, t + tau / 2, tau / 2, errors)
        except PhysicalDomainError as e:
            raise StepFailure(str(e), tau) from e
        return state, errors


def _dump_state(model: ReservoirModel, state: StateFields, output_dir: Optional[Union[str, Path]]) -> str:
    path = Path(output_dir if output_dir is not None else os.getcwd()) / "abort_state.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    state_frame(model, state).to_csv(path, index=False, float_format='%.12g')
    return str(path)


def state_frame(model: ReservoirModel, state: StateFields) -> pd.DataFrame:
    grid = model.grid
    cells = np.arange(grid.cell_count)
    return pd.DataFrame({
        "i": cells % grid.nx,
        "j": (cells // grid.nx) % grid.ny,
        "k": cells // (grid.nx * grid.ny),
        "T_s": state.T_s,
        "T_f": state.T_f,
        "p": state.p,
    })


def run_simulation(
        scenario: ScenarioConfig, scheme: Optional[SchemeId] = None, tau: Optional[float] = None, retry: Optional[StepRetryConfig] = None,
        output_dir: Optional[Union[str, Path]] = None, splitting: Optional[Splitting] = None, adaptive: Optional[bool] = None,
) -> RunResult:
    """
    Sequential simulation: per step the temperature system is advanced with the pressure and Darcy fluxes frozen, then the pressure
    system with the new temperatures frozen (Trotter), or half a temperature step on either side of the pressure step (Strang).

    :param scheme: Overrides the scenario's scheme
    :param tau: Step size in seconds; overrides the scenario's step
    :param retry: Step-halving policy; built from the scenario when omitted
    :param output_dir: Where an abort dump is written
    :raises SimulationAborted: when a step keeps failing down to the minimum step size
    """
    run = scenario.run
    scheme = run.scheme if scheme is None else scheme
    tau = run.step_s if tau is None else tau
    splitting = run.splitting if splitting is None else splitting
    adaptive = run.adaptive if adaptive is None else adaptive
    retry = StepRetryConfig(run.step_attempts, run.min_step_s) if retry is None else retry
    model = scenario.build_model()
    initial_state = scenario.initial_state(model)
    stepper = _SplitStepper(model, scheme, splitting, integrator_options(scenario))
    controller = StepController(tau, scenario.tolerances.absolute, scenario.tolerances.relative) if adaptive else None
    if adaptive and not scheme.has_embedded:
        raise ConfigurationError(f"Adaptive stepping needs an embedded solution; scheme {scheme.label} has none")

    _logger.info(f"Starting {scenario.name} with {scheme.display_name}, {splitting.value} splitting, step {tau:g} s{' (adaptive)' if adaptive else ''}")
    state, t, end = initial_state, 0.0, run.final_time_s
    rows: List[Dict[str, float]] = []
    start = time.perf_counter()
    while t < end * (1 - 1e-12):
        h = min(controller.tau if adaptive else tau, end - t)
        try:
            if adaptive:
                state, h = _adaptive_step(stepper, controller, state, t, h, scheme.order, run.min_step_s)
            else:
                (state, _), h = retry.retry(lambda size: stepper.advance(state, t, size), h)
        except StepFailure as e:
            path = _dump_state(model, state, output_dir)
            raise SimulationAborted(f"Step failed at t={t:g} s: {e}. Last good state written to {path}", path) from e
        t += h
        counters = WorkCounters().add(stepper.temperature_counters).add(stepper.pressure_counters)
        rows.append({
            "time_s": t, "tau_s": h, "min_T_f": float(state.T_f.min()), "max_T_f": float(state.T_f.max()), "mean_T_s": float(state.T_s.mean()),
            "mean_p": float(state.p.mean()), "matvecs": counters.matvecs, "linsolves": counters.linsolves, "newton_iterations": counters.newton_iterations,
            "phi_evaluations": counters.phi_evaluations, "clamp_warnings": model.fluid.clamps.count,
        })
    cpu_seconds = time.perf_counter() - start
    if model.fluid.clamps.count > 0:
        _logger.warning(f"Fluid property correlations clamped {model.fluid.clamps.count} temperature evaluations")
    _logger.info(f"Finished {scenario.name} with {scheme.display_name} after {len(rows)} steps in {cpu_seconds:.3g} s")
    return RunResult(
        scenario, scheme, model, initial_state, state, pd.DataFrame(rows, columns=TIMESERIES_COLUMNS), stepper.temperature_counters,
        stepper.pressure_counters, cpu_seconds,
    )


def _adaptive_step(
        stepper: _SplitStepper, controller: StepController, state: StateFields, t: float, h: float, order: int, min_step: float,
) -> Tuple[StateFields, float]:
    """
    Repeat the split step until the larger of the subsystem error norms is at most one.
    """
    while True:
        try:
            candidate, errors = stepper.advance(state, t, h)
        except StepFailure:
            controller.tau = h / 2
            accepted = False
        else:
            err = max(controller.error_norm(*error) for error in errors)
            controller.tau = h
            accepted, _ = adapt_step(controller, err, order)
            if accepted:
                return candidate, h
        stepper.temperature_counters.rejected_steps += 1
        _logger.debug(f"Rejected step {h:g} s at t={t:g} s, retrying with {controller.tau:g} s")
        if controller.tau < min_step:
            raise StepFailure(f"Adaptive step fell below the minimum step {min_step:g} s", controller.tau)
        h = controller.tau


def write_run_outputs(result: RunResult, output_dir: Union[str, Path]) -> List[Path]:
    """
    Writes timeseries.csv, final_state.csv, scenario.echo and temperature_slice.png.
    """
    directory = Path(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    timeseries = directory / "timeseries.csv"
    result.timeseries.to_csv(timeseries, index=False, float_format='%.12g')
    written.append(timeseries)
    final_state = directory / "final_state.csv"
    state_frame(result.model, result.final_state).to_csv(final_state, index=False, float_format='%.12g')
    written.append(final_state)
    echo = directory / "scenario.echo"
    echo.write_text(result.scenario.echo())
    written.append(echo)
    written.append(plot_temperature_slice(result, directory / "temperature_slice.png"))
    for path in written:
        _logger.info(f"Wrote {path}")
    return written


def plot_temperature_slice(result: RunResult, path: Union[str, Path], layer: Optional[int] = None) -> Path:
    """
    Fluid temperature in one horizontal layer (the middle one by default), next to the initial field.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = result.model.grid
    layer = grid.nz // 2 if layer is None else layer
    fields = [("initial", result.initial_state.T_f), (f"t = {result.scenario.run.final_time_days:g} days", result.final_state.T_f)]
    low = min(field.min() for _, field in fields)
    high = max(field.max() for _, field in fields)
    figure, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for axis, (title, field) in zip(axes, fields):
        plane = field.reshape(grid.nz, grid.ny, grid.nx)[layer]
        image = axis.imshow(plane, origin='lower', extent=(0, grid.nx * grid.dx, 0, grid.ny * grid.dy), vmin=low, vmax=high, cmap='coolwarm')
        axis.set_title(f"T_f, layer {layer}, {title}")
        axis.set_xlabel("x [m]")
        axis.set_ylabel("y [m]")
    figure.colorbar(image, ax=list(axes), label="temperature [C]")
    figure.savefig(path, dpi=100)
    plt.close(figure)
    return Path(path)
