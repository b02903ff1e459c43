import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from threading import Lock
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .enums import SchemeFamily
from .exceptions import ConfigurationError, PhysicalDomainError, SimulationAborted, StepFailure
from .logger import _logger
from .oracles import observed_order
from .scenario import ScenarioConfig
from .simulation import NO_STEP_RETRIES, RunResult, run_simulation
from .tableaus import SchemeId

RESULT_COLUMNS = ("scheme", "tau_s", "err_T_rel", "err_p_rel", "cpu_s", "matvecs", "linsolves")
WORK_COLUMNS = ("scheme", "tau_s", "newton_iterations", "phi_evaluations", "steps", "status")
WORKERS_VARIABLE = "PYGEOTHERM_WORKERS"

REFERENCE_SCHEME = SchemeId(SchemeFamily.ROS3P)

# Serializes log output and file emission across worker threads
_OUTPUT_LOCK = Lock()


def workers_from_environment() -> int:
    value = os.environ.get(WORKERS_VARIABLE, "1")
    try:
        workers = int(value)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_VARIABLE} must be a positive integer, got '{value}'") from None
    if workers < 1:
        raise ConfigurationError(f"{WORKERS_VARIABLE} must be a positive integer, got '{value}'")
    return workers


def relative_l2(value: np.ndarray, reference: np.ndarray) -> float:
    norm = np.linalg.norm(reference)
    return float(np.linalg.norm(value - reference) / norm) if norm > 0 else float(np.linalg.norm(value))


class ConvergenceReport:
    """
    One row per (scheme, step size): relative L2 errors of temperature and pressure at the final time against a shared reference run,
    stepping wall time and work counters. Failed runs keep their row with NaN errors and the failure in `status`.
    """
    rows: pd.DataFrame
    reference_scheme: SchemeId
    reference_tau: float
    scenario: Optional[ScenarioConfig]

    def __init__(self, rows: pd.DataFrame, reference_scheme: SchemeId, reference_tau: float, scenario: Optional[ScenarioConfig] = None) -> None:
        self.rows = rows
        self.reference_scheme = reference_scheme
        self.reference_tau = reference_tau
        self.scenario = scenario

    def __repr__(self) -> str:
        return f"ConvergenceReport({len(self.rows)} runs, reference {self.reference_scheme.label} at {self.reference_tau:g} s)"

    @staticmethod
    def empty(reference_scheme: SchemeId = REFERENCE_SCHEME, reference_tau: float = float('nan')) -> 'ConvergenceReport':
        return ConvergenceReport(pd.DataFrame(columns=RESULT_COLUMNS + WORK_COLUMNS[2:]), reference_scheme, reference_tau)

    def results(self) -> pd.DataFrame:
        return self.rows.loc[:, list(RESULT_COLUMNS)]

    def work(self) -> pd.DataFrame:
        return self.rows.loc[:, list(WORK_COLUMNS)]

    def observed_orders(self, column: str = "err_T_rel") -> pd.Series:
        """
        Least-squares slope of log(error) against log(tau) per scheme, over the runs with a positive finite error.
        """
        orders = {}
        for scheme, group in self.rows.groupby("scheme", sort=False):
            errors = group[column].astype(float).to_numpy()
            taus = group["tau_s"].astype(float).to_numpy()
            usable = np.isfinite(errors) & (errors > 0)
            if np.count_nonzero(usable) >= 2:
                orders[scheme] = observed_order(taus[usable], errors[usable])
            else:
                orders[scheme] = float('nan')
        return pd.Series(orders, name=f"order_{column}", dtype=float)


def _row(scheme: SchemeId, tau: float, run: Optional[RunResult], reference: Optional[RunResult], status: str) -> Dict[str, Union[str, float, int]]:
    if run is None:
        return {
            "scheme": scheme.label, "tau_s": tau, "err_T_rel": float('nan'), "err_p_rel": float('nan'), "cpu_s": float('nan'), "matvecs": 0, "linsolves": 0,
            "newton_iterations": 0, "phi_evaluations": 0, "steps": 0, "status": status,
        }
    counters = run.counters
    return {
        "scheme": scheme.label,
        "tau_s": tau,
        "err_T_rel": relative_l2(run.final_state.temperature, reference.final_state.temperature) if reference is not None else float('nan'),
        "err_p_rel": relative_l2(run.final_state.p, reference.final_state.p) if reference is not None else float('nan'),
        "cpu_s": run.cpu_seconds,
        "matvecs": counters.matvecs,
        "linsolves": counters.linsolves,
        "newton_iterations": counters.newton_iterations,
        "phi_evaluations": counters.phi_evaluations,
        "steps": len(run.timeseries),
        "status": status,
    }


def convergence_study(
        scenario: ScenarioConfig, schemes: Sequence[SchemeId], taus: Sequence[float], workers: Optional[int] = None,
        reference_scheme: SchemeId = REFERENCE_SCHEME,
) -> ConvergenceReport:
    """
    Runs every scheme at every step size (fixed steps, no retries) and compares the final state with one reference run
    of `reference_scheme` at half the smallest step.

    :param workers: Concurrent runs; from the PYGEOTHERM_WORKERS environment variable when omitted
    """
    if len(taus) == 0:
        raise ConfigurationError("At least one step size is required")
    if any(not tau > 0 for tau in taus):
        raise ConfigurationError(f"Step sizes must be positive, got {list(taus)}")
    taus = sorted(taus, reverse=True)
    workers = workers_from_environment() if workers is None else workers
    reference_tau = min(taus) / 2
    _logger.info(f"Computing reference solution with {reference_scheme.display_name} at {reference_tau:g} s")
    reference, reference_status = None, "ok"
    try:
        reference = run_simulation(scenario, reference_scheme, reference_tau, NO_STEP_RETRIES)
    except (StepFailure, SimulationAborted, PhysicalDomainError) as e:
        _logger.error(f"Reference run {reference_scheme.label} at {reference_tau:g} s failed, errors will be missing: {e}")
        reference_status = f"failed: reference {e.__class__.__name__}"

    def execute(scheme: SchemeId, tau: float) -> Dict[str, Union[str, float, int]]:
        try:
            run = run_simulation(scenario, scheme, tau, NO_STEP_RETRIES)
        except (StepFailure, SimulationAborted, PhysicalDomainError) as e:
            with _OUTPUT_LOCK:
                _logger.warning(f"Run {scheme.label} at {tau:g} s failed: {e}")
            return _row(scheme, tau, None, reference, f"failed: {e.__class__.__name__}")
        with _OUTPUT_LOCK:
            _logger.info(f"Finished {scheme.label} at {tau:g} s in {run.cpu_seconds:.3g} s")
        return _row(scheme, tau, run, reference, reference_status)

    jobs = [(scheme, tau) for scheme in schemes for tau in taus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(execute, scheme, tau) for scheme, tau in jobs]
        rows = [future.result() for future in futures]
    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS + WORK_COLUMNS[2:]) if rows else ConvergenceReport.empty().rows
    return ConvergenceReport(frame, reference_scheme, reference_tau, scenario)


def emit_outputs(report: ConvergenceReport, output_dir: Union[str, Path], plots: bool = True) -> List[Path]:
    """
    Writes results.csv, work.csv, scenario.echo (when the report knows its scenario) and the log-log plots.
    """
    directory = Path(output_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        results = directory / "results.csv"
        report.results().to_csv(results, index=False, float_format='%.12g')
        written.append(results)
        work = directory / "work.csv"
        report.work().to_csv(work, index=False)
        written.append(work)
        if report.scenario is not None:
            echo = directory / "scenario.echo"
            echo.write_text(report.scenario.echo())
            written.append(echo)
        if plots and len(report.rows) > 0:
            written.extend(plot_report(report, directory))
    except OSError as e:
        raise OSError(f"Cannot write study outputs to '{directory}': {e.strerror}") from e
    with _OUTPUT_LOCK:
        for path in written:
            _logger.info(f"Wrote {path}")
    return written


def plot_report(report: ConvergenceReport, directory: Path) -> List[Path]:
    """
    Error against step size, error against CPU time and CPU time against step size, on log-log axes.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = {}
    for label in report.rows["scheme"].unique():
        try:
            names[label] = SchemeId.parse(label).display_name
        except ConfigurationError:
            names[label] = label
    written = []
    for file_name, x_column, y_column, x_label, y_label in (
            ("error_vs_tau.png", "tau_s", "err_T_rel", "time step [s]", "relative L2 temperature error"),
            ("error_vs_cpu.png", "cpu_s", "err_T_rel", "CPU time [s]", "relative L2 temperature error"),
            ("cpu_vs_tau.png", "tau_s", "cpu_s", "time step [s]", "CPU time [s]"),
    ):
        figure, axis = plt.subplots(figsize=(6, 4.5))
        for label, group in report.rows.groupby("scheme", sort=False):
            usable = group[np.isfinite(group[x_column].astype(float)) & np.isfinite(group[y_column].astype(float))]
            usable = usable[(usable[x_column] > 0) & (usable[y_column] > 0)]
            if len(usable) > 0:
                axis.loglog(usable[x_column], usable[y_column], marker='o', label=names[label])
        axis.set_xlabel(x_label)
        axis.set_ylabel(y_label)
        axis.grid(True, which='both', alpha=0.3)
        axis.legend()
        path = directory / file_name
        figure.savefig(path, dpi=100)
        plt.close(figure)
        written.append(path)
    return written
