from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from pygeotherm import (
    NO_STEP_RETRIES, TIMESERIES_COLUMNS, ConfigurationError, PhysicalDomainError, ScenarioConfig, SchemeId, SimulationAborted, StepFailure,
    StepRetryConfig, relative_l2, run_simulation, state_frame, step, write_run_outputs,
)
# noinspection PyProtectedMember
from pygeotherm._src.enums import Splitting
from test.test_base import TestBase, small_scenario, temporary_directory

SMOOTH_LAYERED = Path(__file__).resolve().parent.parent / "scenarios" / "smooth_layered.yaml"
DAY = 86400.0


class TestStepRetryConfig(TestBase):
    def test_halves_until_success(self):
        sizes = []

        def action(size: float) -> str:
            sizes.append(size)
            if size > 2.0:
                raise StepFailure("too large", size)
            return "done"

        self.assertEqual(("done", 2.0), StepRetryConfig(8).retry(action, 8.0))
        self.assertEqual([8.0, 4.0, 2.0], sizes)

    def test_gives_up_after_attempts(self):
        sizes = []

        def action(size: float) -> None:
            sizes.append(size)
            raise StepFailure("always")

        self.assertRaises(StepFailure("always"), lambda: StepRetryConfig(3, min_step=1e-9).retry(action, 8.0))
        self.assertEqual([8.0, 4.0, 2.0], sizes)

    def test_stops_at_minimum_step(self):
        sizes = []

        def action(size: float) -> None:
            sizes.append(size)
            raise StepFailure("always")

        self.assertRaises(StepFailure("always"), lambda: StepRetryConfig(8, min_step=3.0).retry(action, 8.0))
        self.assertEqual([8.0, 4.0], sizes)

    def test_other_errors_are_not_retried(self):
        sizes = []

        def action(size: float) -> None:
            sizes.append(size)
            raise ConfigurationError("bad input")

        self.assertRaises(ConfigurationError("bad input"), lambda: StepRetryConfig(8).retry(action, 8.0))
        self.assertEqual([8.0], sizes)


class TestRunSimulation(TestBase):
    def test_timeseries(self):
        result = run_simulation(small_scenario())
        self.assertEqual(list(TIMESERIES_COLUMNS), list(result.timeseries.columns))
        self.assertEqual(5, len(result.timeseries))
        self.assertAllClose(10 * DAY, result.timeseries["time_s"].iloc[-1])
        self.assertTrue(repr(result).startswith("RunResult(small, erem-krylov, 5 steps, "))
        self.assertTrue(np.all(np.isfinite(result.final_state.temperature)))

    def test_last_step_is_shortened(self):
        result = run_simulation(small_scenario(step_days=3.0))
        self.assertAllClose([3 * DAY, 3 * DAY, 3 * DAY, DAY], result.timeseries["tau_s"].to_numpy())

    def test_injection_cools_the_fluid(self):
        result = run_simulation(small_scenario())
        self.assertLess(result.final_state.T_f.min(), result.initial_state.T_f.min())
        self.assertLess(result.timeseries["min_T_f"].iloc[-1], 67.5)

    def test_exponential_scheme_needs_no_linear_solves(self):
        for label in ("erem-krylov", "erem-leja"):
            with self.subTest(scheme=label):
                result = run_simulation(small_scenario(scheme=label, final_time_days=4.0))
                self.assertEqual(0, result.counters.linsolves)
                self.assertEqual(2, result.temperature_counters.steps)
                self.assertGreater(result.temperature_counters.phi_evaluations, 0)
                self.assertGreater(result.pressure_counters.matvecs, 0)

    def test_scheme_and_step_overrides(self):
        result = run_simulation(small_scenario(final_time_days=4.0), SchemeId.parse("ros2"), 2 * DAY)
        self.assertEqual("ros2", result.scheme.label)
        self.assertEqual(4, result.temperature_counters.linsolves)
        self.assertEqual(4, result.pressure_counters.linsolves)

    def test_strang_takes_two_temperature_steps(self):
        result = run_simulation(small_scenario(scheme="ros2", final_time_days=4.0, splitting=Splitting.STRANG))
        self.assertEqual(4, result.temperature_counters.steps)
        self.assertEqual(2, result.pressure_counters.steps)

    def test_adaptive_run_reaches_the_end(self):
        result = run_simulation(small_scenario(scheme="ros3p", final_time_days=4.0, adaptive=True))
        self.assertAllClose(4 * DAY, result.timeseries["time_s"].iloc[-1])
        self.assertTrue(np.all(result.timeseries["tau_s"] > 0))

    def test_adaptive_needs_embedded_scheme(self):
        self.assertRaises(
            ConfigurationError("Adaptive stepping needs an embedded solution; scheme erem-krylov has none"),
            lambda: run_simulation(small_scenario(scheme="ros2"), SchemeId.parse("erem-krylov"), adaptive=True)
        )

    def test_out_of_range_state_is_retried_with_a_smaller_step(self):
        calls = []

        def first_fails(*args, **kwargs):
            calls.append(args[4])
            if len(calls) == 1:
                raise PhysicalDomainError("Viscosity correlation is defined on [0, 300] C, got 350 C")
            return step(*args, **kwargs)

        with patch("pygeotherm._src.simulation.step", side_effect=first_fails):
            result = run_simulation(small_scenario(final_time_days=4.0))
        self.assertEqual([DAY, 2 * DAY, DAY], result.timeseries["tau_s"].tolist())
        self.assertEqual([2 * DAY, DAY], calls[:2])

    def test_abort_dumps_last_good_state(self):
        with temporary_directory() as directory:
            with patch("pygeotherm._src.simulation.step", side_effect=StepFailure("forced")):
                error = self.assertRaisesType(SimulationAborted, lambda: run_simulation(small_scenario(), retry=NO_STEP_RETRIES, output_dir=directory))
            path = directory / "abort_state.csv"
            self.assertEqual(str(path), error.dump_path)
            self.assertEqual(f"Step failed at t=0 s: forced. Last good state written to {path}", str(error))
            dump = pd.read_csv(path)
            self.assertEqual(["i", "j", "k", "T_s", "T_f", "p"], list(dump.columns))
            self.assertEqual(32, len(dump))
            self.assertAllClose([67.5, 82.5], dump["T_f"].to_numpy()[[0, 16]])

    def test_splitting_order(self):
        scenario = ScenarioConfig.load(SMOOTH_LAYERED)
        scenario.run.final_time_days = 100.0
        reference = run_simulation(scenario, SchemeId.parse("ros3p"), 5 * DAY)
        errors = {}
        for splitting in (Splitting.TROTTER, Splitting.STRANG):
            run = run_simulation(scenario, SchemeId.parse("theta:0.5"), 50 * DAY, splitting=splitting)
            errors[splitting] = relative_l2(run.final_state.temperature, reference.final_state.temperature)
        self.assertGreater(errors[Splitting.TROTTER], 0.0)
        self.assertLessEqual(errors[Splitting.STRANG], errors[Splitting.TROTTER])


class TestOutputs(TestBase):
    def test_state_frame(self):
        result = run_simulation(small_scenario(final_time_days=2.0))
        frame = state_frame(result.model, result.final_state)
        self.assertEqual([3, 1, 1], frame.loc[23, ["i", "j", "k"]].tolist())
        self.assertEqual(result.final_state.p.tolist(), frame["p"].tolist())

    def test_write_run_outputs(self):
        result = run_simulation(small_scenario(final_time_days=4.0))
        with temporary_directory() as directory:
            written = write_run_outputs(result, directory / "run")
            self.assertEqual(
                ["timeseries.csv", "final_state.csv", "scenario.echo", "temperature_slice.png"],
                [path.name for path in written]
            )
            self.assertTrue(all(path.is_file() for path in written))
            timeseries = pd.read_csv(directory / "run" / "timeseries.csv")
            self.assertEqual(list(TIMESERIES_COLUMNS), list(timeseries.columns))
            self.assertEqual(2, len(timeseries))
            self.assertEqual("small", ScenarioConfig.load(directory / "run" / "scenario.echo").name)
