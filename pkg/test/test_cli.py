from io import StringIO
from unittest.mock import patch

import pandas as pd

from pygeotherm import Check, ConfigurationError, SelftestFailure, SimulationAborted, run_selftest
# noinspection PyProtectedMember
from pygeotherm._src.cli import EXIT_CONFIGURATION, EXIT_NUMERICAL, EXIT_OK, main, parse_schemes, parse_taus
from test.test_base import TestBase, small_scenario, temporary_directory


class TestArguments(TestBase):
    def test_parse_schemes(self):
        self.assertEqual(["theta:1", "ros3p"], [scheme.label for scheme in parse_schemes("theta:1, ros3p,")])

    def test_parse_taus(self):
        self.assertEqual([432000.0, 43200.0, 600.0], parse_taus("5d,12h,600"))

    def test_unknown_scheme(self):
        self.assertRaisesType(ConfigurationError, lambda: parse_schemes("theta:1,rk4"))

    def test_usage_error_exits_with_configuration_code(self):
        error = self.assertRaisesType(SystemExit, lambda: main([]))
        self.assertEqual(EXIT_CONFIGURATION, error.code)
        error = self.assertRaisesType(SystemExit, lambda: main(["study", "scenario.yaml"]))
        self.assertEqual(EXIT_CONFIGURATION, error.code)


class TestSimulateCommand(TestBase):
    def test_simulate(self):
        with temporary_directory() as directory:
            scenario = directory / "small.yaml"
            scenario.write_text(small_scenario(final_time_days=4.0).echo())
            out = directory / "run"
            self.assertEqual(EXIT_OK, main(["simulate", str(scenario), "--out", str(out), "--scheme", "ros2", "--tau", "1d"]))
            timeseries = pd.read_csv(out / "timeseries.csv")
            self.assertEqual(4, len(timeseries))
            for name in ("final_state.csv", "scenario.echo", "temperature_slice.png", "run.log"):
                self.assertTrue((out / name).is_file(), name)
            self.assertIn("Starting small with ROS2", (out / "run.log").read_text())

    def test_missing_scenario(self):
        with temporary_directory() as directory:
            self.assertEqual(EXIT_CONFIGURATION, main(["simulate", str(directory / "missing.yaml"), "--out", str(directory / "run")]))

    def test_invalid_scheme(self):
        with temporary_directory() as directory:
            scenario = directory / "small.yaml"
            scenario.write_text(small_scenario().echo())
            self.assertEqual(EXIT_CONFIGURATION, main(["simulate", str(scenario), "--scheme", "rk4", "--out", str(directory / "run")]))

    def test_numerical_failure(self):
        with temporary_directory() as directory:
            scenario = directory / "small.yaml"
            scenario.write_text(small_scenario().echo())
            with patch("pygeotherm._src.cli.run_simulation", side_effect=SimulationAborted("Step failed", "abort_state.csv")):
                self.assertEqual(EXIT_NUMERICAL, main(["simulate", str(scenario), "--out", str(directory / "run")]))


class TestStudyCommand(TestBase):
    def test_study(self):
        with temporary_directory() as directory:
            scenario = directory / "small.yaml"
            scenario.write_text(small_scenario(final_time_days=2.0).echo())
            out = directory / "study"
            self.assertEqual(EXIT_OK, main(["study", str(scenario), "--schemes", "ros2,erem-leja", "--taus", "1d,2d", "--out", str(out), "--no-plots"]))
            results = pd.read_csv(out / "results.csv")
            self.assertEqual(["ros2", "ros2", "erem-leja", "erem-leja"], results["scheme"].tolist())
            self.assertFalse((out / "error_vs_tau.png").exists())

    def test_no_schemes(self):
        with temporary_directory() as directory:
            scenario = directory / "small.yaml"
            scenario.write_text(small_scenario().echo())
            self.assertEqual(EXIT_CONFIGURATION, main(["study", str(scenario), "--schemes", ",", "--taus", "1d", "--out", str(directory / "study")]))


class TestSelftest(TestBase):
    def test_reports_each_check(self):
        def failing() -> str:
            raise SelftestFailure("slope 0.500")

        out = StringIO()
        with patch("pygeotherm._src.selftest.checks", return_value=[Check("passing", lambda: "fine"), Check("failing", failing)]):
            self.assertEqual(EXIT_NUMERICAL, run_selftest(out))
        lines = out.getvalue().splitlines()
        self.assertTrue(lines[0].startswith("PASS passing: fine ("))
        self.assertTrue(lines[1].startswith("FAIL failing: slope 0.500 ("))

    def test_all_passing(self):
        with patch("pygeotherm._src.selftest.checks", return_value=[Check("passing", lambda: "fine")]):
            self.assertEqual(EXIT_OK, run_selftest(StringIO()))
