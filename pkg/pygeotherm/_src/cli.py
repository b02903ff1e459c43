import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .exceptions import ConfigurationError, PhysicalDomainError, SimulationAborted, StepFailure
from .logger import _logger
from .scenario import ScenarioConfig, parse_duration
from .selftest import run_selftest
from .simulation import run_simulation, write_run_outputs
from .study import convergence_study, emit_outputs
from .tableaus import SchemeId

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = '%(asctime)s %(levelname)5s %(message)s'


class _Parser(argparse.ArgumentParser):
    """
    Usage errors exit with the configuration exit code.
    """
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIGURATION, f"{self.prog}: error: {message}\n")


def parse_schemes(text: str) -> List[SchemeId]:
    return [SchemeId.parse(label) for label in text.split(',') if label.strip()]


def parse_taus(text: str) -> List[float]:
    return [parse_duration(value) for value in text.split(',') if value.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pygeotherm", description="Geothermal reservoir simulation with exponential and Rosenbrock time integrators.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--verbose', action='store_true', help="log numerical detail at debug level")
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    simulate = commands.add_parser('simulate', parents=[common], help="run one scenario")
    simulate.add_argument('scenario', type=Path, help="scenario YAML file")
    simulate.add_argument('--out', type=Path, default=Path("run"), help="output directory (default: ./run)")
    simulate.add_argument('--scheme', help="override the scenario's scheme, e.g. erem-leja or rosm:0.5")
    simulate.add_argument('--tau', help="override the step size, e.g. 86400, 12h or 5d")

    study = commands.add_parser('study', parents=[common], help="convergence and efficiency study")
    study.add_argument('scenario', type=Path, help="scenario YAML file")
    study.add_argument('--schemes', required=True, help="comma-separated scheme labels, e.g. theta:1,erem-krylov,ros3p")
    study.add_argument('--taus', required=True, help="comma-separated step sizes, e.g. 10d,5d,2.5d")
    study.add_argument('--out', type=Path, default=Path("study"), help="output directory (default: ./study)")
    study.add_argument('--no-plots', action='store_true', help="skip the plot images")

    commands.add_parser('selftest', parents=[common], help="run the built-in numerical checks")
    return parser


def _configure_logging(verbose: bool, output_dir: Optional[Path]) -> Optional[logging.Handler]:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(stream=sys.stdout, level=level, format=LOG_FORMAT)
    _logger.setLevel(level)
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(output_dir / "run.log", mode='w')
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler.setLevel(level)
        _logger.addHandler(handler)
        return handler
    return None


def _simulate(arguments: argparse.Namespace) -> int:
    scenario = ScenarioConfig.load(arguments.scenario)
    scheme = SchemeId.parse(arguments.scheme) if arguments.scheme else None
    tau = parse_duration(arguments.tau) if arguments.tau else None
    result = run_simulation(scenario, scheme, tau, output_dir=arguments.out)
    write_run_outputs(result, arguments.out)
    return EXIT_OK


def _study(arguments: argparse.Namespace) -> int:
    scenario = ScenarioConfig.load(arguments.scenario)
    schemes = parse_schemes(arguments.schemes)
    taus = parse_taus(arguments.taus)
    if not schemes:
        raise ConfigurationError("No schemes given")
    report = convergence_study(scenario, schemes, taus)
    emit_outputs(report, arguments.out, plots=not arguments.no_plots)
    orders = report.observed_orders().dropna()
    for scheme, order in orders.items():
        _logger.info(f"Observed temperature order of {scheme}: {order:.3f}")
    return EXIT_OK if (report.rows["status"] == "ok").all() else EXIT_NUMERICAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    arguments = build_parser().parse_args(argv)
    output_dir = getattr(arguments, 'out', None)
    try:
        handler = _configure_logging(arguments.verbose, output_dir)
    except OSError as e:
        _logger.error(f"Cannot create output directory '{output_dir}': {e.strerror}")
        return EXIT_CONFIGURATION
    try:
        if arguments.command == 'simulate':
            return _simulate(arguments)
        if arguments.command == 'study':
            return _study(arguments)
        return run_selftest()
    except ConfigurationError as e:
        _logger.error(f"Configuration error: {e}")
        return EXIT_CONFIGURATION
    except (StepFailure, SimulationAborted, PhysicalDomainError) as e:
        _logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except OSError as e:
        _logger.error(f"I/O error: {e}")
        return EXIT_CONFIGURATION
    finally:
        if handler is not None:
            _logger.removeHandler(handler)
            handler.close()
