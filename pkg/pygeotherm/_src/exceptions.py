from typing import Optional


class StructuralError(ValueError):
    """
    Inputs with the wrong shape or kind: dimension mismatches, non-finite dense matrices, invalid orders.
    """
    pass


class PhysicalDomainError(ValueError):
    """
    A physical quantity left the range where the model is defined.
    """
    pass


class ConfigurationError(ValueError):
    pass


class StepFailure(RuntimeError):
    """
    A single time step could not be completed. The caller may retry with a smaller step.
    """
    tau: Optional[float]

    def __init__(self, message: str, tau: Optional[float] = None) -> None:
        super().__init__(message)
        self.tau = tau


class NonConvergenceError(StepFailure):
    best_estimate: float

    def __init__(self, message: str, best_estimate: float, tau: Optional[float] = None) -> None:
        super().__init__(message, tau)
        self.best_estimate = best_estimate


class SimulationAborted(RuntimeError):
    dump_path: Optional[str]

    def __init__(self, message: str, dump_path: Optional[str] = None) -> None:
        super().__init__(message)
        self.dump_path = dump_path
