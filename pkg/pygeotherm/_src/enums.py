from enum import Enum


class Splitting(Enum):
    TROTTER = "trotter"
    STRANG = "strang"


class PhiMethod(Enum):
    KRYLOV = "krylov"
    LEJA = "leja"


class SchemeFamily(Enum):
    THETA_EULER = "theta"
    EREM = "erem"
    ROSM = "rosm"
    ROS2 = "ros2"
    ROS3P = "ros3p"


class WellKind(Enum):
    RATE = "rate"
    PRESSURE = "pressure"


class InitialPressureMode(Enum):
    STEADY = "steady"
    HYDROSTATIC = "hydrostatic"
    UNIFORM = "uniform"


class DifferenceFormula(Enum):
    FORWARD = "forward"
    CENTRAL = "central"
