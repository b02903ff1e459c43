from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .enums import PhiMethod, SchemeFamily
from .exceptions import ConfigurationError, StructuralError


class RosenbrockTableau:
    """
    Coefficients of an s-stage Rosenbrock method in the form
    (1/(tau*gamma) I - J) k_i = f(y + sum_j a_ij k_j, t + alpha_i tau) - sum_j (c_ij/tau) k_j + tau gamma_i f_t,
    y_next = y + sum_i b_i k_i, with the embedded solution using b_hat.

    The diagonal of `c` holds 1/gamma; only its strictly lower part enters the stage equations.
    """
    name: str
    gamma: float
    a: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    gamma_i: np.ndarray
    b: np.ndarray
    b_hat: np.ndarray
    order: int

    def __init__(
            self, name: str, gamma: float, a: Sequence[Sequence[float]], c: Sequence[Sequence[float]], alpha: Sequence[float], gamma_i: Sequence[float],
            b: Sequence[float], b_hat: Sequence[float], order: int,
    ) -> None:
        self.name = name
        self.gamma = gamma
        self.a = np.array(a, dtype=float)
        self.c = np.array(c, dtype=float)
        self.alpha = np.array(alpha, dtype=float)
        self.gamma_i = np.array(gamma_i, dtype=float)
        self.b = np.array(b, dtype=float)
        self.b_hat = np.array(b_hat, dtype=float)
        self.order = order
        s = self.stages
        if self.a.shape != (s, s) or self.c.shape != (s, s):
            raise StructuralError(f"{name}: coefficient matrices must be {s}x{s}")
        if not (self.alpha.shape == self.gamma_i.shape == self.b_hat.shape == (s,)):
            raise StructuralError(f"{name}: stage vectors must have length {s}")
        if np.any(np.triu(self.a) != 0) or np.any(np.triu(self.c, k=1) != 0):
            raise StructuralError(f"{name}: a must be strictly lower triangular and c lower triangular")
        if gamma <= 0:
            raise StructuralError(f"{name}: gamma must be positive, got {gamma}")

    def __repr__(self) -> str:
        return f"RosenbrockTableau({self.name}, {self.stages} stages, order {self.order})"

    @property
    def stages(self) -> int:
        return self.b.shape[0]

    @property
    def embedded_order(self) -> int:
        return self.order - 1


ROS2_1 = RosenbrockTableau(
    name="ROS2",
    gamma=1.707106781186547,
    a=[
        [0.0, 0.0],
        [5.857864376269050e-01, 0.0],
    ],
    c=[
        [5.857864376269050e-01, 0.0],
        [1.171572875253810, 5.857864376269050e-01],
    ],
    alpha=[0.0, 1.0],
    gamma_i=[1.707106781186547, -1.707106781186547],
    b=[8.786796564403575e-01, 2.928932188134525e-01],
    b_hat=[5.857864376269050e-01, 0.0],
    order=2,
)

ROS3P = RosenbrockTableau(
    name="ROS3p",
    gamma=7.886751345948129e-01,
    a=[
        [0.0, 0.0, 0.0],
        [1.267949192431123, 0.0, 0.0],
        [1.267949192431123, 0.0, 0.0],
    ],
    c=[
        [1.267949192431123, 0.0, 0.0],
        [1.607695154586736, 1.267949192431123, 0.0],
        [3.464101615137755, 1.732050807568877, 1.267949192431123],
    ],
    alpha=[0.0, 1.0, 1.0],
    gamma_i=[7.886751345948129e-01, -2.113248654051871e-01, -1.077350269189626],
    b=[2.0, 5.773502691896258e-01, 4.226497308103742e-01],
    b_hat=[2.113248654051871, 1.0, 4.226497308103742e-01],
    order=3,
)


class SchemeId:
    """
    A time-stepping scheme: theta-Euler(theta), EREM(Krylov|Leja), ROSM(gamma), ROS2 or ROS3p.
    """
    family: SchemeFamily
    parameter: Optional[float]
    phi_method: Optional[PhiMethod]

    def __init__(self, family: SchemeFamily, parameter: Optional[float] = None, phi_method: Optional[PhiMethod] = None) -> None:
        if family is SchemeFamily.THETA_EULER:
            if parameter is None or not 0.0 <= parameter <= 1.0:
                raise ConfigurationError(f"theta must lie in [0, 1], got {parameter}")
        elif family is SchemeFamily.ROSM:
            if parameter is None or not parameter > 0:
                raise ConfigurationError(f"ROSM gamma must be positive, got {parameter}")
        elif family is SchemeFamily.EREM:
            phi_method = PhiMethod.KRYLOV if phi_method is None else phi_method
        self.family = family
        self.parameter = None if parameter is None else float(parameter)
        self.phi_method = phi_method if family is SchemeFamily.EREM else None

    def __repr__(self) -> str:
        return f"SchemeId({self.label})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SchemeId) and (self.family, self.parameter, self.phi_method) == (other.family, other.parameter, other.phi_method)

    def __hash__(self) -> int:
        return hash((self.family, self.parameter, self.phi_method))

    @staticmethod
    def parse(label: str) -> 'SchemeId':
        """
        Parse `theta:<theta>`, `erem-krylov`, `erem-leja`, `rosm:<gamma>`, `ros2` or `ros3p`.
        """
        text = label.strip().lower()
        name, _, argument = text.partition(':')
        try:
            if name == SchemeFamily.THETA_EULER.value:
                return SchemeId(SchemeFamily.THETA_EULER, float(argument))
            if name == SchemeFamily.ROSM.value:
                return SchemeId(SchemeFamily.ROSM, float(argument))
        except ValueError as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"Invalid parameter in scheme label '{label}'") from e
        if argument:
            raise ConfigurationError(f"Scheme '{name}' takes no parameter, got '{label}'")
        if name == "erem-krylov":
            return SchemeId(SchemeFamily.EREM, phi_method=PhiMethod.KRYLOV)
        if name == "erem-leja":
            return SchemeId(SchemeFamily.EREM, phi_method=PhiMethod.LEJA)
        if name == SchemeFamily.ROS2.value:
            return SchemeId(SchemeFamily.ROS2)
        if name == SchemeFamily.ROS3P.value:
            return SchemeId(SchemeFamily.ROS3P)
        raise ConfigurationError(f"Unknown scheme '{label}', expected theta:<theta>, erem-krylov, erem-leja, rosm:<gamma>, ros2 or ros3p")

    @property
    def label(self) -> str:
        if self.family in (SchemeFamily.THETA_EULER, SchemeFamily.ROSM):
            return f"{self.family.value}:{self.parameter:g}"
        if self.family is SchemeFamily.EREM:
            return f"erem-{self.phi_method.value}"
        return self.family.value

    @property
    def display_name(self) -> str:
        """
        Legend name used in plots.
        """
        if self.family is SchemeFamily.THETA_EULER:
            return f"Implicit(theta={self.parameter:g})"
        if self.family is SchemeFamily.ROSM:
            return f"ROSM({self.parameter:g})"
        if self.family is SchemeFamily.EREM:
            return "EREMKrylov" if self.phi_method is PhiMethod.KRYLOV else "EREMKLeja"
        return self.tableau.name

    @property
    def tableau(self) -> Optional[RosenbrockTableau]:
        return {SchemeFamily.ROS2: ROS2_1, SchemeFamily.ROS3P: ROS3P}.get(self.family)

    @property
    def order(self) -> int:
        """
        Classical order on smooth problems.
        """
        if self.family is SchemeFamily.THETA_EULER:
            return 2 if self.parameter == 0.5 else 1
        if self.family is SchemeFamily.ROSM:
            return 2 if self.parameter == 0.5 else 1
        if self.family is SchemeFamily.EREM:
            return 2
        return self.tableau.order

    @property
    def has_embedded(self) -> bool:
        return self.tableau is not None


class _SchemeRegistrar:
    """
    A factory for annotations mapping scheme families to functions. `for_scheme` retrieves the function registered for
    a scheme's family.
    """
    name: str
    registry: Dict[SchemeFamily, Callable]

    def __init__(self, name: str) -> None:
        """
        :param name: Name is used for clearer errors
        """
        self.name = name
        self.registry = {}

    def __repr__(self) -> str:
        return self.name

    def __call__(self, *families: SchemeFamily) -> Callable[[Callable], Callable]:
        def inner(wrapped: Callable) -> Callable:
            for family in families:
                previous = self.registry.setdefault(family, wrapped)
                if previous is not wrapped:
                    raise TypeError(f"{self}: family already registered: {family.value}")
            return wrapped

        return inner

    def for_scheme(self, scheme: SchemeId) -> Callable:
        try:
            return self.registry[scheme.family]
        except KeyError:
            raise ConfigurationError(f"{self}: nothing registered for scheme {scheme.label}") from None
