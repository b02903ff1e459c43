import numpy as np

from pygeotherm import ROS2_1, ROS3P, ConfigurationError, RosenbrockTableau, SchemeId, StructuralError
# noinspection PyProtectedMember
from pygeotherm._src.enums import PhiMethod, SchemeFamily
# noinspection PyProtectedMember
from pygeotherm._src.tableaus import _SchemeRegistrar
from test.test_base import TestBase


class TestTableaus(TestBase):
    def test_shapes(self):
        self.assertEqual(2, ROS2_1.stages)
        self.assertEqual(3, ROS3P.stages)
        self.assertEqual(1, ROS2_1.embedded_order)
        self.assertEqual(2, ROS3P.embedded_order)
        self.assertEqual("RosenbrockTableau(ROS3p, 3 stages, order 3)", repr(ROS3P))

    def test_printed_digits(self):
        self.assertEqual("1.707106781186547e+00", f"{ROS2_1.gamma:.15e}")
        self.assertEqual("7.886751345948129e-01", f"{ROS3P.gamma:.15e}")
        self.assertEqual("3.464101615137755e+00", f"{ROS3P.c[2, 0]:.15e}")
        self.assertEqual("2.113248654051871e+00", f"{ROS3P.b_hat[0]:.15e}")

    def test_ros3p_gamma_is_the_closed_form(self):
        self.assertAllClose(0.5 + np.sqrt(3.0) / 6.0, ROS3P.gamma, rtol=1e-15)
        self.assertAllClose(1.0 + 1.0 / np.sqrt(2.0), ROS2_1.gamma, rtol=1e-15)

    def test_invalid_tableau(self):
        self.assertRaises(
            StructuralError("broken: a must be strictly lower triangular and c lower triangular"),
            lambda: RosenbrockTableau("broken", 0.5, [[1.0]], [[0.0]], [0.0], [0.5], [1.0], [1.0], 1)
        )
        self.assertRaises(
            StructuralError("broken: gamma must be positive, got 0.0"),
            lambda: RosenbrockTableau("broken", 0.0, [[0.0]], [[0.0]], [0.0], [0.0], [1.0], [1.0], 1)
        )


class TestSchemeId(TestBase):
    def test_parse_and_label(self):
        for label in ("theta:1", "theta:0.5", "erem-krylov", "erem-leja", "rosm:0.5", "rosm:1", "ros2", "ros3p"):
            self.assertEqual(label, SchemeId.parse(label).label)

    def test_parse_is_case_insensitive(self):
        self.assertEqual(SchemeId(SchemeFamily.EREM, phi_method=PhiMethod.LEJA), SchemeId.parse(" EREM-Leja "))
        self.assertEqual(SchemeId(SchemeFamily.ROS3P), SchemeId.parse("ROS3p"))

    def test_display_names(self):
        self.assertEqual(
            ["Implicit(theta=1)", "Implicit(theta=0.5)", "EREMKrylov", "EREMKLeja", "ROSM(0.5)", "ROS2", "ROS3p"],
            [SchemeId.parse(label).display_name for label in ("theta:1", "theta:0.5", "erem-krylov", "erem-leja", "rosm:0.5", "ros2", "ros3p")]
        )

    def test_orders(self):
        self.assertEqual(
            [1, 2, 2, 1, 2, 2, 3],
            [SchemeId.parse(label).order for label in ("theta:1", "theta:0.5", "erem-krylov", "rosm:1", "rosm:0.5", "ros2", "ros3p")]
        )
        self.assertTrue(SchemeId.parse("ros2").has_embedded)
        self.assertFalse(SchemeId.parse("erem-krylov").has_embedded)

    def test_erem_defaults_to_krylov(self):
        self.assertEqual(PhiMethod.KRYLOV, SchemeId(SchemeFamily.EREM).phi_method)
        self.assertIsNone(SchemeId(SchemeFamily.ROS2, phi_method=PhiMethod.LEJA).phi_method)

    def test_schemes_are_hashable(self):
        self.assertEqual(2, len({SchemeId.parse("theta:1"), SchemeId.parse("theta:1.0"), SchemeId.parse("ros2")}))

    def test_unknown_scheme(self):
        self.assertRaises(
            ConfigurationError("Unknown scheme 'rk4', expected theta:<theta>, erem-krylov, erem-leja, rosm:<gamma>, ros2 or ros3p"),
            lambda: SchemeId.parse("rk4")
        )

    def test_invalid_parameter(self):
        self.assertRaises(
            ConfigurationError("Invalid parameter in scheme label 'theta:half'"),
            lambda: SchemeId.parse("theta:half")
        )

    def test_theta_out_of_range(self):
        self.assertRaises(
            ConfigurationError("theta must lie in [0, 1], got 1.5"),
            lambda: SchemeId.parse("theta:1.5")
        )

    def test_nonpositive_gamma(self):
        self.assertRaises(
            ConfigurationError("ROSM gamma must be positive, got 0.0"),
            lambda: SchemeId.parse("rosm:0")
        )

    def test_unexpected_parameter(self):
        self.assertRaises(
            ConfigurationError("Scheme 'ros2' takes no parameter, got 'ros2:1'"),
            lambda: SchemeId.parse("ros2:1")
        )


class TestSchemeRegistrar(TestBase):
    def test_lookup(self):
        registrar = _SchemeRegistrar("test function")

        @registrar(SchemeFamily.ROS2, SchemeFamily.ROS3P)
        def rosenbrock():
            return "rosenbrock"

        self.assertEqual("rosenbrock", registrar.for_scheme(SchemeId.parse("ros3p"))())

    def test_missing_family(self):
        registrar = _SchemeRegistrar("test function")
        self.assertRaises(
            ConfigurationError("test function: nothing registered for scheme ros2"),
            lambda: registrar.for_scheme(SchemeId.parse("ros2"))
        )

    def test_duplicate_registration(self):
        registrar = _SchemeRegistrar("test function")
        registrar(SchemeFamily.ROS2)(lambda: 1)
        self.assertRaises(
            TypeError("test function: family already registered: ros2"),
            lambda: registrar(SchemeFamily.ROS2)(lambda: 2)
        )
