# flake8: noqa
# Allows importing externally-facing classes without specifying submodules.
# e.g. "from pygeotherm import run_simulation" instead of "from pygeotherm._src.simulation import run_simulation"
# "import *" does not import names which start with an underscore

from ._src.enums import *
from ._src.exceptions import *
from ._src.fluid import *
from ._src.grid import *
from ._src.integrators import *
from ._src.jacobian import *
from ._src.krylov import *
from ._src.leja import *
from ._src.linalg import *
from ._src.model import *
from ._src.oracles import *
from ._src.phi import *
from ._src.scenario import *
from ._src.selftest import *
from ._src.simulation import *
from ._src.study import *
from ._src.tableaus import *

__version__ = 'dev'  # Version number is managed in the 'release' branch
name = "pygeotherm"
