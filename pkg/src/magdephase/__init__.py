"""Magnetic dephasing of matter-wave interference fringes.

Field solvers for coil assemblies and cuboid magnets, beam-path C-factors,
species response tables, velocity-averaged visibility models and fits.
"""

from .errors import (
    ConfigError, ConvergenceError, DataError, FieldZeroError, InsideBodyError, MagDephaseError,
    SingularityError,
)

__version__ = "0.1.0"
