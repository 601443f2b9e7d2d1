"""Quantity strings such as "0.4 G/m" or "266 nm" converted to SI floats."""

import math
import re

from . import constants

# dimension -> unit -> factor to SI
UNITS = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "G": constants.GAUSS},
    "gradient": {"T/m": 1.0, "G/m": constants.GAUSS, "G/cm": constants.GAUSS * constants.PER_CM,
                 "mT/m": 1e-3},
    "angle": {"rad": 1.0, "deg": constants.DEG},
    "velocity": {"m/s": 1.0},
    "current": {"A": 1.0, "mA": 1e-3},
    "wavenumber": {"cm^-1": 1.0, "1/cm": 1.0},  # kept in cm^-1, the unit of rotational constants
    "temperature": {"K": 1.0},
    "mass": {"u": constants.amu, "kg": 1.0},
    # cgs mass susceptibility (emu: cm^3/g) to SI m^3/kg is a factor 4 pi 1e-3
    "susceptibility": {"m^3/kg": 1.0, "cm^3/g": 4.0 * math.pi * 1e-3},
    "moment_muB": {"muB": 1.0},
    "moment_muN": {"muN": 1.0},
    "dimensionless": {"": 1.0},
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


class UnitError(ValueError):
    pass


def parse_quantity(value, dimension: str) -> float:
    """A number (taken as SI) or a "<number> <unit>" string for ``dimension``."""
    table = UNITS[dimension]
    if isinstance(value, bool):
        raise UnitError(f"expected a {dimension} quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a {dimension} quantity, got {value!r}")
    m = _QTY.match(value)
    if not m:
        raise UnitError(f"cannot parse quantity {value!r}")
    number, unit = float(m.group(1)), m.group(2)
    if unit == "":
        return number
    if unit not in table:
        raise UnitError(f"unit {unit!r} is not a {dimension} unit (allowed: {', '.join(u for u in table if u)})")
    return number * table[unit]
