"""Physical constants (CODATA 2018) and unit factors. Everything is SI."""

import math

mu0 = 1.25663706212e-6  # T m / A
muB = 9.2740100783e-24  # J / T
muN = 5.0507837461e-27  # J / T
kB = 1.380649e-23  # J / K
h = 6.62607015e-34  # J s
c = 2.99792458e8  # m / s
amu = 1.66053906660e-27  # kg

GAUSS = 1e-4  # T
PER_CM = 100.0  # cm^-1 -> m^-1
DEG = math.pi / 180.0
