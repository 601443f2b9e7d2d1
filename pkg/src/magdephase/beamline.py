"""Path integrals of the transverse force along the beam (C-factors).

The deflection accumulated over the force region [0, L1] plus a field-free
drift ``L_drift = L - L1 - L2`` is

    C = int_0^L1 int_0^z' g(z) dz dz' + L_drift int_0^L1 g(z) dz,

where ``g`` is d|B|/dx for a permanent moment (T/m) or (B.grad)B_x for an
induced moment (T^2/m).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import constants
from .errors import ConvergenceError
from .fieldmodel import FieldSource, _grad_bmag_from, field_and_jacobian

KINDS = ("permanent", "induced")


@dataclass(frozen=True)
class BeamGeometry:
    L: float = 0.98
    d: float = 266e-9
    L1: float = 0.30
    L2: float = 0.24

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("grating period d must be positive")
        if min(self.L, self.L1, self.L2) < 0:
            raise ValueError("lengths must be non-negative")
        if self.L1 + self.L2 > self.L * (1 + 1e-12):
            raise ValueError(f"L1 + L2 = {self.L1 + self.L2} exceeds L = {self.L}")

    @property
    def L_drift(self) -> float:
        return self.L - self.L1 - self.L2


# integration lengths used with each source type (coils; magnet, by moment kind)
COIL_GEOMETRY = BeamGeometry(L1=0.30, L2=0.24)
MAGNET_PERMANENT_GEOMETRY = BeamGeometry(L1=0.15, L2=0.32)
MAGNET_INDUCED_GEOMETRY = BeamGeometry(L1=0.06, L2=0.37)


@dataclass(frozen=True)
class Trajectory:
    """Straight line ``entry_point + s * direction``."""

    entry_point: tuple
    direction: tuple
    tilt_deg: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("trajectory direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))
        object.__setattr__(self, "entry_point", tuple(float(x) for x in np.asarray(self.entry_point, float)))

    def points(self, s):
        s = np.asarray(s, dtype=float)
        return np.asarray(self.entry_point) + s[..., None] * np.asarray(self.direction)

    @classmethod
    def centered(cls, center, length, tilt_deg=0.0, beam_axis=(0.0, 0.0, 1.0), tilt_toward=(1.0, 0.0, 0.0)):
        """Trajectory whose midpoint (s = length/2) passes through ``center``.

        The direction is the nominal beam axis rotated by ``tilt_deg`` towards
        ``tilt_toward`` (for the coils: towards the coil axis).
        """
        b = np.asarray(beam_axis, float)
        b /= np.linalg.norm(b)
        t = np.asarray(tilt_toward, float)
        t = t - b * np.dot(t, b)
        t /= np.linalg.norm(t)
        th = tilt_deg * constants.DEG
        direction = np.cos(th) * b + np.sin(th) * t
        entry = np.asarray(center, float) - 0.5 * length * direction
        return cls(tuple(entry), tuple(direction), tilt_deg)


@dataclass(frozen=True)
class Profile:
    s: np.ndarray
    B: np.ndarray
    dBdx: np.ndarray
    b_grad_bx: np.ndarray


@dataclass(frozen=True)
class CFactor:
    kind: str
    value: float
    single_form: float
    L1: float
    L_drift: float
    n_intervals: int
    est_error: float
    converged: bool
    tilt_deg: float = 0.0

    @property
    def gauss_m(self) -> float:
        """Value in G m (permanent) or G^2 m (induced)."""
        return self.value / (constants.GAUSS if self.kind == "permanent" else constants.GAUSS ** 2)


def _integrand(src: FieldSource, traj: Trajectory, kind: str, h: float) -> Callable:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")

    def g(s):
        B, J = field_and_jacobian(src, traj.points(s), h)
        if kind == "permanent":
            return _grad_bmag_from(B, J)[..., 0]
        return np.einsum("...j,...j->...", B, J[..., 0, :])

    return g


def sample_profile(src: FieldSource, traj: Trajectory, n: int, length: float, h: float = 1e-6) -> Profile:
    """Field and both force integrands at ``n`` equally spaced points of [0, length]."""
    if n < 2:
        raise ValueError("need at least two samples")
    s = np.linspace(0.0, length, n)
    B, J = field_and_jacobian(src, traj.points(s), h)
    return Profile(s=s, B=B, dBdx=_grad_bmag_from(B, J)[:, 0],
                   b_grad_bx=np.einsum("ij,ij->i", B, J[:, 0, :]))


def nested_form(s, g, L_drift):
    """The double integral evaluated literally: cumulative inner integral, then outer."""
    inner = cumulative_simpson(g, x=s, initial=0.0)
    return simpson(inner, x=s) + L_drift * simpson(g, x=s)


def single_form(s, g, L1, L_drift):
    """Equivalent weighted single integral of (L1 - z + L_drift) g(z)."""
    return simpson((L1 - s + L_drift) * g, x=s)


def c_factor_from_integrand(g: Callable, geom: BeamGeometry, rel_tol: float = 1e-6,
                            abs_tol: float = 1e-30, n_start: int = 64, max_intervals: int = 2 ** 16,
                            kind: str = "permanent", tilt_deg: float = 0.0) -> CFactor:
    """Integrate a vectorized force integrand ``g(s)`` with successive Simpson refinement.

    Each refinement halves the step and only evaluates the new midpoints.
    """
    if not 0 < rel_tol <= 1e-2:
        raise ValueError("rel_tol must lie in (0, 1e-2]")
    L1, Ld = geom.L1, geom.L_drift
    n = n_start
    s = np.linspace(0.0, L1, n + 1)
    gs = np.asarray(g(s), dtype=float)
    prev = nested_form(s, gs, Ld)
    while True:
        n *= 2
        s_new = np.linspace(0.0, L1, n + 1)
        g_new = np.empty(n + 1)
        g_new[0::2] = gs
        g_new[1::2] = g(s_new[1::2])
        s, gs = s_new, g_new
        cur = nested_form(s, gs, Ld)
        err = abs(cur - prev)
        if err <= rel_tol * abs(cur) or err <= abs_tol:
            return CFactor(kind, float(cur), float(single_form(s, gs, L1, Ld)), L1, Ld, n,
                           float(err), True, tilt_deg)
        if n >= max_intervals:
            raise ConvergenceError(
                f"C-factor did not converge: change {err:.3g} at {n} intervals (value {cur:.6g})")
        prev = cur


def c_factor(src: FieldSource, traj: Trajectory, geom: BeamGeometry, kind: str = "permanent",
             rel_tol: float = 1e-6, h: float = 1e-6) -> CFactor:
    """C-factor of ``src`` along ``traj`` over [0, geom.L1]."""
    return c_factor_from_integrand(_integrand(src, traj, kind, h), geom, rel_tol,
                                   kind=kind, tilt_deg=traj.tilt_deg)


def background_c(geom: BeamGeometry, dB0dx: float) -> float:
    """Phase contribution of a uniform background gradient over the full length L."""
    return geom.L ** 2 * dB0dx


def constant_gradient_c(g0: float, geom: BeamGeometry) -> float:
    """Closed form for a constant integrand over [0, L1]."""
    return g0 * (0.5 * geom.L1 ** 2 + geom.L_drift * geom.L1)
