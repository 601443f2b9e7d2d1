"""Magnetostatic sources: current loops, coil assemblies, cuboid magnets.

All functions accept a single point ``(3,)`` or an array of points ``(..., 3)``
and return fields with the same leading shape. Units are SI throughout
(metres, amperes, tesla).
"""

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np
from scipy.special import ellipe, ellipk, elliprd

from . import constants
from .errors import FieldZeroError, InsideBodyError, SingularityError

Vec3 = Tuple[float, float, float]

# points per chunk when evaluating many points against many loops
_CHUNK = 4096
_FILAMENT_TOL = 1e-9


def _vec(v) -> Vec3:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {v!r}")
    return (float(a[0]), float(a[1]), float(a[2]))


def _unit(v) -> Vec3:
    a = np.asarray(_vec(v))
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("zero-length direction vector")
    return tuple(float(x) for x in a / n)


def _perp_basis(axis):
    """Two unit vectors completing ``axis`` to a right-handed frame."""
    n = np.asarray(axis, dtype=float)
    trial = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - n * np.dot(trial, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


@dataclass(frozen=True)
class CurrentLoop:
    center: Vec3
    axis: Vec3
    radius: float
    current: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "axis", _unit(self.axis))
        if not self.radius > 0:
            raise ValueError("loop radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "current", float(self.current))


@dataclass(frozen=True)
class CoilAssemblySpec:
    """Two multilayer coils sharing one axis.

    Layers stack radially outward from ``nominal_radius``; the turns of a
    layer sit side by side along the axis, centred on the coil plane.
    """

    nominal_radius: float = 0.04
    wire_diameter: float = 2e-3
    turns_per_layer: int = 13
    layers: int = 4
    center_separation: float = 0.07
    axis: Vec3 = (1.0, 0.0, 0.0)
    current: float = 1.0
    polarity: str = "anti-helmholtz"
    center: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.polarity not in ("anti-helmholtz", "helmholtz"):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if self.turns_per_layer < 1 or self.layers < 1:
            raise ValueError("turns_per_layer and layers must be >= 1")
        if not (self.nominal_radius > 0 and self.wire_diameter > 0 and self.center_separation > 0):
            raise ValueError("coil dimensions must be positive")
        object.__setattr__(self, "axis", _unit(self.axis))
        object.__setattr__(self, "center", _vec(self.center))

    @property
    def turns_per_coil(self) -> int:
        return self.turns_per_layer * self.layers


@dataclass(frozen=True)
class CuboidMagnet:
    """Uniformly magnetized cuboid.

    ``magnetization`` is mu0*M in tesla, given in the lab frame.
    ``orientation`` is the 3x3 rotation taking body-frame vectors to the lab
    frame (identity by default); ``half_extents`` are along the body axes.
    """

    center: Vec3
    half_extents: Vec3
    magnetization: Vec3
    orientation: Tuple[Vec3, Vec3, Vec3] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "half_extents", _vec(self.half_extents))
        object.__setattr__(self, "magnetization", _vec(self.magnetization))
        if min(self.half_extents) <= 0:
            raise ValueError("half extents must be positive")
        R = np.asarray(self.orientation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-10):
            raise ValueError("orientation must be a 3x3 rotation matrix")
        object.__setattr__(self, "orientation", tuple(tuple(float(x) for x in row) for row in R))

    @property
    def volume(self) -> float:
        a, b, c = self.half_extents
        return 8.0 * a * b * c


@dataclass(frozen=True)
class FieldSource:
    """Superposition of loops, cuboid magnets and a uniform background."""

    loops: Tuple[CurrentLoop, ...] = ()
    cuboids: Tuple[CuboidMagnet, ...] = ()
    background: Vec3 = (0.0, 0.0, 0.0)
    loop_method: str = dc_field(default="elliptic", compare=False)
    n_segments: int = dc_field(default=256, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "loops", tuple(self.loops))
        object.__setattr__(self, "cuboids", tuple(self.cuboids))
        object.__setattr__(self, "background", _vec(self.background))
        if self.loop_method not in ("elliptic", "segments"):
            raise ValueError(f"unknown loop method {self.loop_method!r}")

    def __add__(self, other: "FieldSource") -> "FieldSource":
        bg = tuple(a + b for a, b in zip(self.background, other.background))
        return FieldSource(self.loops + other.loops, self.cuboids + other.cuboids, bg,
                           self.loop_method, self.n_segments)

    def scaled_current(self, k: float) -> "FieldSource":
        """Same geometry with every loop current multiplied by ``k``."""
        loops = tuple(CurrentLoop(l.center, l.axis, l.radius, k * l.current) for l in self.loops)
        return FieldSource(loops, self.cuboids, self.background, self.loop_method, self.n_segments)

    @cached_property
    def _packed(self):
        if not self.loops:
            return None
        return (
            np.array([l.center for l in self.loops]),
            np.array([l.axis for l in self.loops]),
            np.array([l.radius for l in self.loops]),
            np.array([l.current for l in self.loops]),
        )


# ---------------------------------------------------------------------------
# current loops

def _loops_elliptic(centers, axes, radii, currents, pts):
    """Exact loop fields summed over loops. pts: (P, 3)."""
    rel = pts[:, None, :] - centers[None, :, :]
    z = np.einsum("plk,lk->pl", rel, axes)
    rvec = rel - z[..., None] * axes[None, :, :]
    rho = np.linalg.norm(rvec, axis=-1)
    a = radii[None, :]
    alpha2 = (a - rho) ** 2 + z ** 2
    if np.any(alpha2 < _FILAMENT_TOL ** 2):
        raise SingularityError("evaluation point lies on a current filament")
    beta2 = (a + rho) ** 2 + z ** 2
    beta = np.sqrt(beta2)
    m = 4.0 * a * rho / beta2
    K = ellipk(m)
    E = ellipe(m)
    RD = elliprd(0.0, 1.0 - m, 1.0)
    pref = constants.mu0 * currents[None, :] / (2.0 * np.pi * beta)
    bz = pref * (K + (a ** 2 - rho ** 2 - z ** 2) / alpha2 * E)
    # radial bracket rewritten via K - E = (m/3) R_D so that it stays accurate as rho -> 0
    brho = pref * z * a * (2.0 * E / alpha2 - 4.0 * RD / (3.0 * beta2))
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = np.where(rho[..., None] > 0, rvec / rho[..., None], 0.0)
    B = bz[..., None] * axes[None, :, :] + brho[..., None] * rhat
    return B.sum(axis=1)


def _loops_segments(centers, axes, radii, currents, pts, n):
    """Biot-Savart line integral, periodic trapezoid rule with n nodes per loop."""
    theta = 2.0 * np.pi * np.arange(n) / n
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    total = np.zeros_like(pts)
    for c, ax, a, I in zip(centers, axes, radii, currents):
        e1, e2 = _perp_basis(ax)
        src = c + a * (np.outer(cos_t, e1) + np.outer(sin_t, e2))  # (n, 3)
        dl = (2.0 * np.pi * a / n) * (np.outer(-sin_t, e1) + np.outer(cos_t, e2))
        r = pts[:, None, :] - src[None, :, :]
        r3 = np.linalg.norm(r, axis=-1) ** 3
        if np.any(r3 < _FILAMENT_TOL ** 3):
            raise SingularityError("evaluation point lies on a current filament")
        total += constants.mu0 * I / (4.0 * np.pi) * np.sum(np.cross(dl[None, :, :], r) / r3[..., None], axis=1)
    return total


def _eval_loops(packed, pts, method, n_segments):
    out = np.empty_like(pts)
    for s in range(0, len(pts), _CHUNK):
        chunk = pts[s:s + _CHUNK]
        if method == "elliptic":
            out[s:s + _CHUNK] = _loops_elliptic(*packed, chunk)
        else:
            out[s:s + _CHUNK] = _loops_segments(*packed, chunk, n_segments)
    return out


def loop_field(loop: CurrentLoop, p, method: str = "elliptic", n_segments: int = 256):
    """Field of a single circular loop at ``p``."""
    pts, shape = _as_points(p)
    packed = (np.array([loop.center]), np.array([loop.axis]),
              np.array([loop.radius]), np.array([loop.current]))
    if method not in ("elliptic", "segments"):
        raise ValueError(f"unknown loop method {method!r}")
    return _eval_loops(packed, pts, method, n_segments).reshape(shape)


def build_anti_helmholtz(spec: CoilAssemblySpec) -> FieldSource:
    """Expand a coil-pair description into individual loops."""
    axis = np.asarray(spec.axis)
    center = np.asarray(spec.center)
    half_sep = 0.5 * spec.center_separation
    turn_offsets = (np.arange(spec.turns_per_layer) - 0.5 * (spec.turns_per_layer - 1)) * spec.wire_diameter
    loops = []
    for side in (-1.0, 1.0):
        sign = side if spec.polarity == "anti-helmholtz" else 1.0
        plane = center + side * half_sep * axis
        for k in range(spec.layers):
            radius = spec.nominal_radius + (k + 0.5) * spec.wire_diameter
            for off in turn_offsets:
                loops.append(CurrentLoop(tuple(plane + off * axis), spec.axis, radius, sign * spec.current))
    return FieldSource(loops=tuple(loops))


# ---------------------------------------------------------------------------
# cuboid magnets

def _pair_log(Y1, Y2, R1, R2, rho2):
    """ln(Y1 + R1) - ln(Y2 + R2) for Y1 > Y2, free of cancellation for negative Y."""
    with np.errstate(divide="ignore", invalid="ignore"):
        both_pos = np.log(Y1 + R1) - np.log(Y2 + R2)
        both_neg = np.log(R2 - Y2) - np.log(R1 - Y1)
        mixed = np.log(Y1 + R1) + np.log(R2 - Y2) - np.log(rho2)
    return np.where(Y2 >= 0, both_pos, np.where(Y1 <= 0, both_neg, mixed))


def _cuboid_z_magnetized(x, y, z, a, b, c):
    """Field per unit mu0*M of a cuboid magnetized along +z (body frame).

    Surface-charge model: charge +M on z=+c, -M on z=-c, each face integrated
    in closed form over its four corners.
    """
    bx = np.zeros_like(x)
    by = np.zeros_like(x)
    bz = np.zeros_like(x)
    X1, X2 = x + a, x - a
    Y1, Y2 = y + b, y - b
    for zk, sk in ((c, 1.0), (-c, -1.0)):
        Z = z - zk
        # arctan terms
        acc = np.zeros_like(x)
        for X, sx in ((X1, 1.0), (X2, -1.0)):
            for Y, sy in ((Y1, 1.0), (Y2, -1.0)):
                R = np.sqrt(X * X + Y * Y + Z * Z)
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.arctan(X * Y / (Z * R))
                acc += sx * sy * np.nan_to_num(t, nan=0.0)
        bz += sk * acc
        # x: -sum_i s_i [ln(Y1+R) - ln(Y2+R)]; y: same with roles swapped
        for X, sx in ((X1, 1.0), (X2, -1.0)):
            R1 = np.sqrt(X * X + Y1 * Y1 + Z * Z)
            R2 = np.sqrt(X * X + Y2 * Y2 + Z * Z)
            bx -= sk * sx * _pair_log(Y1, Y2, R1, R2, X * X + Z * Z)
        for Y, sy in ((Y1, 1.0), (Y2, -1.0)):
            R1 = np.sqrt(X1 * X1 + Y * Y + Z * Z)
            R2 = np.sqrt(X2 * X2 + Y * Y + Z * Z)
            by -= sk * sy * _pair_log(X1, X2, R1, R2, Y * Y + Z * Z)
    return np.stack([bx, by, bz], axis=-1) / (4.0 * np.pi)


_AXIS_PERMS = {
    # magnetization axis -> permutation mapping (x, y, z) of the z-magnetized solution
    0: (1, 2, 0),
    1: (2, 0, 1),
    2: (0, 1, 2),
}


def cuboid_field(m: CuboidMagnet, p, allow_inside: bool = False, surface_tol: float = 1e-12):
    """Analytic field of a uniformly magnetized cuboid at ``p`` (outside the body)."""
    pts, shape = _as_points(p)
    R = np.asarray(m.orientation)
    rel = (pts - np.asarray(m.center)) @ R  # body-frame coordinates
    half = np.asarray(m.half_extents)
    inside = np.all(np.abs(rel) < half - surface_tol, axis=-1)
    if np.any(inside) and not allow_inside:
        raise InsideBodyError("evaluation point inside magnet body")
    M_body = R.T @ np.asarray(m.magnetization)
    B = np.zeros_like(rel)
    for ax in range(3):
        if M_body[ax] == 0.0:
            continue
        # rotate coordinates so that the magnetization axis becomes the local z
        i, j, k = _AXIS_PERMS[ax]
        local = _cuboid_z_magnetized(rel[:, i], rel[:, j], rel[:, k], half[i], half[j], half[k])
        contrib = np.empty_like(local)
        contrib[:, i] = local[:, 0]
        contrib[:, j] = local[:, 1]
        contrib[:, k] = local[:, 2]
        B += M_body[ax] * contrib
    return (B @ R.T).reshape(shape)


# ---------------------------------------------------------------------------
# composite evaluation and derivatives

def _as_points(p):
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != 3:
        raise ValueError("points must have a trailing dimension of 3")
    return arr.reshape(-1, 3), arr.shape


def field(src: FieldSource, p):
    """Total field of ``src`` at ``p``."""
    pts, shape = _as_points(p)
    B = np.broadcast_to(np.asarray(src.background), pts.shape).copy()
    if src.loops:
        B += _eval_loops(src._packed, pts, src.loop_method, src.n_segments)
    for cub in src.cuboids:
        B += cuboid_field(cub, pts)
    return B.reshape(shape)


def field_jacobian(src: FieldSource, p, h: float = 1e-6):
    """Central-difference Jacobian ``J[..., i, j] = dB_i/dx_j`` in T/m."""
    if not h > 0:
        raise ValueError("step h must be positive")
    pts, shape = _as_points(p)
    steps = h * np.eye(3)
    stencil = np.concatenate([pts[:, None, :] + steps[None], pts[:, None, :] - steps[None]], axis=1)
    B = field(src, stencil.reshape(-1, 3)).reshape(len(pts), 6, 3)
    J = (B[:, :3, :] - B[:, 3:, :]) / (2.0 * h)  # [point, j, i]
    return np.swapaxes(J, 1, 2).reshape(shape[:-1] + (3, 3))


def field_and_jacobian(src: FieldSource, p, h: float = 1e-6):
    return field(src, p), field_jacobian(src, p, h)


def grad_bmag(src: FieldSource, p, h: float = 1e-6, zero_tol: float = 1e-12):
    """Gradient of the field magnitude, ``J^T B_hat``."""
    B, J = field_and_jacobian(src, p, h)
    return _grad_bmag_from(B, J, zero_tol)


def _grad_bmag_from(B, J, zero_tol=1e-12):
    mag = np.linalg.norm(B, axis=-1)
    # a field that vanishes together with its Jacobian is zero in a neighbourhood
    null = (mag == 0) & np.all(J == 0, axis=(-2, -1))
    if np.any((mag <= zero_tol) & ~null):
        raise FieldZeroError("|B| vanishes; gradient of the magnitude is undefined")
    with np.errstate(invalid="ignore", divide="ignore"):
        bhat = np.where(null[..., None], 0.0, B / mag[..., None])
    return np.einsum("...ij,...i->...j", J, bhat)


def b_dot_grad_bx(src: FieldSource, p, h: float = 1e-6):
    """``(B . grad) B_x`` in T^2/m."""
    B, J = field_and_jacobian(src, p, h)
    return np.einsum("...j,...j->...", B, J[..., 0, :])


def dipole_field(moment, position, p):
    """Point-dipole field (moment in A m^2); used as a far-field reference."""
    pts, shape = _as_points(p)
    r = pts - np.asarray(position, dtype=float)
    rn = np.linalg.norm(r, axis=-1, keepdims=True)
    rhat = r / rn
    m = np.asarray(moment, dtype=float)
    B = constants.mu0 / (4.0 * np.pi) * (3.0 * rhat * (rhat @ m)[:, None] - m) / rn ** 3
    return B.reshape(shape)


def sources_from(items: Sequence) -> FieldSource:
    """Convenience: build a source from a mixed list of loops and cuboids."""
    loops = tuple(i for i in items if isinstance(i, CurrentLoop))
    cubs = tuple(i for i in items if isinstance(i, CuboidMagnet))
    return FieldSource(loops, cubs)
