"""Particle species: magnetic response descriptors, masses, velocity distributions."""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, owens_t

from . import constants


# ---------------------------------------------------------------------------
# hyperfine manifolds

@dataclass(frozen=True)
class HyperfineState:
    F: int
    m_F: int
    mu_z: float  # in Bohr magnetons

    def __post_init__(self):
        if abs(self.m_F) > self.F:
            raise ValueError(f"|m_F| > F in state {self}")


@dataclass(frozen=True)
class HyperfineManifold:
    isotope: str
    states: Tuple[HyperfineState, ...]

    @property
    def N(self) -> int:
        return len(self.states)

    @property
    def moments(self) -> np.ndarray:
        """Projected moments in J/T."""
        return np.array([s.mu_z for s in self.states]) * constants.muB


def _manifold(name, lower_F, upper_F, denom):
    # lower F: mu_z = -m_F/denom, upper F: +m_F/denom (in mu_B)
    states = []
    for F, sign in ((lower_F, -1), (upper_F, 1)):
        for m in range(-F, F + 1):
            states.append(HyperfineState(F, m, float(sign * Fraction(m, denom))))
    return HyperfineManifold(name, tuple(states))


_MANIFOLDS = {
    "cs133": lambda: _manifold("Cs133", 3, 4, 4),
    "rb85": lambda: _manifold("Rb85", 2, 3, 3),
    "rb87": lambda: _manifold("Rb87", 1, 2, 2),
}


def _isotope_key(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    for k in _MANIFOLDS:
        el, num = k[:2], k[2:]
        if key in (k, num + el):
            return k
    raise KeyError(f"unknown isotope {name!r}; known: Cs133, Rb85, Rb87")


def builtin_manifold(isotope: str) -> HyperfineManifold:
    """Weak-field hyperfine substates and moment projections of an alkali isotope."""
    return _MANIFOLDS[_isotope_key(isotope)]()


def asymptote_fraction(manifold: HyperfineManifold) -> float:
    """Fraction of non-magnetic substates, the large-gradient visibility limit."""
    if manifold.N == 0:
        return 0.0
    return sum(1 for s in manifold.states if s.mu_z == 0) / manifold.N


# ---------------------------------------------------------------------------
# rotors

@dataclass(frozen=True)
class RotorSpecies:
    """Rotational g-tensor (principal values) and rotational constants.

    ``A_rot``/``B_rot`` are in cm^-1 at the I/O boundary, like the literature.
    """

    kind: str  # spherical | symmetric-prolate | asymmetric
    g_xx: float
    g_zz: float
    B_rot: Optional[float] = None
    T_rot: Optional[float] = None
    A_rot: Optional[float] = None
    g_yy: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("spherical", "symmetric-prolate", "asymmetric"):
            raise ValueError(f"unknown rotor kind {self.kind!r}")
        if self.kind == "spherical" and self.g_xx != self.g_zz:
            raise ValueError("spherical top requires g_xx == g_zz")
        for name in ("B_rot", "T_rot", "A_rot"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")


C60_ROTOR = RotorSpecies("spherical", -0.0141, -0.0141, B_rot=0.0028, T_rot=870.0)
C70_ROTOR = RotorSpecies("symmetric-prolate", 0.0025, -0.0046, B_rot=0.0019, T_rot=870.0, A_rot=0.0022)
TEMPO_ROTOR = RotorSpecies("asymmetric", -0.0098, -0.0104, g_yy=-0.0039)


def _rot_log_weight(R, B_rot_cm, T):
    x = constants.h * constants.c * B_rot_cm * constants.PER_CM / (constants.kB * T)
    return np.log(2 * R + 1) - x * R * (R + 1)


def r_max(B_rot_cm: float, T: float) -> int:
    """Most populated rotational level for degeneracy 2R+1."""
    if not (B_rot_cm > 0 and T > 0):
        raise ValueError("B_rot and T must be positive")
    x = constants.h * constants.c * B_rot_cm * constants.PER_CM / (constants.kB * T)
    guess = 0.5 * (math.sqrt(2.0 / x) - 1.0)
    lo = max(0, int(math.floor(guess)) - 2)
    cand = np.arange(lo, max(lo, int(math.ceil(guess))) + 3)
    return int(cand[np.argmax(_rot_log_weight(cand, B_rot_cm, T))])


def rotational_distribution(B_rot_cm: float, T: float, tail: float = 1e-12):
    """Levels R and normalized (2R+1)-weighted Boltzmann populations."""
    x = constants.h * constants.c * B_rot_cm * constants.PER_CM / (constants.kB * T)
    R_hi = int(math.sqrt(-math.log(tail) / x)) + 2
    R = np.arange(0, R_hi + 1)
    lw = _rot_log_weight(R, B_rot_cm, T)
    w = np.exp(lw - lw.max())
    return R, w / w.sum()


def mu_rot_projection(M: float, K: float, R: float, rotor: RotorSpecies) -> float:
    """Space-fixed projection of a symmetric top's rotational moment, in nuclear magnetons."""
    if R == 0:
        if K != 0 or M != 0:
            raise ValueError("R = 0 requires K = M = 0")
        return 0.0
    if abs(K) > R or abs(M) > R:
        raise ValueError("|K| and |M| must not exceed R")
    if rotor.kind == "spherical":
        return M * rotor.g_xx
    return M * (rotor.g_xx + (rotor.g_zz - rotor.g_xx) * K * K / (R * (R + 1)))


# ---------------------------------------------------------------------------
# velocity distributions
#
# Each continuous distribution is truncated to v > 0 and renormalized.

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _phi(z):
    return math.exp(-0.5 * z * z) / _SQRT2PI


def _Phi(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@dataclass(frozen=True)
class SkewNormal:
    location: float
    scale: float
    shape: float
    _norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        # untruncated mass on v > 0; F(x) = Phi(z) - 2 T(z, shape)
        z0 = -self.location / self.scale
        norm = 1.0 - (float(ndtr(z0)) - 2.0 * float(owens_t(z0, self.shape)))
        if not norm > 1e-12:
            raise ValueError("skew normal has no appreciable mass at positive velocity")
        object.__setattr__(self, "_norm", norm)

    def pdf_scalar(self, v):
        if v < 0:
            return 0.0
        z = (v - self.location) / self.scale
        return 2.0 / self.scale * _phi(z) * _Phi(self.shape * z) / self._norm

    @property
    def v_cut(self):
        return self.location + 8.0 * self.scale

    def cdf(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        z = (v - self.location) / self.scale
        F = ndtr(z) - 2.0 * owens_t(z, self.shape)
        return (F - (1.0 - self._norm)) / self._norm


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sigma: float
    _norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "_norm", float(ndtr(self.mean / self.sigma)))

    def pdf_scalar(self, v):
        if v < 0:
            return 0.0
        return _phi((v - self.mean) / self.sigma) / self.sigma / self._norm

    @property
    def v_cut(self):
        return self.mean + 8.0 * self.sigma

    def cdf(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        F = ndtr((v - self.mean) / self.sigma) - ndtr(-self.mean / self.sigma)
        return F / self._norm


@dataclass(frozen=True)
class Empirical:
    """Histogram density: ``weights[i]`` is the probability mass in ``[edges[i], edges[i+1])``."""

    edges: Tuple[float, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges, float)
        w = np.asarray(self.weights, float)
        if e.ndim != 1 or len(e) != len(w) + 1 or np.any(np.diff(e) <= 0) or e[0] < 0:
            raise ValueError("edges must be increasing, non-negative, one longer than weights")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive total")
        object.__setattr__(self, "edges", tuple(e.tolist()))
        object.__setattr__(self, "weights", tuple((w / w.sum()).tolist()))

    @property
    def densities(self):
        return np.asarray(self.weights) / np.diff(self.edges)

    def pdf_scalar(self, v):
        e = self.edges
        if v < e[0] or v >= e[-1]:
            return 0.0
        i = int(np.searchsorted(e, v, side="right")) - 1
        return float(self.densities[i])

    @property
    def v_cut(self):
        return self.edges[-1]

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        return np.interp(v, self.edges, cum)


@dataclass(frozen=True)
class Discrete:
    """Finite set of velocities with probabilities (a delta comb)."""

    velocities: Tuple[float, ...]
    weights: Tuple[float, ...] = ()

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.velocities, float))
        w = np.ones_like(v) if len(self.weights) == 0 else np.asarray(self.weights, float)
        if np.any(v <= 0) or len(w) != len(v) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("velocities must be positive with matching non-negative weights")
        object.__setattr__(self, "velocities", tuple(v.tolist()))
        object.__setattr__(self, "weights", tuple((w / w.sum()).tolist()))

    @property
    def v_cut(self):
        return max(self.velocities)


VelocityDistribution = Union[SkewNormal, Gaussian, Empirical, Discrete]


def velocity_pdf(dist: VelocityDistribution, v):
    """Normalized (truncated) density at ``v`` in s/m. Vectorized."""
    if isinstance(dist, Discrete):
        raise TypeError("a discrete distribution has no density")
    v = np.asarray(v, dtype=float)
    if isinstance(dist, SkewNormal):
        z = (v - dist.location) / dist.scale
        out = 2.0 / dist.scale * np.exp(-0.5 * z * z) / _SQRT2PI * ndtr(dist.shape * z) / dist._norm
    elif isinstance(dist, Gaussian):
        z = (v - dist.mean) / dist.sigma
        out = np.exp(-0.5 * z * z) / _SQRT2PI / dist.sigma / dist._norm
    else:
        e = np.asarray(dist.edges)
        idx = np.clip(np.searchsorted(e, v, side="right") - 1, 0, len(dist.weights) - 1)
        out = np.where((v >= e[0]) & (v < e[-1]), dist.densities[idx], 0.0)
    return np.where(v >= 0, out, 0.0)


def velocity_quantile(dist: VelocityDistribution, q: float) -> float:
    """Smallest v with cdf(v) >= q (continuous distributions)."""
    lo, hi = 0.0, dist.v_cut
    if float(dist.cdf(lo)) >= q:
        return 0.0
    return brentq(lambda v: float(dist.cdf(v)) - q, lo, hi, xtol=1e-10, rtol=1e-12)


# ---------------------------------------------------------------------------
# magnetic responses

@dataclass(frozen=True)
class Hyperfine:
    manifold: HyperfineManifold


@dataclass(frozen=True)
class Rotor:
    rotor: RotorSpecies
    R_max: Optional[int] = None  # None: most populated level at rotor.T_rot
    averaging: str = "rmax"  # rmax | boltzmann
    m_mode: str = "continuous"  # continuous | discrete

    def level(self) -> int:
        if self.R_max is not None:
            return int(self.R_max)
        if self.rotor.B_rot is None or self.rotor.T_rot is None:
            raise ValueError("rotor needs B_rot and T_rot (or an explicit R_max)")
        return r_max(self.rotor.B_rot, self.rotor.T_rot)


@dataclass(frozen=True)
class Diamagnetic:
    chi_m: float  # m^3/kg, SI mass susceptibility


@dataclass(frozen=True)
class Magnetized:
    mu_eff: float  # Bohr magnetons, constant effective moment (one-sided)


@dataclass(frozen=True)
class Langevin:
    """Thermal magnetization mu_eff = kappa mu^2 B / (kB T); acts like an induced moment."""

    mu: float  # Bohr magnetons
    temperature: float
    kappa: float = 1.0 / 3.0

    @property
    def alpha(self) -> float:
        """Induced moment per unit field, J/T^2."""
        return self.kappa * (self.mu * constants.muB) ** 2 / (constants.kB * self.temperature)


@dataclass(frozen=True)
class NuclearSpin:
    """Spin-1/2 nucleus in the strong-field limit: two states, +/- mu."""

    mu_nuc: float = 0.702  # nuclear magnetons (13C)
    multiplicity: int = 2

    @property
    def moments(self):
        return np.array([self.mu_nuc, -self.mu_nuc]) * constants.muN


@dataclass(frozen=True)
class ElectronSpin:
    """Unpaired electron in the strong-field limit: m_s = +/-1/2."""

    g: float = 2.00231930436

    @property
    def moments(self):
        mu = 0.5 * self.g * constants.muB
        return np.array([mu, -mu])


@dataclass(frozen=True)
class Composite:
    parts: Tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("composite response needs at least one part")


Response = Union[Hyperfine, Rotor, Diamagnetic, Magnetized, Langevin, NuclearSpin, ElectronSpin, Composite]


@dataclass(frozen=True)
class SpeciesModel:
    name: str
    mass: float  # kg
    response: Response
    velocity: Optional[VelocityDistribution] = None

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    def with_velocity(self, velocity) -> "SpeciesModel":
        return SpeciesModel(self.name, self.mass, self.response, velocity)

    def with_response(self, response) -> "SpeciesModel":
        return SpeciesModel(self.name, self.mass, response, self.velocity)


MASSES_U = {
    "cs133": 132.905,
    "rb85": 84.9118,
    "rb87": 86.9092,
    "tempo": 156.25,
    "c60": 720.00,
    "c70": 840.00,
    "c69c13": 841.00,
}

CS_380 = SkewNormal(290.0, 171.0, 2.1)
CS_270 = SkewNormal(228.0, 118.0, 4.4)
RB_BEAM = SkewNormal(425.0, 220.0, 1.7)
TEMPO_BEAM = Gaussian(694.0, 23.0)


def builtin_species(name: str, velocity: Optional[VelocityDistribution] = None,
                    chi_m: Optional[float] = None, mu_eff: float = 0.1,
                    mu_nuc: float = 0.702) -> SpeciesModel:
    """Species by short name: cs133, rb85, rb87, tempo, c60, c70, c69c13.

    The fullerenes carry no default velocity distribution, and the C70
    susceptibility has no default; both must be supplied by the caller.
    """
    key = name.lower().replace("-", "").replace("_", "")
    if key not in MASSES_U:
        raise KeyError(f"unknown species {name!r}; known: {', '.join(MASSES_U)}")
    mass = MASSES_U[key] * constants.amu
    if key in _MANIFOLDS:
        default_v = CS_380 if key == "cs133" else RB_BEAM
        return SpeciesModel(key, mass, Hyperfine(builtin_manifold(key)), velocity or default_v)
    if key == "tempo":
        return SpeciesModel(key, mass, Magnetized(mu_eff), velocity or TEMPO_BEAM)
    if key == "c60":
        return SpeciesModel(key, mass, Rotor(C60_ROTOR), velocity)
    if chi_m is None:
        raise ValueError(f"{key} needs an explicit mass susceptibility chi_m (m^3/kg)")
    if key == "c70":
        return SpeciesModel(key, mass, Diamagnetic(chi_m), velocity)
    return SpeciesModel(key, mass, Composite((Diamagnetic(chi_m), NuclearSpin(mu_nuc))), velocity)
