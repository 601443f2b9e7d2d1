"""Fringe visibility under magnetic dephasing.

Every phase in this module has the form ``phi(v) = omega / v**2`` with a
velocity-independent coefficient ``omega`` (rad m^2/s^2). Velocity averages
are therefore computed in the variable ``u = 1/v**2``, where the phase is
linear, using QUADPACK's Fourier-weighted rules (QAWO on the bulk of the
distribution, QAWF on a slowly decaying low-velocity tail).
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from . import constants
from .beamline import BeamGeometry
from .errors import ConvergenceError
from .species import (
    Composite, Diamagnetic, Discrete, ElectronSpin, Empirical, Hyperfine, Langevin, Magnetized,
    NuclearSpin, Rotor, SpeciesModel, rotational_distribution, velocity_quantile,
)

ABS_TOL = 1e-10
REL_TOL = 1e-8
TAIL_MASS = 1e-13
_LIMIT = 2000


def phase_shift(mu, C_total, v, mass, d):
    """Envelope phase (rad) of a moment ``mu`` (J/T) for a path integral ``C_total`` (T m)."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("velocity must be positive")
    if not (mass > 0 and d > 0):
        raise ValueError("mass and grating period must be positive")
    return 2.0 * np.pi / d * mu * C_total / (mass * v ** 2)


def induced_phase(chi_m, C_induced, v, d):
    """Phase of a diamagnetic/paramagnetic induced moment; the mass cancels."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("velocity must be positive")
    return 2.0 * np.pi / d * chi_m / constants.mu0 * C_induced / v ** 2


# ---------------------------------------------------------------------------
# velocity averages of exp(i omega / v^2) and sinc(omega / v^2)

def _quad(f, a, b, weight, wvar):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if b == np.inf:
            res = integrate.quad(f, a, b, weight=weight, wvar=wvar, epsabs=ABS_TOL,
                                 limlst=200, limit=_LIMIT, full_output=1)
        else:
            res = integrate.quad(f, a, b, weight=weight, wvar=wvar, epsabs=ABS_TOL,
                                 epsrel=REL_TOL, limit=_LIMIT, full_output=1)
    val, err = res[0], res[1]
    if not np.isfinite(val) or err > max(1e-7, 1e-6 * abs(val)):
        raise ConvergenceError(f"velocity quadrature failed (omega={wvar:.4g}, error estimate {err:.3g})")
    return val


@dataclass(frozen=True)
class _Split:
    u_lo: float  # 1/v_cut^2
    u_mid: float  # start of the QAWF tail
    tail: bool


def _split(dist) -> _Split:
    v_cut = dist.v_cut
    v_floor = 0.05 * velocity_quantile(dist, 0.5)
    v_lo = velocity_quantile(dist, TAIL_MASS)
    if v_lo > v_floor:
        return _Split(1.0 / v_cut ** 2, 1.0 / v_lo ** 2, False)
    return _Split(1.0 / v_cut ** 2, 1.0 / v_floor ** 2, True)


def _u_density(dist, amplitude):
    """f(u) = rho(v) A(v) |dv/du| with v = u^(-1/2).

    QAWF occasionally probes u <= 0 at very large omega; the density is zero there.
    """
    pdf = dist.pdf_scalar

    def f(u):
        if u <= 0.0:
            return 0.0
        v = u ** -0.5
        a = 1.0 if amplitude is None else amplitude(v)
        return pdf(v) * a * 0.5 * u ** -1.5
    return f


def _weighted_integral(f, split, omega, weight):
    val = _quad(f, split.u_lo, split.u_mid, weight, omega)
    if split.tail:
        val += _quad(f, split.u_mid, np.inf, weight, omega)
    return val


def _mass(dist, amplitude):
    if isinstance(dist, Discrete):
        v = np.asarray(dist.velocities)
        a = 1.0 if amplitude is None else np.array([amplitude(x) for x in v])
        return float(np.sum(np.asarray(dist.weights) * a))
    if amplitude is None:
        return 1.0
    g = lambda v: dist.pdf_scalar(v) * amplitude(v)
    if isinstance(dist, Empirical):
        e = dist.edges
        return sum(integrate.quad(g, e[i], e[i + 1], epsabs=ABS_TOL, epsrel=REL_TOL)[0]
                   for i in range(len(e) - 1))
    return integrate.quad(g, 0.0, dist.v_cut, epsabs=ABS_TOL, epsrel=REL_TOL, limit=_LIMIT)[0]


def velocity_average_exp(dist, omegas, amplitude: Optional[Callable] = None, imag: bool = True):
    """<A(v) exp(i omega / v^2)> over ``dist`` for each omega (complex array).

    With ``imag=False`` only the real (cosine) part is computed.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    out = np.zeros(omegas.shape, dtype=complex)
    if isinstance(dist, Discrete):
        v = np.asarray(dist.velocities)
        w = np.asarray(dist.weights)
        if amplitude is not None:
            w = w * np.array([amplitude(x) for x in v])
        ph = np.exp(1j * omegas[:, None] / v[None, :] ** 2)
        out = ph @ w
        return out if imag else out.real + 0j
    f = _u_density(dist, amplitude)
    mass = None
    if isinstance(dist, Empirical):
        pieces = [_Split(1.0 / b ** 2, (1.0 / a ** 2) if a > 0 else np.inf, False)
                  for a, b in zip(dist.edges[:-1], dist.edges[1:])]
    else:
        pieces = None
        split = _split(dist)
    for i, om in enumerate(omegas):
        if om == 0.0:
            if mass is None:
                mass = _mass(dist, amplitude)
            out[i] = mass
            continue
        w = abs(om)
        parts = []
        for weight in ("cos", "sin") if imag else ("cos",):
            if pieces is None:
                parts.append(_weighted_integral(f, split, w, weight))
            else:
                parts.append(sum(_quad(f, p.u_lo, p.u_mid, weight, w) for p in pieces))
        re = parts[0]
        im = (parts[1] if om > 0 else -parts[1]) if imag else 0.0
        out[i] = complex(re, im)
    return out


def velocity_average_sinc(dist, omegas, amplitude: Optional[Callable] = None):
    """<A(v) sin(x)/x> with x = omega / v^2 for each omega."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    out = np.zeros(omegas.shape)
    if isinstance(dist, Discrete):
        v = np.asarray(dist.velocities)
        w = np.asarray(dist.weights)
        if amplitude is not None:
            w = w * np.array([amplitude(x) for x in v])
        x = omegas[:, None] / v[None, :] ** 2
        return np.sinc(x / np.pi) @ w
    f = _u_density(dist, amplitude)
    g = lambda u: f(u) / u
    if isinstance(dist, Empirical):
        pieces = [_Split(1.0 / b ** 2, (1.0 / a ** 2) if a > 0 else np.inf, False)
                  for a, b in zip(dist.edges[:-1], dist.edges[1:])]
    else:
        pieces = [_split(dist)]
    for i, om in enumerate(omegas):
        if om == 0.0:
            out[i] = _mass(dist, amplitude)
            continue
        w = abs(om)
        total = 0.0
        for p in pieces:
            total += _quad(g, p.u_lo, p.u_mid, "sin", w)
            if p.tail:
                total += _quad(g, p.u_mid, np.inf, "sin", w)
        out[i] = total / w
    return out


# ---------------------------------------------------------------------------
# rotational M-averages

def rotational_inner(a, R_max, method: str = "closed"):
    """Average of cos(a M) over the projection M in [-R_max, R_max].

    ``closed``: sin(a R)/(a R); ``numeric``: adaptive quadrature of the
    continuous M-integral; ``discrete``: mean over the 2R+1 integer values.
    """
    if R_max <= 0:
        raise ValueError("R_max must be positive")
    if method == "closed":
        x = a * R_max
        return 1.0 if x == 0 else math.sin(x) / x
    if method == "numeric":
        n_osc = abs(a) * R_max / math.pi
        val, _ = integrate.quad(lambda M: math.cos(a * M), 0.0, R_max, epsabs=1e-13 * R_max, epsrel=1e-12,
                                limit=max(200, int(4 * n_osc) + 50))
        return val / R_max
    if method == "discrete":
        M = np.arange(-R_max, R_max + 1)
        return float(np.mean(np.cos(a * M)))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# models

@dataclass(frozen=True)
class PhaseContext:
    """Everything a visibility model needs at one abscissa point.

    ``c_permanent`` (T m) drives permanent moments and is augmented by the
    background term ``c0``; ``c_induced`` (T^2 m) drives induced moments.
    """

    geometry: BeamGeometry
    species: SpeciesModel
    c_permanent: float = 0.0
    c_induced: float = 0.0
    c0: float = 0.0
    amplitude: Optional[Callable] = None

    @property
    def c_total(self) -> float:
        return self.c_permanent + self.c0

    @property
    def k(self) -> float:
        """2 pi / d."""
        return 2.0 * np.pi / self.geometry.d

    def _dist(self):
        if self.species.velocity is None:
            raise ValueError(f"species {self.species.name!r} has no velocity distribution")
        return self.species.velocity


def _omega_one_sided(ctx: PhaseContext, resp) -> float:
    m = ctx.species.mass
    if isinstance(resp, Magnetized):
        return ctx.k * resp.mu_eff * constants.muB * ctx.c_total / m
    if isinstance(resp, Diamagnetic):
        return ctx.k * resp.chi_m / constants.mu0 * ctx.c_induced
    if isinstance(resp, Langevin):
        return ctx.k * resp.alpha * ctx.c_induced / m
    raise TypeError(f"{type(resp).__name__} is not a one-sided response")


def _symmetric_moments(resp):
    if isinstance(resp, Hyperfine):
        return resp.manifold.moments
    if isinstance(resp, (NuclearSpin, ElectronSpin)):
        return resp.moments
    raise TypeError(f"{type(resp).__name__} is not a symmetric response")


def _merge(freqs, weights):
    """Sum the weights of frequencies that agree to 1e-12 relative."""
    scale = np.max(np.abs(freqs)) or 1.0
    _, first, inv = np.unique(np.round(freqs / scale, 12), return_index=True, return_inverse=True)
    return freqs[first], np.bincount(inv.ravel(), weights=weights)


def _symmetric_spectrum(ctx, moments):
    """Cosine sum over equally weighted states as (|omega|, weight) pairs."""
    om = np.abs(ctx.k * np.asarray(moments) * ctx.c_total / ctx.species.mass)
    return _merge(om, np.full(om.size, 1.0 / om.size))


def hyperfine_signed(ctx: PhaseContext) -> float:
    """Velocity-averaged mean of cos(phi) over the states, before the modulus."""
    omegas, weights = _symmetric_spectrum(ctx, _symmetric_moments(ctx.species.response))
    F = velocity_average_exp(ctx._dist(), omegas, ctx.amplitude, imag=False).real
    return float(np.dot(weights, F))


def visibility_hyperfine(ctx: PhaseContext) -> float:
    """Normalized visibility of a symmetric (+/- moment) manifold."""
    return _clip(abs(hyperfine_signed(ctx)))


def visibility_rotational(ctx: PhaseContext, R_max: Optional[int] = None) -> float:
    """Normalized visibility of a spherical top with a continuum of M projections."""
    return _clip(abs(rotational_signed(ctx, R_max)))


def rotational_signed(ctx: PhaseContext, R_max: Optional[int] = None) -> float:
    """Velocity- and M-averaged cos(a M), before the modulus."""
    resp = ctx.species.response
    if not isinstance(resp, Rotor):
        raise TypeError("species response is not a rotor")
    if resp.rotor.kind != "spherical":
        raise ValueError("rotational model implemented for spherical tops only")
    dist = ctx._dist()
    a_coef = ctx.k * resp.rotor.g_xx * constants.muN * ctx.c_total / ctx.species.mass
    if resp.averaging == "boltzmann" and R_max is None:
        levels, pops = rotational_distribution(resp.rotor.B_rot, resp.rotor.T_rot)
        keep = pops > 1e-10 * pops.max()
        levels, pops = levels[keep], pops[keep]
        vals = np.array([_rot_single(dist, a_coef, int(R), resp.m_mode, ctx.amplitude) if R > 0
                         else _mass(dist, ctx.amplitude) for R in levels])
        return float(np.dot(pops / pops.sum(), vals))
    R = resp.level() if R_max is None else int(R_max)
    if R <= 0:
        raise ValueError("R_max must be positive")
    return _rot_single(dist, a_coef, R, resp.m_mode, ctx.amplitude)


def _rot_single(dist, a_coef, R, m_mode, amplitude):
    if m_mode == "continuous":
        return float(velocity_average_sinc(dist, [a_coef * R], amplitude)[0])
    # discrete: mean over integer M of cos(a M); symmetric so pair +/-M
    M = np.arange(1, R + 1)
    F = velocity_average_exp(dist, a_coef * M, amplitude, imag=False).real
    return (_mass(dist, amplitude) + 2.0 * F.sum()) / (2 * R + 1)


def visibility_one_sided(ctx: PhaseContext) -> float:
    """Normalized visibility for a uniform (one-sided) fringe displacement."""
    om = _omega_one_sided(ctx, ctx.species.response)
    F = velocity_average_exp(ctx._dist(), [om], ctx.amplitude)[0]
    return _clip(abs(F))


def _spectrum_of(ctx, part):
    """Signed frequencies and weights whose exponential sum reproduces a part's phase factor."""
    if isinstance(part, (Magnetized, Diamagnetic, Langevin)):
        return np.array([_omega_one_sided(ctx, part)]), np.array([1.0])
    if isinstance(part, (Hyperfine, NuclearSpin, ElectronSpin)):
        om = ctx.k * _symmetric_moments(part) * ctx.c_total / ctx.species.mass
        n = len(om)
        return np.concatenate([om, -om]), np.full(2 * n, 0.5 / n)
    raise TypeError(f"{type(part).__name__} cannot be combined in a composite model")


def visibility_composite(ctx: PhaseContext, parts: Optional[Sequence] = None) -> float:
    """One-sided parts multiply as phases, symmetric parts as cosine averages,
    all inside a single velocity average."""
    if parts is None:
        resp = ctx.species.response
        parts = resp.parts if isinstance(resp, Composite) else (resp,)
    parts = tuple(parts)
    if not parts:
        raise ValueError("composite model needs at least one part")
    freqs, weights = np.array([0.0]), np.array([1.0])
    for part in parts:
        f2, w2 = _spectrum_of(ctx, part)
        freqs = (freqs[:, None] + f2[None, :]).ravel()
        weights = (weights[:, None] * w2[None, :]).ravel()
    f_m, w_m = _merge(freqs, weights)
    F = velocity_average_exp(ctx._dist(), f_m, ctx.amplitude)
    return _clip(abs(np.dot(w_m, F)))


def _model_name(resp, model):
    if model is None:
        if isinstance(resp, (Hyperfine, NuclearSpin, ElectronSpin)):
            model = "hyperfine"
        elif isinstance(resp, Rotor):
            model = "rotational"
        elif isinstance(resp, (Magnetized, Diamagnetic, Langevin)):
            model = "one-sided"
        elif isinstance(resp, Composite):
            model = "composite"
        else:
            raise TypeError(f"no visibility model for response {resp!r}")
    if model == "symmetric":
        model = "hyperfine"
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {MODELS}")
    return model


MODELS = ("hyperfine", "rotational", "one-sided", "composite")


def predict_signed(ctx: PhaseContext, model: Optional[str] = None) -> float:
    """Smooth pre-modulus quantity whose absolute value is the visibility.

    Symmetric and rotational models return the signed average (it changes
    sign where the visibility touches zero); one-sided and composite models
    return the modulus itself.
    """
    model = _model_name(ctx.species.response, model)
    if model == "hyperfine":
        return hyperfine_signed(ctx)
    if model == "rotational":
        return rotational_signed(ctx)
    if model == "one-sided":
        return visibility_one_sided(ctx)
    return visibility_composite(ctx)


def predict(ctx: PhaseContext, model: Optional[str] = None) -> float:
    """Normalized visibility V/V0, dispatching on the species response (or an explicit model)."""
    return _clip(abs(predict_signed(ctx, model)))


def _clip(x):
    return float(min(max(x, 0.0), 1.0))


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class VisibilityCurve:
    abscissa: np.ndarray
    v_over_v0: np.ndarray
    label: str = "current_A"
    model: str = ""
    c_permanent: Optional[np.ndarray] = None
    c_induced: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


def current_scaling(c1_permanent: float, c1_induced: float = 0.0):
    """C-factors at current I from their values at 1 A (loop sources are linear in I)."""
    def c_of(current):
        return current * c1_permanent, current ** 2 * c1_induced
    return c_of


def sweep_curve(species: SpeciesModel, abscissa, c_of: Callable, geometry: BeamGeometry,
                c0: float = 0.0, model: Optional[str] = None, label: str = "current_A",
                amplitude: Optional[Callable] = None, threads: int = 1) -> VisibilityCurve:
    """Evaluate the visibility model at each abscissa value.

    ``c_of(x)`` returns ``(C_permanent, C_induced)`` at abscissa ``x``; for
    coil currents use :func:`current_scaling`, for magnet distances a function
    that repositions the magnet and recomputes both C-factors.
    """
    xs = np.atleast_1d(np.asarray(abscissa, dtype=float))
    if xs.size == 0:
        raise ValueError("empty abscissa")

    def point(x):
        cp, ci = c_of(x)
        ctx = PhaseContext(geometry, species, cp, ci, c0, amplitude)
        return cp, ci, predict(ctx, model)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(point, xs))
    else:
        rows = [point(x) for x in xs]
    rows = np.array(rows, dtype=float).reshape(len(xs), 3)
    return VisibilityCurve(xs, rows[:, 2], label, model or "auto", rows[:, 0], rows[:, 1])
