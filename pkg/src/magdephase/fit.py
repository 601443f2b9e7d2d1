"""Fringe-scan fits, asymptote normalization and visibility-parameter fits."""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares, minimize

from . import constants
from .beamline import BeamGeometry, background_c
from .errors import ConvergenceError, DataError
from .species import (
    Composite, Diamagnetic, ElectronSpin, HyperfineManifold, Hyperfine, Langevin, Magnetized,
    NuclearSpin, Rotor, SpeciesModel, asymptote_fraction,
)
from .visibility import PhaseContext, predict, predict_signed

BISQUARE_C = 4.685
MAD_NORMAL = 0.6745


# ---------------------------------------------------------------------------
# fringe scans

@dataclass(frozen=True)
class FringeScan:
    positions: np.ndarray  # m
    counts: np.ndarray
    dark_rate: float = 0.0
    period: float = 266e-9

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        y = np.asarray(self.counts, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise DataError("positions and counts must be 1-d arrays of equal length")
        if np.any(y < 0):
            raise DataError("counts must be non-negative")
        if not self.period > 0:
            raise DataError("period must be positive")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "counts", y)


@dataclass(frozen=True)
class FringeFitResult:
    offset: float
    amplitude: float
    phase: float
    visibility: float
    stderr: Dict[str, float]
    weights: np.ndarray
    n_iter: int
    converged: bool
    clamped: bool = False


def _design(x, period):
    k = 2.0 * np.pi / period
    return np.column_stack([np.ones_like(x), np.sin(k * x), np.cos(k * x)])


def _bisquare(r, level, tune=BISQUARE_C):
    """Tukey weights; residuals below 1e-9 of the signal ``level`` count as an exact fit.

    The scale is the median absolute residual (not centred on the median
    residual: an outlier-biased start shifts every inlier residual alike).
    """
    s = np.median(np.abs(r)) / MAD_NORMAL
    floor = 1e-9 * max(level, np.finfo(float).tiny)
    u = r / (tune * max(s, floor))
    return np.where(np.abs(u) < 1.0, (1.0 - u ** 2) ** 2, 0.0)


def fit_fringe(scan: FringeScan, robust: bool = True, max_iter: int = 50,
               tol: float = 1e-8) -> FringeFitResult:
    """Fit ``c + a sin(2 pi x/d + theta)`` to dark-subtracted counts.

    The model is linear in (c, a cos theta, a sin theta); the robust variant
    iterates bisquare-weighted least squares until no weight moves by more
    than ``tol``.
    """
    x, y = scan.positions, scan.counts - scan.dark_rate
    n = x.size
    if n < 6:
        raise DataError(f"need at least 6 points, got {n}")
    span = np.ptp(x) * n / (n - 1)
    if span < scan.period * (1 - 1e-9):
        raise DataError("scan must span at least one grating period")
    X = _design(x, scan.period)
    if np.linalg.matrix_rank(X) < 3:
        raise DataError("rank-deficient fringe design (positions degenerate)")

    w = np.ones(n)
    converged = not robust
    it = 0
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    level = float(np.max(np.abs(y)))
    if robust:
        for it in range(1, max_iter + 1):
            w_new = _bisquare(y - X @ beta, level)
            if np.count_nonzero(w_new) < 3:
                raise ConvergenceError("bisquare weights rejected almost all points")
            sw = np.sqrt(w_new)
            beta = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
            change = np.max(np.abs(w_new - w))
            w = w_new
            if change < tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(f"bisquare IRLS did not settle in {max_iter} iterations")

    c, s_coef, c_coef = beta
    amp = float(np.hypot(s_coef, c_coef))
    theta = float(np.arctan2(c_coef, s_coef))

    r = y - X @ beta
    dof = max(np.count_nonzero(w) - 3, 1)
    sigma2 = float(np.sum(w * r ** 2) / dof)
    XtWX = X.T @ (X * w[:, None])
    cov = sigma2 * np.linalg.inv(XtWX)
    # propagate to (offset, amplitude, phase, visibility)
    if amp > 0:
        ja = np.array([0.0, s_coef / amp, c_coef / amp])
        jt = np.array([0.0, -c_coef / amp ** 2, s_coef / amp ** 2])
    else:
        ja = jt = np.zeros(3)
    if c != 0:
        vis = amp / c
        jv = ja / c - np.array([amp / c ** 2, 0.0, 0.0])
    else:
        vis, jv = np.nan, np.zeros(3)
    err = {
        "offset": float(np.sqrt(cov[0, 0])),
        "amplitude": float(np.sqrt(ja @ cov @ ja)),
        "phase": float(np.sqrt(jt @ cov @ jt)),
        "visibility": float(np.sqrt(jv @ cov @ jv)),
    }
    clamped = not (0.0 <= vis <= 1.0)
    vis_out = float(min(max(vis, 0.0), 1.0)) if np.isfinite(vis) else 0.0
    return FringeFitResult(float(c), amp, theta, vis_out, err, w, it, converged, clamped)


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class Dataset:
    abscissa: np.ndarray
    visibility: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)
    sigma_defaulted: bool = False

    def __post_init__(self):
        a = np.asarray(self.abscissa, dtype=float)
        v = np.asarray(self.visibility, dtype=float)
        s = np.asarray(self.sigma, dtype=float)
        if not (a.ndim == v.ndim == s.ndim == 1 and a.size == v.size == s.size):
            raise DataError("abscissa, visibility and sigma must have equal length")
        if np.any(~np.isfinite(a)) or np.any(~np.isfinite(v)):
            raise DataError("non-finite values in dataset")
        if np.any(~(s > 0)):
            raise DataError("sigma must be positive")
        object.__setattr__(self, "abscissa", a)
        object.__setattr__(self, "visibility", v)
        object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.abscissa.size

    def scaled(self, k: float) -> "Dataset":
        return replace(self, visibility=self.visibility * k, sigma=self.sigma * abs(k))


def normalize_to_asymptote(data: Dataset, N, window: Tuple[float, float]) -> Tuple[float, Dataset]:
    """V0 = N * mean(V in window) / 2 and the dataset divided by V0.

    ``N`` is a state count or a manifold; a manifold must have exactly two
    non-magnetic states, which is what the factor 2 assumes.
    """
    if isinstance(N, HyperfineManifold):
        n_zero = round(asymptote_fraction(N) * N.N)
        if n_zero != 2:
            raise ValueError(f"{N.isotope} has {n_zero} zero-moment states; the normalization assumes 2")
        N = N.N
    lo, hi = sorted(window)
    sel = (data.abscissa >= lo) & (data.abscissa <= hi)
    if not np.any(sel):
        raise DataError(f"no data points in asymptote window [{lo}, {hi}]")
    mean = float(np.mean(data.visibility[sel]))
    if not mean > 0:
        raise DataError("asymptote window mean is not positive; cannot normalize")
    V0 = N * mean / 2.0
    return V0, data.scaled(1.0 / V0)


# ---------------------------------------------------------------------------
# visibility-parameter fits

PARAMS = ("C0_gradient", "mu_eff", "V0", "chi_m")
# internal optimizer units: G/m, mu_B, 1, 1e-9 m^3/kg
_UNIT = {"C0_gradient": constants.GAUSS, "mu_eff": 1.0, "V0": 1.0, "chi_m": 1e-9}
_DEFAULT_BOUNDS = {
    "C0_gradient": (-1e-2, 1e-2),  # T/m
    "mu_eff": (0.0, 100.0),
    "V0": (0.0, 100.0),
    "chi_m": (-1e-5, 1e-5),
}


@dataclass(frozen=True)
class ModelSpec:
    """Forward model V(x) = V0 * (V/V0)(C(x)) for a fit.

    ``c_of(x)`` gives (C_permanent, C_induced) at abscissa ``x``; the
    background gradient contributes ``c0_length**2 * C0_gradient`` to the
    permanent C (``c0_length`` defaults to the geometry's L).
    """

    species: SpeciesModel
    geometry: BeamGeometry
    c_of: Callable
    model: Optional[str] = None
    C0_gradient: float = 0.0
    V0: float = 1.0
    amplitude: Optional[Callable] = None
    c0_length: Optional[float] = None


def _with_params(spec: ModelSpec, p: Dict[str, float]) -> Tuple[SpeciesModel, float, float]:
    sp = spec.species
    resp = sp.response
    if "mu_eff" in p:
        resp = _replace_part(resp, Magnetized, lambda r: Magnetized(p["mu_eff"]), "mu_eff")
    if "chi_m" in p:
        resp = _replace_part(resp, Diamagnetic, lambda r: Diamagnetic(p["chi_m"]), "chi_m")
    return sp.with_response(resp), p.get("C0_gradient", spec.C0_gradient), p.get("V0", spec.V0)


def _replace_part(resp, cls, make, name):
    if isinstance(resp, cls):
        return make(resp)
    if isinstance(resp, Composite) and any(isinstance(q, cls) for q in resp.parts):
        return Composite(tuple(make(q) if isinstance(q, cls) else q for q in resp.parts))
    raise ValueError(f"parameter {name} is not defined for response {type(resp).__name__}")


def _c0(spec, gradient):
    L = spec.geometry.L if spec.c0_length is None else spec.c0_length
    return background_c(replace(spec.geometry, L=L, L1=0.0, L2=0.0), gradient)


def direct_model(spec: ModelSpec, x, params: Dict[str, float]) -> np.ndarray:
    """Evaluate the forward model point by point with the full velocity quadrature."""
    sp, g0, V0 = _with_params(spec, params)
    c0 = _c0(spec, g0)
    out = []
    for xi in np.atleast_1d(x):
        cp, ci = spec.c_of(xi)
        out.append(predict(PhaseContext(spec.geometry, sp, cp, ci, c0, spec.amplitude), spec.model))
    return V0 * np.asarray(out)


class TabulatedModel:
    """Spline table of V/V0 against a single phase argument ``t``.

    The smooth pre-modulus value is tabulated (the modulus has kinks at
    visibility zeros). Valid when every parameter enters through one scalar
    per point:
    t = C_permanent + C0 (symmetric responses and rotors),
    t = mu_eff (C_permanent + C0) (Magnetized) or t = chi_m C_induced
    (Diamagnetic). V/V0 is even in t, so the table covers [0, t_max] and
    is rebuilt on a wider range when a query falls outside it. Nodes are
    uniform in sqrt(t).
    """

    def __init__(self, spec: ModelSpec, t_max: float, tol: float = 1e-7, n_start: int = 128,
                 max_nodes: int = 1 << 14):
        resp = spec.species.response
        if isinstance(resp, (Hyperfine, NuclearSpin, ElectronSpin, Rotor)):
            self.kind = "permanent"
        elif isinstance(resp, Magnetized):
            self.kind = "magnetized"
        elif isinstance(resp, Diamagnetic):
            self.kind = "diamagnetic"
        else:
            raise ValueError(f"response {type(resp).__name__} cannot be tabulated in one variable")
        self.spec = spec
        self.tol = tol
        self.n_start = n_start
        self.max_nodes = max_nodes
        self._build(abs(t_max))

    def _unit_species(self):
        sp = self.spec.species
        if self.kind == "magnetized":
            return sp.with_response(Magnetized(1.0))
        if self.kind == "diamagnetic":
            return sp.with_response(Diamagnetic(1.0))
        return sp

    def exact(self, t):
        """Pre-modulus model value at each t, by direct quadrature."""
        sp = self._unit_species()
        geo, amp, model = self.spec.geometry, self.spec.amplitude, self.spec.model
        out = []
        for ti in np.atleast_1d(t):
            if self.kind == "diamagnetic":
                ctx = PhaseContext(geo, sp, 0.0, float(ti), 0.0, amp)
            else:
                ctx = PhaseContext(geo, sp, float(ti), 0.0, 0.0, amp)
            out.append(predict_signed(ctx, model))
        return np.asarray(out)

    def _build(self, t_max):
        # densities with rho(0) > 0 make 1 - S(t) ~ sqrt(t); S is smooth in s = sqrt(t)
        if t_max == 0:
            t_max = 1e-12
        n = self.n_start
        s = np.linspace(0.0, np.sqrt(t_max), n + 1)
        y = self.exact(s ** 2)
        while True:
            spl = CubicSpline(s, y)
            mid = 0.5 * (s[1:] + s[:-1])
            y_mid = self.exact(mid ** 2)
            err = float(np.max(np.abs(spl(mid) - y_mid)))
            s2 = np.empty(2 * n + 1)
            y2 = np.empty(2 * n + 1)
            s2[0::2], s2[1::2] = s, mid
            y2[0::2], y2[1::2] = y, y_mid
            s, y, n = s2, y2, 2 * n
            if err < self.tol:
                break
            if n > self.max_nodes:
                raise ConvergenceError(f"visibility table did not reach {self.tol:g} (error {err:.3g})")
        self.t_max = t_max
        self.max_error = err
        self._spline = CubicSpline(s, y)

    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if t.size and t.max() > self.t_max:
            self._build(2.0 * t.max())
        return np.clip(np.abs(self._spline(np.sqrt(t))), 0.0, 1.0)

    def argument(self, c_perm, c_ind, params: Dict[str, float]):
        return self.argument_for(self.spec, c_perm, c_ind, params)

    @staticmethod
    def argument_for(spec: ModelSpec, c_perm, c_ind, params: Dict[str, float]):
        """Phase argument t at each point for the given parameter values."""
        sp, g0, _ = _with_params(spec, params)
        resp = sp.response
        if isinstance(resp, Diamagnetic):
            return resp.chi_m * np.asarray(c_ind)
        total = np.asarray(c_perm) + _c0(spec, g0)
        if isinstance(resp, Magnetized):
            return resp.mu_eff * total
        return total


@dataclass
class FitResult:
    values: Dict[str, float]
    stderr: Dict[str, float]
    covariance: np.ndarray
    chi2: float
    reduced_chi2: float
    dof: int
    n_eval: int
    converged: bool
    method: str
    chi2_history: list = field(default_factory=list)
    residuals: Optional[np.ndarray] = None
    model_values: Optional[np.ndarray] = None


def _seed(name, data: Dataset, spec: ModelSpec):
    if name == "C0_gradient":
        return 0.0
    if name == "mu_eff":
        return 0.05
    if name == "V0":
        return float(np.max(data.visibility))
    r = spec.species.response
    parts = r.parts if isinstance(r, Composite) else (r,)
    for q in parts:
        if isinstance(q, Diamagnetic):
            return q.chi_m
    return -1e-8


def fit_visibility_params(data: Dataset, spec: ModelSpec, free: Sequence[str] = ("C0_gradient",),
                          method: str = "nelder-mead", initial: Optional[Dict[str, float]] = None,
                          bounds: Optional[Dict[str, Tuple[float, float]]] = None,
                          tabulate: Optional[bool] = None, table: Optional["TabulatedModel"] = None,
                          max_eval: int = 4000,
                          xatol: float = 1e-7, fatol: float = 1e-9) -> FitResult:
    """Least-squares fit of selected model parameters to a visibility dataset.

    Minimizes sum(((V_model - V)/sigma)^2). Seeds: C0 gradient 0, mu_eff
    0.05 mu_B, V0 the largest data value, chi_m the species value. The
    covariance is (J^T J)^-1 of the sigma-weighted residual Jacobian at the
    optimum (absolute sigma, not rescaled by the reduced chi^2).

    Single-argument responses are evaluated through a :class:`TabulatedModel`
    (built here, or passed in as ``table`` to share it between fits).
    """
    free = tuple(free)
    for name in free:
        if name not in PARAMS:
            raise ValueError(f"unknown parameter {name!r}; choose from {PARAMS}")
    if len(set(free)) != len(free):
        raise ValueError("duplicate free parameters")
    if len(data) < len(free) + 1:
        raise DataError(f"need at least {len(free) + 1} points for {len(free)} free parameters")
    if method not in ("nelder-mead", "gauss-newton"):
        raise ValueError(f"unknown method {method!r}")
    seeds = {n: (initial or {}).get(n, _seed(n, data, spec)) for n in free}
    bnds = dict(_DEFAULT_BOUNDS)
    bnds.update(bounds or {})

    C = [spec.c_of(x) for x in data.abscissa]
    c_perm = np.array([c[0] for c in C])
    c_ind = np.array([c[1] for c in C])

    if tabulate is None:
        tabulate = _tabulable(spec, free)
    if table is None and tabulate:
        t0 = TabulatedModel.argument_for(spec, c_perm, c_ind, seeds)
        table = TabulatedModel(spec, 2.0 * float(np.max(np.abs(t0))))

    def model(p: Dict[str, float]):
        if table is not None:
            V0 = p.get("V0", spec.V0)
            return V0 * table(table.argument(c_perm, c_ind, p))
        return direct_model(spec, data.abscissa, p)

    scale = np.array([_UNIT[n] for n in free])

    def unpack(z):
        return {n: float(v) for n, v in zip(free, np.asarray(z) * scale)}

    def resid(z):
        return (model(unpack(z)) - data.visibility) / data.sigma

    n_eval = [0]
    cache = {}

    def chi2(z):
        key = tuple(np.asarray(z, dtype=float))
        if key not in cache:
            n_eval[0] += 1
            r = resid(z)
            cache[key] = float(r @ r)
        return cache[key]

    dof = len(data) - len(free)
    if not free:
        r = resid(np.zeros(0))
        c2 = float(r @ r)
        return FitResult({}, {}, np.zeros((0, 0)), c2, c2 / dof, dof, 1, True, method, [c2], r * data.sigma,
                         model({}))

    z0 = np.array([seeds[n] for n in free]) / scale
    lo = np.array([bnds[n][0] for n in free]) / scale
    hi = np.array([bnds[n][1] for n in free]) / scale
    z0 = np.clip(z0, lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))
    history = [chi2(z0)]

    if method == "nelder-mead":
        step = np.array([_step(n, z) for n, z in zip(free, z0)])
        simplex = np.vstack([z0] + [z0 + np.eye(len(free))[i] * step[i] for i in range(len(free))])
        res = minimize(chi2, z0, method="Nelder-Mead", callback=lambda zk: history.append(chi2(zk)),
                       options=dict(initial_simplex=simplex, xatol=xatol, fatol=fatol, maxfev=max_eval,
                                    adaptive=len(free) > 2))
        z, converged = res.x, bool(res.success)
    else:
        res = least_squares(resid, z0, method="trf", bounds=(lo, hi), x_scale="jac", xtol=1e-12,
                            ftol=1e-12, max_nfev=max_eval)
        z, converged = res.x, bool(res.success)
        history.append(chi2(z))
    if not converged:
        raise ConvergenceError(f"fit did not converge within {max_eval} evaluations")
    for n, zi, a, b in zip(free, z, lo, hi):
        width = b - a
        if zi <= a + 1e-9 * width or zi >= b - 1e-9 * width:
            raise ConvergenceError(f"parameter {n} at its bound ({zi * _UNIT[n]:.6g})")

    J = _jacobian(resid, z)
    JtJ = J.T @ J
    try:
        cov_z = np.linalg.inv(JtJ)
    except np.linalg.LinAlgError:
        cov_z = np.linalg.pinv(JtJ)
    cov = cov_z * np.outer(scale, scale)
    values = unpack(z)
    r = resid(z)
    c2 = float(r @ r)
    stderr = {n: float(np.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(free)}
    mv = model(values)
    return FitResult(values, stderr, cov, c2, c2 / dof, dof, n_eval[0], converged, method, history,
                     data.visibility - mv, mv)


def _step(name, z):
    if name == "C0_gradient":
        return 0.5  # G/m
    if name == "mu_eff":
        return 0.05
    return 0.1 * abs(z) if z != 0 else 0.1


def _jacobian(f, z, rel=1e-6):
    f0 = f(z)
    J = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = rel * max(abs(z[i]), 1.0)
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        J[:, i] = (f(zp) - f(zm)) / (2 * h)
    return J


def _tabulable(spec: ModelSpec, free) -> bool:
    resp = spec.species.response
    if isinstance(resp, (Hyperfine, NuclearSpin, ElectronSpin, Rotor, Magnetized)):
        return "chi_m" not in free
    if isinstance(resp, Diamagnetic):
        return "C0_gradient" not in free and "mu_eff" not in free
    return False
