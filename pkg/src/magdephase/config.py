"""Run configuration files.

A config is a YAML mapping. Quantities are written as numbers (SI) or as
strings with a unit ("4 cm", "0.4 G/m", "3.6 deg"). Unknown keys are
rejected. Example (coil experiment)::

    source:
      coils: {nominal_radius: 4 cm, wire_diameter: 2 mm, turns_per_layer: 13,
              layers: 4, center_separation: 7 cm}
      background_gradient: 0.4 G/m
    geometry: {L: 0.98 m, d: 266 nm, L1: 30 cm, L2: 24 cm}
    trajectory: {offset: [8.25 mm, 0, 0], tilt: 3.6 deg}
    species:
      name: cs133
      velocity: {type: skew-normal, location: 290 m/s, scale: 171 m/s, shape: 2.1}
    model: hyperfine
    sweep: {current: {start: 0 A, stop: 4.5 A, step: 0.05 A}}

The bundled files under ``magdephase/configs`` are complete annotated
examples for every reproduction recipe.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from .beamline import (
    COIL_GEOMETRY, MAGNET_INDUCED_GEOMETRY, MAGNET_PERMANENT_GEOMETRY, BeamGeometry, Trajectory,
    background_c, c_factor,
)
from .errors import ConfigError
from .fieldmodel import CoilAssemblySpec, CuboidMagnet, FieldSource, build_anti_helmholtz
from .species import (
    C60_ROTOR, C70_ROTOR, TEMPO_ROTOR, Composite, Diamagnetic, Discrete, ElectronSpin, Empirical,
    Gaussian, Hyperfine, Langevin, Magnetized, NuclearSpin, Rotor, RotorSpecies, SkewNormal,
    SpeciesModel, builtin_manifold, builtin_species,
)
from .units import UnitError, parse_quantity
from .visibility import MODELS

# ---------------------------------------------------------------------------
# schema: key -> dimension string, python type, nested dict, or ("list", item)

_VEC = ("vec3", "length")
_UNITVEC = ("vec3", "dimensionless")

SCHEMA = {
    "name": str,
    "description": str,
    "source": {
        "coils": {
            "nominal_radius": "length",
            "wire_diameter": "length",
            "turns_per_layer": int,
            "layers": int,
            "center_separation": "length",
            "axis": _UNITVEC,
            "center": _VEC,
            "polarity": str,
            "loop_method": str,
            "n_segments": int,
        },
        "magnet": {
            "size": _VEC,
            "remanence": "field",
            "direction": _UNITVEC,
            "vertical_offset": "length",
        },
        "background_gradient": "gradient",
        "background_field": ("vec3", "field"),
    },
    "geometry": {
        "L": "length",
        "d": "length",
        "L1": "length",
        "L2": "length",
        "permanent": {"L1": "length", "L2": "length"},
        "induced": {"L1": "length", "L2": "length"},
    },
    "trajectory": {
        "offset": _VEC,
        "tilt": "angle",
        "beam_axis": _UNITVEC,
        "tilt_toward": _UNITVEC,
    },
    "species": {
        "name": str,
        "mass": "mass",
        "response": dict,
        "velocity": dict,
        "chi_m": "susceptibility",
        "mu_eff": "moment_muB",
        "mu_nuc": "moment_muN",
        "R_max": int,
        "averaging": str,
        "m_mode": str,
    },
    "model": str,
    "sweep": {
        "current": {"start": "current", "stop": "current", "step": "current", "values": ("list", "current")},
        "distance": {"start": "length", "stop": "length", "step": "length", "values": ("list", "length")},
    },
    "fit": {
        "free": ("list", str),
        "method": str,
        "normalize_window": ("list", "current"),
        "initial": dict,
    },
    "c_rel_tol": "dimensionless",
    "threads": int,
}


def _loc(node) -> Tuple[Optional[int], Optional[int]]:
    if node is None:
        return None, None
    return node.start_mark.line + 1, node.start_mark.column + 1


def _node_index(node) -> Dict[str, Any]:
    """Map each key path of a composed YAML tree to its node (for error locations)."""
    out = {}

    def walk(n, path):
        out[path] = n
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                walk(v, f"{path}.{k.value}" if path else str(k.value))
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                walk(v, f"{path}[{i}]")

    if node is not None:
        walk(node, "")
    return out


class _Validator:
    def __init__(self, nodes):
        self.nodes = nodes

    def error(self, path, msg):
        line, col = _loc(self.nodes.get(path))
        raise ConfigError(f"{path}: {msg}", line=line, column=col, field=path)

    def mapping(self, data, schema, path=""):
        if not isinstance(data, dict):
            self.error(path or "<root>", "expected a mapping")
        out = {}
        for key, value in data.items():
            p = f"{path}.{key}" if path else str(key)
            if key not in schema:
                allowed = ", ".join(schema)
                self.error(p, f"unknown key {key!r} (allowed: {allowed})")
            out[key] = self.value(value, schema[key], p)
        return out

    def value(self, value, kind, path):
        if isinstance(kind, dict):
            return self.mapping(value, kind, path)
        if kind is dict:
            if not isinstance(value, dict):
                self.error(path, "expected a mapping")
            return value
        if kind is str:
            if not isinstance(value, str):
                self.error(path, f"expected a string, got {value!r}")
            return value
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.error(path, f"expected an integer, got {value!r}")
            return value
        if isinstance(kind, tuple) and kind[0] == "vec3":
            if not isinstance(value, list) or len(value) != 3:
                self.error(path, "expected a list of three components")
            return tuple(self.value(v, kind[1], f"{path}[{i}]") for i, v in enumerate(value))
        if isinstance(kind, tuple) and kind[0] == "list":
            if not isinstance(value, list) or not value:
                self.error(path, "expected a non-empty list")
            return [self.value(v, kind[1], f"{path}[{i}]") for i, v in enumerate(value)]
        try:
            return parse_quantity(value, kind)
        except UnitError as exc:
            self.error(path, str(exc))


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every quantity in SI units."""

    source_kind: str  # coils | magnet | background
    coils: Optional[CoilAssemblySpec]
    loop_method: str
    n_segments: int
    magnet_size: Tuple[float, float, float]
    magnet_magnetization: Tuple[float, float, float]
    magnet_vertical_offset: float
    background_gradient: float  # T/m
    background_field: Tuple[float, float, float]
    geometry_permanent: BeamGeometry
    geometry_induced: BeamGeometry
    offset: Tuple[float, float, float]
    tilt_deg: float
    beam_axis: Tuple[float, float, float]
    tilt_toward: Tuple[float, float, float]
    species: SpeciesModel
    model: Optional[str]
    sweep_kind: Optional[str]  # current | distance
    abscissa: Optional[np.ndarray]
    fit: Dict[str, Any] = field(default_factory=dict)
    c_rel_tol: float = 1e-6
    threads: int = 1
    name: str = ""

    # -- sources and C-factors -------------------------------------------------

    def field_source(self, current: float = 1.0, distance: Optional[float] = None) -> FieldSource:
        bg = self.background_field
        if self.source_kind == "coils":
            spec = replace(self.coils, current=current)
            src = build_anti_helmholtz(spec)
            return FieldSource(src.loops, (), bg, self.loop_method, self.n_segments)
        if self.source_kind == "magnet":
            return FieldSource((), (self.magnet(distance if distance is not None else 0.08),), bg)
        return FieldSource((), (), bg)

    def magnet(self, distance: float) -> CuboidMagnet:
        """Magnet whose near face sits ``distance`` from the beam along -x."""
        if not distance > 0:
            raise ValueError("magnet distance must be positive")
        hx, hy, hz = (0.5 * s for s in self.magnet_size)
        center = (-(distance + hx), -self.magnet_vertical_offset, 0.0)
        return CuboidMagnet(center, (hx, hy, hz), self.magnet_magnetization)

    def trajectory(self, kind: str) -> Trajectory:
        geom = self.geometry_permanent if kind == "permanent" else self.geometry_induced
        return Trajectory.centered(self.offset, geom.L1, self.tilt_deg, self.beam_axis, self.tilt_toward)

    def c_factors(self, x: float, kinds=("permanent", "induced")):
        """(C_permanent, C_induced) at abscissa ``x`` (current in A or distance in m)."""
        out = {}
        for kind in ("permanent", "induced"):
            if kind not in kinds:
                out[kind] = 0.0
                continue
            if self.sweep_kind == "distance":
                src = self.field_source(distance=x)
            else:
                src = self.field_source(current=x)
            geom = self.geometry_permanent if kind == "permanent" else self.geometry_induced
            out[kind] = c_factor(src, self.trajectory(kind), geom, kind, self.c_rel_tol).value
        return out["permanent"], out["induced"]

    def c0(self) -> float:
        return background_c(self.geometry_permanent, self.background_gradient)

    def needed_kinds(self):
        r = self.species.response
        parts = r.parts if isinstance(r, Composite) else (r,)
        kinds = set()
        for q in parts:
            kinds.add("induced" if isinstance(q, (Diamagnetic, Langevin)) else "permanent")
        return tuple(sorted(kinds))

    def c_function(self, kinds=None):
        """Callable x -> (C_permanent, C_induced) for the configured sweep.

        Coil sources are linear in current, so C is computed once at 1 A and
        scaled (I for permanent, I^2 for induced); magnets are re-evaluated per
        distance and memoized.
        """
        kinds = self.needed_kinds() if kinds is None else tuple(kinds)
        if self.sweep_kind == "current" or self.source_kind != "magnet":
            if self.source_kind == "background":
                return lambda x: (0.0, 0.0)
            cp1, ci1 = self.c_factors(1.0, kinds)
            return lambda I: (I * cp1, I * I * ci1)

        @lru_cache(maxsize=None)
        def c_of(d):
            return self.c_factors(float(d), kinds)
        return c_of


# ---------------------------------------------------------------------------
# builders

_VELOCITY_KEYS = {
    "skew-normal": {"location": "velocity", "scale": "velocity", "shape": "dimensionless"},
    "gaussian": {"mean": "velocity", "sigma": "velocity"},
    "empirical": {"edges": ("list", "velocity"), "weights": ("list", "dimensionless")},
    "discrete": {"velocities": ("list", "velocity"), "weights": ("list", "dimensionless")},
}

_RESPONSE_KEYS = {
    "hyperfine": {"isotope": str},
    "rotor": {"rotor": str, "g_xx": "dimensionless", "g_zz": "dimensionless", "B_rot": "wavenumber",
              "T_rot": "temperature", "kind": str},
    "diamagnetic": {"chi_m": "susceptibility"},
    "magnetized": {"mu_eff": "moment_muB"},
    "langevin": {"mu": "moment_muB", "temperature": "temperature", "kappa": "dimensionless"},
    "nuclear-spin": {"mu_nuc": "moment_muN"},
    "electron-spin": {"g": "dimensionless"},
    "composite": {"parts": ("list", dict)},
}

_ROTORS = {"c60": C60_ROTOR, "c70": C70_ROTOR, "tempo": TEMPO_ROTOR}


def _typed(v: _Validator, spec: dict, table: dict, path: str, what: str):
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in table:
        v.error(f"{path}.type", f"{what} type must be one of {sorted(table)}, got {kind!r}")
    return kind, v.mapping(spec, table[kind], path)


def _velocity(v, spec, path):
    kind, p = _typed(v, spec, _VELOCITY_KEYS, path, "velocity")
    try:
        if kind == "skew-normal":
            return SkewNormal(p["location"], p["scale"], p.get("shape", 0.0))
        if kind == "gaussian":
            return Gaussian(p["mean"], p["sigma"])
        if kind == "empirical":
            return Empirical(tuple(p["edges"]), tuple(p["weights"]))
        return Discrete(tuple(p["velocities"]), tuple(p["weights"]))
    except KeyError as exc:
        v.error(f"{path}.{exc.args[0]}", "missing required key")
    except ValueError as exc:
        v.error(path, str(exc))


def _response(v, spec, path):
    kind, p = _typed(v, spec, _RESPONSE_KEYS, path, "response")
    try:
        if kind == "hyperfine":
            return Hyperfine(builtin_manifold(p["isotope"]))
        if kind == "rotor":
            base = _ROTORS.get(p.get("rotor", "").lower())
            if base is None:
                base = RotorSpecies(p.get("kind", "spherical"), p["g_xx"], p.get("g_zz", p["g_xx"]))
            over = {k: p[k] for k in ("g_xx", "g_zz", "B_rot", "T_rot", "kind") if k in p}
            return Rotor(replace(base, **over))
        if kind == "diamagnetic":
            return Diamagnetic(p["chi_m"])
        if kind == "magnetized":
            return Magnetized(p["mu_eff"])
        if kind == "langevin":
            return Langevin(p["mu"], p["temperature"], p.get("kappa", 1.0 / 3.0))
        if kind == "nuclear-spin":
            return NuclearSpin(p.get("mu_nuc", 0.702))
        if kind == "electron-spin":
            return ElectronSpin(p.get("g", 2.00231930436))
        return Composite(tuple(_response(v, q, f"{path}.parts[{i}]") for i, q in enumerate(p["parts"])))
    except KeyError as exc:
        v.error(f"{path}.{exc.args[0]}", "missing required key or unknown name")
    except ValueError as exc:
        v.error(path, str(exc))


def _species(v, s):
    path = "species"
    vel = _velocity(v, s["velocity"], f"{path}.velocity") if "velocity" in s else None
    name = s.get("name")
    if "response" in s:
        if "mass" not in s:
            v.error(f"{path}.mass", "inline species needs a mass")
        resp = _response(v, s["response"], f"{path}.response")
        sp = SpeciesModel(name or "custom", s["mass"], resp, vel)
    else:
        if name is None:
            v.error(f"{path}.name", "species needs a built-in name or an inline response")
        try:
            sp = builtin_species(name, velocity=vel, chi_m=s.get("chi_m"), mu_eff=s.get("mu_eff", 0.1),
                                 mu_nuc=s.get("mu_nuc", 0.702))
        except KeyError as exc:
            v.error(f"{path}.name", str(exc.args[0]))
        except ValueError as exc:
            v.error(f"{path}.chi_m", str(exc))
        if "mass" in s:
            sp = SpeciesModel(sp.name, s["mass"], sp.response, sp.velocity)
    if isinstance(sp.response, Rotor):
        r = sp.response
        try:
            sp = sp.with_response(Rotor(r.rotor, s.get("R_max", r.R_max), s.get("averaging", r.averaging),
                                        s.get("m_mode", r.m_mode)))
        except ValueError as exc:
            v.error(path, str(exc))
    if sp.velocity is None:
        v.error(f"{path}.velocity", f"species {sp.name!r} has no default velocity distribution")
    return sp


def _sweep(v, sw):
    if not sw:
        return None, None
    if len(sw) != 1:
        v.error("sweep", "give exactly one of 'current' or 'distance'")
    kind, spec = next(iter(sw.items()))
    path = f"sweep.{kind}"
    if "values" in spec:
        if set(spec) - {"values"}:
            v.error(path, "'values' cannot be combined with start/stop/step")
        xs = np.asarray(spec["values"], dtype=float)
    else:
        for k in ("start", "stop", "step"):
            if k not in spec:
                v.error(f"{path}.{k}", "missing required key")
        start, stop, step = spec["start"], spec["stop"], spec["step"]
        if not step > 0 or stop < start:
            v.error(f"{path}.step", "need step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        xs = start + step * np.arange(n)
    if kind == "distance" and np.any(xs <= 0):
        v.error(path, "magnet distances must be positive")
    return kind, xs


def _geometry(v, g, source_kind):
    base_p = COIL_GEOMETRY if source_kind != "magnet" else MAGNET_PERMANENT_GEOMETRY
    base_i = COIL_GEOMETRY if source_kind != "magnet" else MAGNET_INDUCED_GEOMETRY
    common = {k: g[k] for k in ("L", "d") if k in g}
    flat = {k: g[k] for k in ("L1", "L2") if k in g}
    out = []
    for base, key in ((base_p, "permanent"), (base_i, "induced")):
        kw = dict(common)
        kw.update(flat)
        kw.update(g.get(key, {}))
        try:
            out.append(replace(base, **kw))
        except ValueError as exc:
            v.error(f"geometry.{key}" if key in g else "geometry", str(exc))
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; all quantities are returned in SI."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ConfigError(f"config parse error: {exc.problem or exc}", line=line, column=col) from None
    if data is None:
        raise ConfigError("config is empty")
    v = _Validator(_node_index(node))
    cfg = v.mapping(data, SCHEMA)

    src = cfg.get("source", {})
    kinds = [k for k in ("coils", "magnet") if k in src]
    if len(kinds) > 1:
        v.error("source", "give either 'coils' or 'magnet', not both")
    source_kind = kinds[0] if kinds else "background"

    coils = None
    loop_method, n_seg = "elliptic", 256
    if source_kind == "coils":
        c = dict(src["coils"])
        loop_method = c.pop("loop_method", "elliptic")
        n_seg = c.pop("n_segments", 256)
        if loop_method not in ("elliptic", "segments"):
            v.error("source.coils.loop_method", "must be 'elliptic' or 'segments'")
        try:
            coils = CoilAssemblySpec(**c)
        except (TypeError, ValueError) as exc:
            v.error("source.coils", str(exc))
    mag = src.get("magnet", {})
    size = mag.get("size", (0.01, 0.02, 0.02))
    if min(size) <= 0:
        v.error("source.magnet.size", "dimensions must be positive")
    direction = np.asarray(mag.get("direction", (1.0, 0.0, 0.0)), dtype=float)
    if np.linalg.norm(direction) == 0:
        v.error("source.magnet.direction", "direction must be non-zero")
    magnetization = tuple(mag.get("remanence", 1.3) * direction / np.linalg.norm(direction))

    geom_p, geom_i = _geometry(v, cfg.get("geometry", {}), source_kind)
    traj = cfg.get("trajectory", {})
    default_tilt = 3.6 if source_kind == "coils" else 0.0
    tilt = traj["tilt"] / (np.pi / 180.0) if "tilt" in traj else default_tilt
    default_offset = (0.00825, 0.0, 0.0) if source_kind == "coils" else (0.0, 0.0, 0.0)

    if "species" not in cfg:
        v.error("species", "missing required section")
    species = _species(v, cfg["species"])
    model = cfg.get("model")
    if model is not None and model not in MODELS + ("symmetric",):
        v.error("model", f"must be one of {MODELS}")
    sweep_kind, xs = _sweep(v, cfg.get("sweep"))
    if sweep_kind == "distance" and source_kind != "magnet":
        v.error("sweep.distance", "a distance sweep needs a magnet source")
    if sweep_kind == "current" and source_kind == "magnet":
        v.error("sweep.current", "a current sweep needs a coil source")
    fit = cfg.get("fit", {})
    for name in fit.get("free", []):
        if name not in ("C0_gradient", "mu_eff", "V0", "chi_m"):
            v.error("fit.free", f"unknown parameter {name!r}")
    if "initial" in fit:
        dims = {"C0_gradient": "gradient", "mu_eff": "moment_muB", "V0": "dimensionless", "chi_m": "susceptibility"}
        initial = {}
        for name, value in fit["initial"].items():
            if name not in dims:
                v.error(f"fit.initial.{name}", "unknown parameter")
            initial[name] = v.value(value, dims[name], f"fit.initial.{name}")
        fit = dict(fit, initial=initial)
    if "normalize_window" in fit and len(fit["normalize_window"]) != 2:
        v.error("fit.normalize_window", "expected [low, high]")
    threads = cfg.get("threads", 1)
    if threads < 1:
        v.error("threads", "must be >= 1")
    rel_tol = cfg.get("c_rel_tol", 1e-6)
    if not 0 < rel_tol <= 1e-2:
        v.error("c_rel_tol", "must lie in (0, 1e-2]")

    return RunConfig(
        source_kind=source_kind,
        coils=coils,
        loop_method=loop_method,
        n_segments=n_seg,
        magnet_size=tuple(size),
        magnet_magnetization=magnetization,
        magnet_vertical_offset=mag.get("vertical_offset", 0.006),
        background_gradient=src.get("background_gradient", 0.0),
        background_field=tuple(src.get("background_field", (0.0, 0.0, 0.0))),
        geometry_permanent=geom_p,
        geometry_induced=geom_i,
        offset=tuple(traj.get("offset", default_offset)),
        tilt_deg=float(tilt),
        beam_axis=tuple(traj.get("beam_axis", (0.0, 0.0, 1.0))),
        tilt_toward=tuple(traj.get("tilt_toward", (1.0, 0.0, 0.0))),
        species=species,
        model=model,
        sweep_kind=sweep_kind,
        abscissa=xs,
        fit=fit,
        c_rel_tol=rel_tol,
        threads=threads,
        name=cfg.get("name", ""),
    )


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def bundled_config_names():
    return sorted(p.name for p in resources.files("magdephase.configs").iterdir() if p.name.endswith(".cfg"))


def bundled_config_text(name: str) -> str:
    if not name.endswith(".cfg"):
        name += ".cfg"
    res = resources.files("magdephase.configs").joinpath(name)
    if not res.is_file():
        raise ConfigError(f"no bundled config {name!r}; available: {', '.join(bundled_config_names())}")
    return res.read_text(encoding="utf-8")


def load_bundled(name: str) -> RunConfig:
    return parse_config(bundled_config_text(name))
