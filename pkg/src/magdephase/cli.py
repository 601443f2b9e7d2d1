"""Command-line interface.

Exit codes: 0 success, 1 other package error, 2 usage error,
3 configuration error, 4 numerical failure, 5 data error.
"""

import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import constants
from .beamline import sample_profile
from .config import bundled_config_names, load_bundled, load_config
from .dataio import curve_text, field_map_text, format_rows, profile_text, read_dataset, read_fringe_scan, write_text
from .errors import (
    ConfigError, ConvergenceError, DataError, FieldZeroError, InsideBodyError, MagDephaseError,
    SingularityError,
)
from .fieldmodel import field
from .fit import ModelSpec, fit_fringe, fit_visibility_params, normalize_to_asymptote
from .reproduce import FIGURES, abscissa_label, config_curve, reproduce
from .species import Hyperfine
from .units import UnitError, parse_quantity

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DATA = 0, 1, 2, 3, 4, 5
NUMERICAL = (ConvergenceError, SingularityError, FieldZeroError, InsideBodyError)


def _load(ref):
    """A config path, or the name of a bundled config."""
    if os.path.exists(ref):
        return load_config(ref)
    name = os.path.basename(ref)
    if name.removesuffix(".cfg") + ".cfg" in bundled_config_names():
        return load_bundled(name.removesuffix(".cfg"))
    raise ConfigError(f"config {ref!r} not found (bundled: {', '.join(bundled_config_names())})")


def _quantities(values, dimension):
    try:
        return [parse_quantity(v, dimension) for v in values]
    except UnitError as exc:
        raise click.BadParameter(str(exc))


def _vec(text, dimension="length"):
    parts = [p for p in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter(f"expected three comma-separated components, got {text!r}")
    return np.array(_quantities(parts, dimension))


def _abscissa(cfg, currents, distances):
    if currents and distances:
        raise click.UsageError("give --current or --distance, not both")
    if currents:
        if cfg.source_kind == "magnet":
            raise click.UsageError("--current needs a coil source")
        return replace(cfg, sweep_kind="current"), np.array(_quantities(currents, "current"))
    if distances:
        if cfg.source_kind != "magnet":
            raise click.UsageError("--distance needs a magnet source")
        return replace(cfg, sweep_kind="distance"), np.array(_quantities(distances, "length"))
    return cfg, cfg.abscissa


@click.group()
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads for sweep points (default: config value or 1).")
@click.pass_context
def cli(ctx, threads):
    """Magnetic dephasing of matter-wave interference fringes."""
    ctx.obj = {"threads": threads}


config_option = click.option("--config", "config_ref", required=True,
                             help="Config file, or the name of a bundled config (e.g. cs_coils).")
output_option = click.option("-o", "--output", default="-", show_default=True, help="Output CSV path ('-' for stdout).")


@cli.command("field-map")
@config_option
@click.option("--current", default="1 A", show_default=True, help="Coil current.")
@click.option("--distance", default=None, help="Magnet face-to-beam distance.")
@click.option("--start", default=None, help="Start point x,y,z (default: along the coil axis or out of the magnet face).")
@click.option("--stop", default=None, help="End point x,y,z.")
@click.option("--n", "n", default="201", show_default=True, help="Points on the line, or nx,ny,nz for a box grid.")
@click.option("--profile", is_flag=True, help="Sample field and force integrands along the beam trajectory instead.")
@output_option
def field_map(config_ref, current, distance, start, stop, n, profile, output):
    """Field vectors over a line or grid: CSV x,y,z,Bx,By,Bz,|B| (SI)."""
    cfg = _load(config_ref)
    I = _quantities([current], "current")[0]
    d = _quantities([distance], "length")[0] if distance else 0.02
    src = cfg.field_source(current=I, distance=d)
    try:
        counts = [int(c) for c in n.split(",")]
    except ValueError:
        raise click.BadParameter(f"--n expects integers, got {n!r}")
    if profile:
        geom = cfg.geometry_permanent
        count = counts[0]
        write_text(output, profile_text(sample_profile(src, cfg.trajectory("permanent"), count, geom.L1)))
        return
    if start is not None and stop is None or stop is not None and start is None:
        raise click.UsageError("give both --start and --stop")
    if start is None:
        if cfg.source_kind == "magnet":
            face = -d
            y = -cfg.magnet_vertical_offset
            a, b = np.array([face + 1e-3, y, 0.0]), np.array([face + 0.08, y, 0.0])
        else:
            axis = np.asarray(cfg.coils.axis if cfg.coils else (1.0, 0.0, 0.0))
            a, b = -0.1 * axis, 0.1 * axis
    else:
        a, b = _vec(start), _vec(stop)
    if len(counts) == 1:
        t = np.linspace(0.0, 1.0, counts[0])
        pts = a + t[:, None] * (b - a)
    elif len(counts) == 3:
        axes = [np.linspace(a[i], b[i], counts[i]) for i in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    else:
        raise click.BadParameter("--n must be one integer or three")
    write_text(output, field_map_text(pts, field(src, pts)))


@cli.command("c-factor")
@config_option
@click.option("--current", "currents", multiple=True, help="Coil current(s); repeatable.")
@click.option("--distance", "distances", multiple=True, help="Magnet distance(s); repeatable.")
@output_option
def c_factor_cmd(config_ref, currents, distances, output):
    """C-factors. One value: printed in G m and T m. Otherwise a CSV sweep."""
    cfg = _load(config_ref)
    cfg, xs = _abscissa(cfg, currents, distances)
    if xs is None:
        raise click.UsageError("no sweep in the config; give --current or --distance")
    rows = [cfg.c_factors(float(x)) for x in xs]
    cp = np.array([r[0] for r in rows])
    ci = np.array([r[1] for r in rows])
    if len(xs) == 1 and (currents or distances):
        g = constants.GAUSS
        click.echo(f"{abscissa_label(cfg)} = {xs[0]:.6g}")
        click.echo(f"C_permanent = {cp[0] / g:.6g} G m = {cp[0]:.6e} T m")
        click.echo(f"C_induced = {ci[0] / g ** 2:.6g} G^2 m = {ci[0]:.6e} T^2 m")
        click.echo(f"C0 (background) = {cfg.c0() / g:.6g} G m = {cfg.c0():.6e} T m")
        return
    write_text(output, format_rows([abscissa_label(cfg), "C_permanent_Tm", "C_induced_T2m"], [xs, cp, ci]))


@cli.command("visibility")
@config_option
@click.option("--current", "currents", multiple=True, help="Coil current(s); overrides the config sweep.")
@click.option("--distance", "distances", multiple=True, help="Magnet distance(s); overrides the config sweep.")
@click.option("--with-c", is_flag=True, help="Add C_permanent and C_induced columns.")
@click.option("--v0", type=float, default=None, help="Also emit absolute visibility V = V0 * V/V0.")
@output_option
@click.pass_context
def visibility_cmd(ctx, config_ref, currents, distances, with_c, v0, output):
    """Normalized visibility V/V0 over the sweep: CSV."""
    cfg = _load(config_ref)
    cfg, xs = _abscissa(cfg, currents, distances)
    if xs is None:
        raise click.UsageError("no sweep in the config; give --current or --distance")
    curve = config_curve(cfg, xs, threads=ctx.obj["threads"])
    write_text(output, curve_text(curve, v0, with_c))


@cli.command("fringe-fit")
@click.argument("csv_path", type=click.Path(dir_okay=False))
@click.option("--period", default="266 nm", show_default=True, help="Grating period.")
@click.option("--dark-rate", type=float, default=0.0, show_default=True, help="Detector dark counts to subtract.")
@click.option("--plain", is_flag=True, help="Ordinary least squares instead of the bisquare fit.")
@click.option("--max-iter", type=click.IntRange(min=1), default=50, show_default=True)
def fringe_fit_cmd(csv_path, period, dark_rate, plain, max_iter):
    """Sinusoid fit of a fringe scan CSV (position_*, counts); prints a JSON report."""
    d = _quantities([period], "length")[0]
    scan = read_fringe_scan(csv_path, dark_rate, d)
    r = fit_fringe(scan, robust=not plain, max_iter=max_iter)
    report = {
        "offset": r.offset, "amplitude": r.amplitude, "phase_rad": r.phase, "visibility": r.visibility,
        "stderr": r.stderr, "robust": not plain, "iterations": r.n_iter, "converged": r.converged,
        "visibility_clamped": r.clamped, "points": int(scan.positions.size),
        "downweighted_points": int(np.sum(r.weights < 0.5)),
    }
    click.echo(json.dumps(report, indent=2))


@cli.command("fit")
@config_option
@click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False), help="Dataset CSV.")
@click.option("--free", "free", multiple=True, help="Free parameter(s): C0_gradient, mu_eff, V0, chi_m.")
@click.option("--method", type=click.Choice(["nelder-mead", "gauss-newton"]), default=None)
@click.option("--normalize/--no-normalize", default=None,
              help="Divide by V0 = N mean(V)/2 over the config's normalize_window first.")
@click.option("--residuals", default=None, help="Write abscissa, data, model and residual columns here.")
def fit_cmd(config_ref, data_path, free, method, normalize, residuals):
    """Least-squares fit of visibility parameters; prints a JSON report."""
    cfg = _load(config_ref)
    data = read_dataset(data_path)
    fit_cfg = cfg.fit
    free = tuple(free) or tuple(fit_cfg.get("free", ("C0_gradient",)))
    method = method or fit_cfg.get("method", "nelder-mead")
    window = fit_cfg.get("normalize_window")
    if normalize is None:
        normalize = window is not None
    v0 = None
    if normalize:
        if window is None:
            raise ConfigError("--normalize needs fit.normalize_window in the config", field="fit.normalize_window")
        resp = cfg.species.response
        if not isinstance(resp, Hyperfine):
            raise ConfigError("asymptote normalization needs a hyperfine species", field="fit.normalize_window")
        v0, data = normalize_to_asymptote(data, resp.manifold, tuple(window))
    kind = "distance" if cfg.source_kind == "magnet" else "current"
    cfg = replace(cfg, sweep_kind=kind)
    spec = ModelSpec(cfg.species, cfg.geometry_permanent, cfg.c_function(), cfg.model,
                     C0_gradient=cfg.background_gradient)
    res = fit_visibility_params(data, spec, free, method=method, initial=fit_cfg.get("initial"))
    report = {
        "free": list(free), "method": res.method, "values_SI": res.values, "stderr_SI": res.stderr,
        "chi2": res.chi2, "reduced_chi2": res.reduced_chi2, "dof": res.dof, "evaluations": res.n_eval,
        "converged": res.converged, "covariance_SI": res.covariance.tolist(),
        "sigma_defaulted": data.sigma_defaulted, "V0_asymptote": v0,
    }
    if "C0_gradient" in res.values:
        report["C0_gradient_G_per_m"] = res.values["C0_gradient"] / constants.GAUSS
    if residuals:
        write_text(residuals, format_rows([data.meta.get("abscissa_column", "x"), "data", "model", "residual"],
                                          [data.abscissa, data.visibility, res.model_values, res.residuals]))
    click.echo(json.dumps(report, indent=2))


@cli.command("reproduce")
@click.argument("figure", type=click.Choice(sorted(FIGURES)))
@click.option("--outdir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.pass_context
def reproduce_cmd(ctx, figure, outdir):
    """Theory curves of a figure recipe from the bundled configs, one CSV per curve."""
    curves = reproduce(figure, outdir, threads=ctx.obj["threads"] or 1)
    for name in curves:
        click.echo(os.path.join(outdir, f"{figure}_{name}.csv"))


def main(argv=None) -> int:
    """Run the CLI and return the exit code."""
    try:
        cli.main(args=argv, prog_name="magdephase", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_ERROR
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except NUMERICAL as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return EXIT_NUMERICAL
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except MagDephaseError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR
    except (ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
