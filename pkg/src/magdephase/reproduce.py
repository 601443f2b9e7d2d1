"""Theory curves from run configurations, and the bundled figure recipes."""

import os
from typing import Dict, Optional, Sequence

import numpy as np

from .config import RunConfig, load_bundled
from .dataio import curve_text, write_text
from .visibility import VisibilityCurve, sweep_curve

FIGURES = {
    "fig2-cs": ("cs_coils", "cs270_coils"),
    "fig3-tempo": ("tempo_magnet", "tempo_spin_magnet"),
    "fig4-fullerenes": ("c60_magnet", "c70_magnet", "c69c13_magnet"),
    "figS4-rb": ("rb85_coils", "rb87_coils"),
}


def abscissa_label(cfg: RunConfig) -> str:
    return "distance_m" if cfg.sweep_kind == "distance" else "current_A"


def config_curve(cfg: RunConfig, abscissa: Optional[Sequence[float]] = None,
                 threads: Optional[int] = None) -> VisibilityCurve:
    """V/V0 over the configured sweep (or ``abscissa``)."""
    xs = cfg.abscissa if abscissa is None else np.asarray(abscissa, dtype=float)
    if xs is None:
        raise ValueError("no abscissa: give a sweep in the config or explicit values")
    curve = sweep_curve(cfg.species, xs, cfg.c_function(), cfg.geometry_permanent, c0=cfg.c0(),
                        model=cfg.model, label=abscissa_label(cfg),
                        threads=cfg.threads if threads is None else threads)
    curve.meta.update(name=cfg.name, species=cfg.species.name)
    return curve


def reproduce(figure: str, outdir=".", threads: int = 1) -> Dict[str, VisibilityCurve]:
    """Run every config of a figure recipe; writes ``<figure>_<config>.csv`` into ``outdir``.

    All curves are computed before any file is written.
    """
    if figure not in FIGURES:
        raise KeyError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    curves = {name: config_curve(load_bundled(name), threads=threads) for name in FIGURES[figure]}
    os.makedirs(outdir, exist_ok=True)
    texts = {name: curve_text(c, include_c=True) for name, c in curves.items()}
    for name, text in texts.items():
        write_text(os.path.join(outdir, f"{figure}_{name}.csv"), text)
    return curves
