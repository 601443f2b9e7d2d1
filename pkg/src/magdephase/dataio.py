"""CSV input and output.

Files have one header row, comma separators, '.' decimals and UTF-8 text.
Column names carry their unit as a suffix (``current_A``, ``distance_mm``,
``position_nm``). Numbers are written with 17 significant digits so a
write/read cycle is lossless. Output files are written to a temporary
name and renamed into place, so a failed run never leaves a partial CSV.
"""

import csv
import io
import os
import sys
import tempfile
import warnings
from typing import Iterable, Optional, Sequence

import numpy as np

from .beamline import Profile
from .errors import DataError
from .fit import Dataset, FringeScan
from .visibility import VisibilityCurve

FMT = "%.17g"

# abscissa columns and their factor to SI
ABSCISSA_UNITS = {
    "current_A": 1.0,
    "current_mA": 1e-3,
    "distance_m": 1.0,
    "distance_cm": 1e-2,
    "distance_mm": 1e-3,
}
POSITION_UNITS = {"position_m": 1.0, "position_um": 1e-6, "position_nm": 1e-9}
SIGMA_NAMES = ("sigma", "visibility_err", "stderr")


class MissingSigmaWarning(UserWarning):
    pass


def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
    return header, values


def _column(header, values, names, path, what):
    for n in names:
        if n in header:
            return n, values[:, header.index(n)]
    raise DataError(f"{path}: missing {what} column (expected one of {', '.join(names)})")


def read_dataset(path, meta: Optional[dict] = None) -> Dataset:
    """Visibility dataset; the abscissa is converted to A or m.

    A missing sigma column defaults every sigma to 1 and sets
    ``sigma_defaulted`` (a :class:`MissingSigmaWarning` is also issued).
    """
    header, values = _read_table(path)
    name, x = _column(header, values, tuple(ABSCISSA_UNITS), path, "abscissa")
    _, v = _column(header, values, ("visibility", "V_over_V0"), path, "visibility")
    defaulted = not any(n in header for n in SIGMA_NAMES)
    if defaulted:
        warnings.warn(f"{path}: no sigma column, using sigma = 1", MissingSigmaWarning, stacklevel=2)
        s = np.ones_like(v)
    else:
        _, s = _column(header, values, SIGMA_NAMES, path, "sigma")
    info = {"abscissa_column": name, "source": os.fspath(path)}
    info.update(meta or {})
    return Dataset(x * ABSCISSA_UNITS[name], v, s, info, defaulted)


def read_fringe_scan(path, dark_rate: float = 0.0, period: float = 266e-9) -> FringeScan:
    header, values = _read_table(path)
    name, x = _column(header, values, tuple(POSITION_UNITS), path, "position")
    _, c = _column(header, values, ("counts",), path, "counts")
    return FringeScan(x * POSITION_UNITS[name], c, dark_rate, period)


def format_rows(header: Sequence[str], columns: Iterable) -> str:
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = {c.size for c in cols}
    if len(n) != 1:
        raise DataError("columns have different lengths")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*cols):
        w.writerow([FMT % x for x in row])
    return buf.getvalue()


def write_text(path, text: str):
    """Atomically write ``text`` to ``path`` ("-" writes to stdout)."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def curve_text(curve: VisibilityCurve, v0: Optional[float] = None, include_c: bool = False) -> str:
    header = [curve.label, "V_over_V0"]
    cols = [curve.abscissa, curve.v_over_v0]
    if v0 is not None:
        header.append("V")
        cols.append(np.asarray(curve.v_over_v0) * v0)
    if include_c:
        header += ["C_permanent_Tm", "C_induced_T2m"]
        cols += [curve.c_permanent, curve.c_induced]
    return format_rows(header, cols)


def write_curve(path, curve: VisibilityCurve, v0: Optional[float] = None, include_c: bool = False):
    write_text(path, curve_text(curve, v0, include_c))


def read_curve(path) -> VisibilityCurve:
    header, values = _read_table(path)
    label = header[0]
    _, v = _column(header, values, ("V_over_V0",), path, "V_over_V0")
    cp = values[:, header.index("C_permanent_Tm")] if "C_permanent_Tm" in header else None
    ci = values[:, header.index("C_induced_T2m")] if "C_induced_T2m" in header else None
    return VisibilityCurve(values[:, 0], v, label, "", cp, ci)


def profile_text(profile: Profile) -> str:
    B = np.asarray(profile.B)
    return format_rows(
        ["s_m", "Bx_T", "By_T", "Bz_T", "Bmag_T", "dBdx_T_per_m", "BgradBx_T2_per_m"],
        [profile.s, B[:, 0], B[:, 1], B[:, 2], np.linalg.norm(B, axis=1), profile.dBdx, profile.b_grad_bx],
    )


def write_profile(path, profile: Profile):
    write_text(path, profile_text(profile))


def field_map_text(points, B) -> str:
    P = np.asarray(points, dtype=float)
    B = np.asarray(B, dtype=float)
    return format_rows(["x", "y", "z", "Bx", "By", "Bz", "|B|"],
                       [P[:, 0], P[:, 1], P[:, 2], B[:, 0], B[:, 1], B[:, 2], np.linalg.norm(B, axis=1)])
