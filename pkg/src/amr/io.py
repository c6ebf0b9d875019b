"""Reading rasters and intervention points, writing results and manifests.

Rasters use the ESRI ASCII grid format. Its first data row is the northern
edge, while :class:`RasterGrid` stores the southern row first, so rows are
flipped on read and write.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .errors import BadBinary, DataError, NodataPresent, ParseError
from .estimators import AMRCurve
from .permutation import PermutationResult
from .simulation import ExperimentReport
from .spatial import InterventionSet, RasterGrid

CURVE_COLUMNS = ("d", "estimate", "se", "ci_low", "ci_high", "n1", "n0")
CURVE_SCHEMA = "amr.curve/1"
MANIFEST_SCHEMA = "amr.manifest/1"
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
                "cellsize", "nodata_value")


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_raster(path) -> RasterGrid:
    """Parse an ESRI ASCII grid. NODATA cells are an error, not skipped."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("raster file is not ASCII text", path) from exc
    except OSError as exc:
        raise DataError(f"cannot read raster {path}: {exc.strerror}") from exc
    lines = text.splitlines()
    header = {}
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        if _is_number(parts[0]):
            break
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            raise ParseError(f"unknown header key {parts[0]!r}", path, lineno + 1, 1)
        if len(parts) != 2:
            raise ParseError(f"header key {parts[0]!r} needs exactly one value", path, lineno + 1,
                             len(parts[0]) + 2)
        col = lines[lineno].index(parts[1], len(parts[0])) + 1
        try:
            value = float(parts[1])
        except ValueError:
            raise ParseError(f"bad number {parts[1]!r} for {parts[0]}", path, lineno + 1, col) from None
        header[key] = (value, lineno + 1, col)
        lineno += 1
    for req in ("ncols", "nrows", "cellsize"):
        if req not in header:
            raise ParseError(f"missing header key {req.upper()}", path, lineno + 1, 1)
    for a, b in (("xllcorner", "xllcenter"), ("yllcorner", "yllcenter")):
        if (a in header) == (b in header):
            raise ParseError(f"header needs exactly one of {a.upper()} / {b.upper()}", path)
    dims = {}
    for key in ("ncols", "nrows"):
        value, ln, col = header[key]
        if value != int(value) or value < 1:
            raise ParseError(f"{key.upper()} must be a positive integer, got {value:g}", path, ln, col)
        dims[key] = int(value)
    cell, ln, col = header["cellsize"]
    if not (math.isfinite(cell) and cell > 0):
        raise ParseError(f"CELLSIZE must be positive, got {cell:g}", path, ln, col)
    x0 = header["xllcorner"][0] if "xllcorner" in header else header["xllcenter"][0] - cell / 2
    y0 = header["yllcorner"][0] if "yllcorner" in header else header["yllcenter"][0] - cell / 2

    nrows, ncols = dims["nrows"], dims["ncols"]
    values = np.empty((nrows, ncols))
    row = 0
    for ln in range(lineno, len(lines)):
        line = lines[ln]
        tokens = line.split()
        if not tokens:
            continue
        if row >= nrows:
            raise ParseError(f"more than NROWS={nrows} data rows", path, ln + 1, 1)
        if len(tokens) != ncols:
            raise ParseError(f"expected {ncols} values, found {len(tokens)}", path, ln + 1, 1)
        pos = 0
        for c, tok in enumerate(tokens):
            pos = line.index(tok, pos)
            try:
                values[row, c] = float(tok)
            except ValueError:
                raise ParseError(f"bad number {tok!r}", path, ln + 1, pos + 1) from None
            pos += len(tok)
        row += 1
    if row != nrows:
        raise ParseError(f"expected {nrows} data rows, found {row}", path, len(lines), 1)
    if "nodata_value" in header:
        count = int((values == header["nodata_value"][0]).sum())
        if count:
            raise NodataPresent(count, path)
    bad = ~np.isfinite(values)
    if bad.any():
        raise ParseError(f"{int(bad.sum())} non-finite value(s) in raster", path)
    return RasterGrid(x0, y0, cell, values[::-1].copy())


def write_raster(grid: RasterGrid, path, nodata: float | None = None):
    """Write ESRI ASCII with 17 significant digits, so reading back is exact."""
    path = Path(path)
    lines = [
        f"NCOLS {grid.n_cols}",
        f"NROWS {grid.n_rows}",
        f"XLLCORNER {grid.origin_x!r}",
        f"YLLCORNER {grid.origin_y!r}",
        f"CELLSIZE {grid.cell_size!r}",
    ]
    if nodata is not None:
        lines.append(f"NODATA_VALUE {nodata!r}")
    for r in range(grid.n_rows - 1, -1, -1):
        lines.append(" ".join(f"{v:.17g}" for v in grid.values[r]))
    _write_text(path, "\n".join(lines) + "\n")


def load_points(path) -> InterventionSet:
    """Read ``id,x,y[,z]`` rows. ``z`` is parsed as the observed assignment."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read points {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty points file", path, 1) from None
        if header[:3] != ["id", "x", "y"] or header[3:] not in ([], ["z"]):
            raise ParseError(f"header must be id,x,y[,z], got {','.join(header)}", path, 1, 1)
        has_z = len(header) == 4
        ids, xy, z = [], [], []
        for row in reader:
            ln = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", path, ln)
            ids.append(row[0].strip())
            coords = []
            for j in (1, 2):
                try:
                    coords.append(float(row[j]))
                except ValueError:
                    raise ParseError(f"bad coordinate {row[j]!r}", path, ln, j + 1) from None
            xy.append(coords)
            if has_z:
                tok = row[3].strip()
                if tok not in ("0", "1"):
                    raise BadBinary(f"{path}:{ln}: z must be 0 or 1, got {tok!r}")
                z.append(int(tok))
    if not ids:
        raise ParseError("points file has no rows", path)
    return InterventionSet(tuple(ids), np.array(xy), np.array(z) if has_z else None)


def write_points(pts: InterventionSet, path):
    path = Path(path)
    has_z = pts.assignment is not None
    rows = [["id", "x", "y"] + (["z"] if has_z else [])]
    for j, pid in enumerate(pts.ids):
        row = [str(pid), repr(float(pts.xy[j, 0])), repr(float(pts.xy[j, 1]))]
        if has_z:
            row.append(str(int(pts.assignment[j])))
        rows.append(row)
    _write_csv(path, rows)


def load_hband_table(path):
    """Rows of ``d,h`` (header optional) for a tabulated interference bound."""
    path = Path(path)
    rows = []
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() == "d":
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    raise ParseError(f"bad d,h row {row!r}", path) from None
    except OSError as exc:
        raise DataError(f"cannot read h table {path}: {exc.strerror}") from exc
    if not rows:
        raise ParseError("empty h(d) table", path)
    return rows


# -- results --------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def curve_rows(curve: AMRCurve) -> list[list[str]]:
    rows = [list(CURVE_COLUMNS)]
    D = len(curve)
    for k in range(D):
        rows.append([
            _fmt(curve.distances[k]),
            _fmt(curve.estimate[k]),
            _fmt(None if curve.se is None else curve.se[k]),
            _fmt(None if curve.ci_low is None else curve.ci_low[k]),
            _fmt(None if curve.ci_high is None else curve.ci_high[k]),
            str(int(curve.n1[k])),
            str(int(curve.n0[k])),
        ])
    return rows


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    return obj


def curve_to_dict(curve: AMRCurve) -> dict:
    return {
        "schema": CURVE_SCHEMA,
        "method": curve.method,
        "level": curve.level,
        "edof_adjusted": curve.edof_adjusted,
        "columns": list(CURVE_COLUMNS),
        "d": curve.distances,
        "estimate": curve.estimate,
        "se": curve.se,
        "ci_low": curve.ci_low,
        "ci_high": curve.ci_high,
        "n1": curve.n1,
        "n0": curve.n0,
        "eta": curve.eta,
        "flags": curve.flags,
    }


def report_rows(report: ExperimentReport) -> list[list[str]]:
    summary = report.summary_rows()
    cols = list(summary[0])
    return [cols] + [[_fmt(r[c]) for c in cols] for r in summary]


def replicate_rows(report: ExperimentReport) -> list[list[str]]:
    """Long format: one row per replicate and distance."""
    rows = [["replicate", "d", "estimate", "var_hat", "eta", "failed"]]
    for r in range(report.replications):
        for k, d in enumerate(report.distances):
            rows.append([str(r), _fmt(d), _fmt(report.estimates[r, k]), _fmt(report.variances[r, k]),
                         _fmt(report.etas[r, k]), str(int(report.failed[r]))])
    return rows


def emit_results(result, fmt: str, path):
    """Write a curve, experiment report or permutation result as CSV or JSON."""
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise DataError(f"unknown output format {fmt!r}")
    if isinstance(result, AMRCurve):
        if fmt == "csv":
            return _write_csv(path, curve_rows(result))
        return _write_json(path, curve_to_dict(result))
    if isinstance(result, ExperimentReport):
        if fmt == "csv":
            return _write_csv(path, report_rows(result))
        return _write_json(path, result.to_dict())
    if isinstance(result, PermutationResult):
        if fmt == "csv":
            return _write_csv(path, [["replicate", "statistic"]]
                              + [[str(p), _fmt(v)] for p, v in enumerate(result.draws)])
        return _write_json(path, result.to_dict())
    raise DataError(f"cannot emit a {type(result).__name__}")


def load_report(path) -> ExperimentReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    return ExperimentReport.from_dict(data)


def software_version() -> str:
    from . import __version__

    return __version__


def write_manifest(path, command: str, config: dict, seed: int | None, outputs, argv=None):
    """Configuration, seed and version needed to regenerate ``outputs``.

    ``argv`` is the full command line, so ``amr *argv`` replays the run.
    """
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "argv": None if argv is None else [str(a) for a in argv],
        "config": config,
        "seed": seed,
        "version": software_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": [str(o) for o in outputs],
    }
    _write_json(Path(path), manifest)


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _write_text(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def _write_csv(path: Path, rows):
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from exc


def _write_json(path: Path, data):
    # NaN and inf become null so the output is strict JSON
    _write_text(path, json.dumps(_jsonable(data), indent=2, allow_nan=False) + "\n")
