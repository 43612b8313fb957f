"""Point cloud files, pair normalization, benchmark manifests and run reports.

Cloud formats are chosen by extension: ``.xyz`` holds one ``x y z`` triple per
line; ``.ply`` is ASCII PLY 1.0 with a ``vertex`` element. Floats are written
in shortest round-trip form, so write/read is lossless.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CloudParseError, InvalidArgumentError, UnsupportedFormatError
from .geometry import PointCloud, RigidTransform, check_rotation

MANIFEST_VERSION = "1"
REPORT_VERSION = "1"
CSV_COLUMNS = ("id", "rot_error_deg", "trans_error", "mse", "cd", "fscore", "restarts_used",
               "wall_time")
_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}


def _fmt(x: float) -> str:
    return repr(float(x))


# -- clouds ----------------------------------------------------------------------

def _format_of(path: Path) -> str:
    ext = path.suffix.lower()
    if ext not in (".xyz", ".ply"):
        raise UnsupportedFormatError(f"{path}: unsupported point cloud extension {ext!r}")
    return ext


def _parse_floats(tokens, expected: int, path, lineno) -> list:
    if len(tokens) != expected:
        raise CloudParseError(f"expected {expected} values, found {len(tokens)}", path, lineno)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise CloudParseError(f"non-numeric value in {' '.join(tokens)!r}", path, lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise CloudParseError("non-finite coordinate", path, lineno)
    return vals


def _read_xyz(path: Path, lines) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        rows.append(_parse_floats(s.split(), 3, path, lineno))
    if not rows:
        raise CloudParseError("file contains no points", path)
    return np.array(rows, dtype=np.float64)


def _read_ply(path: Path, lines) -> np.ndarray:
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError("missing 'ply' magic line", path, 1)
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    saw_format = False
    header_end = None
    for lineno in range(2, len(lines) + 1):
        tok = lines[lineno - 1].split()
        if not tok:
            raise CloudParseError("blank line in header", path, lineno)
        key = tok[0]
        if key == "end_header":
            header_end = lineno
            break
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(tok) != 3 or tok[2] != "1.0":
                raise CloudParseError(f"bad format line {' '.join(tok)!r}", path, lineno)
            if tok[1] != "ascii":
                raise UnsupportedFormatError(f"{path}:{lineno}: only ASCII PLY is supported, got {tok[1]}")
            saw_format = True
        elif key == "element":
            if len(tok) != 3:
                raise CloudParseError(f"bad element line {' '.join(tok)!r}", path, lineno)
            if tok[1] != "vertex" or n_vertex is not None:
                raise CloudParseError(f"unexpected element {tok[1]!r}; only one vertex element is allowed",
                                      path, lineno)
            try:
                n_vertex = int(tok[2])
            except ValueError:
                raise CloudParseError(f"bad vertex count {tok[2]!r}", path, lineno) from None
            if n_vertex < 0:
                raise CloudParseError("negative vertex count", path, lineno)
            in_vertex = True
        elif key == "property":
            if not in_vertex:
                raise CloudParseError("property before any element", path, lineno)
            if len(tok) != 3 or tok[1] not in _PLY_FLOAT_TYPES:
                raise CloudParseError(f"vertex properties must be scalar floats, got {' '.join(tok)!r}",
                                      path, lineno)
            if tok[2] in props:
                raise CloudParseError(f"duplicate property {tok[2]!r}", path, lineno)
            props.append(tok[2])
        else:
            raise CloudParseError(f"unknown header keyword {key!r}", path, lineno)
    if header_end is None:
        raise CloudParseError("missing end_header", path, len(lines))
    if not saw_format:
        raise CloudParseError("missing format line", path, header_end)
    if n_vertex is None:
        raise CloudParseError("missing vertex element", path, header_end)
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise CloudParseError(f"vertex element lacks property {axis!r}", path, header_end)
    cols = [props.index(a) for a in ("x", "y", "z")]
    rows = []
    lineno = header_end
    for lineno in range(header_end + 1, len(lines) + 1):
        s = lines[lineno - 1].strip()
        if not s:
            continue
        if len(rows) == n_vertex:
            raise CloudParseError("data after the last vertex", path, lineno)
        vals = _parse_floats(s.split(), len(props), path, lineno)
        rows.append([vals[c] for c in cols])
    if len(rows) != n_vertex:
        raise CloudParseError(f"expected {n_vertex} vertices, found {len(rows)}", path, lineno)
    if n_vertex == 0:
        raise CloudParseError("file contains no points", path, header_end)
    return np.array(rows, dtype=np.float64)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    ext = _format_of(path)
    with open(path, encoding="ascii", errors="strict") as f:
        try:
            lines = f.read().splitlines()
        except UnicodeDecodeError:
            raise CloudParseError("file is not ASCII text", path) from None
    pts = _read_xyz(path, lines) if ext == ".xyz" else _read_ply(path, lines)
    return PointCloud(pts)


def write_cloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    ext = _format_of(path)
    pts = cloud.points if isinstance(cloud, PointCloud) else PointCloud(cloud).points
    body = "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in pts.tolist())
    if ext == ".ply":
        header = ("ply\nformat ascii 1.0\n"
                  f"element vertex {pts.shape[0]}\n"
                  "property double x\nproperty double y\nproperty double z\n"
                  "end_header\n")
        body = header + body
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(body)


# -- normalization -----------------------------------------------------------------

def normalize_pair(source: PointCloud, target: PointCloud):
    """Shift the joint centroid to the origin and scale the joint max radius to 1.

    Returns ``(source', target', center, scale)``. Raw coordinates are
    recovered as ``scale * p' + center``.
    """
    pts = np.concatenate([source.points, target.points])
    center = pts.mean(axis=0)
    scale = float(np.sqrt(((pts - center) ** 2).sum(axis=1).max()))
    if not scale > 0:
        raise InvalidArgumentError("cannot normalize a pair with zero spatial extent")
    return (apply_normalization(source, center, scale), apply_normalization(target, center, scale),
            center, scale)


def apply_normalization(cloud: PointCloud, center, scale: float) -> PointCloud:
    center = np.asarray(center, dtype=np.float64)
    if not scale > 0:
        raise InvalidArgumentError("normalization scale must be positive")
    meta = {"center": center.tolist(), "scale": float(scale)}
    return PointCloud((cloud.points - center) / scale, meta)


def denormalize_transform(t: RigidTransform, center, scale: float) -> RigidTransform:
    """Map a transform estimated between normalized clouds back to raw coordinates."""
    c = np.asarray(center, dtype=np.float64)
    return RigidTransform(t.R, scale * t.T + c - t.R @ c)


def normalize_transform(t: RigidTransform, center, scale: float) -> RigidTransform:
    """Inverse of :func:`denormalize_transform`."""
    c = np.asarray(center, dtype=np.float64)
    return RigidTransform(t.R, (t.T - c + t.R @ c) / scale)


# -- manifests ---------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestPair:
    id: str
    source_path: str
    target_path: str
    gt: RigidTransform | None
    rot_level: str | None = None
    overlap: float | None = None


@dataclass(frozen=True)
class PairManifest:
    pairs: tuple
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    version: str = MANIFEST_VERSION
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p


def _transform_from_lists(rot, trans, where: str) -> RigidTransform:
    R = np.asarray(rot, dtype=np.float64)
    if R.shape != (9,):
        raise InvalidArgumentError(f"{where}: gt_rotation must hold 9 numbers")
    R = R.reshape(3, 3)
    try:
        check_rotation(R, 1e-9)
        return RigidTransform(R, trans)
    except InvalidArgumentError as e:
        raise InvalidArgumentError(f"{where}: {e}") from None


def write_manifest(manifest: PairManifest, path) -> None:
    pairs = []
    for p in manifest.pairs:
        rec = {"id": p.id, "source_path": p.source_path, "target_path": p.target_path,
               "rot_level": p.rot_level, "overlap": p.overlap}
        if p.gt is not None:
            rec["gt_rotation"] = p.gt.R.reshape(-1).tolist()
            rec["gt_translation"] = p.gt.T.tolist()
        pairs.append(rec)
    doc = {"version": manifest.version, "pairs": pairs,
           "normalization": {"center": np.asarray(manifest.center, dtype=float).tolist(),
                             "scale": float(manifest.scale)}}
    _write_json(doc, path)


def read_manifest(path, check_paths: bool = True) -> PairManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(doc, dict) or "pairs" not in doc:
        raise InvalidArgumentError(f"{path}: manifest must be an object with a 'pairs' list")
    norm = doc.get("normalization") or {"center": [0.0, 0.0, 0.0], "scale": 1.0}
    center = np.asarray(norm.get("center", [0.0, 0.0, 0.0]), dtype=np.float64)
    scale = float(norm.get("scale", 1.0))
    if center.shape != (3,) or not np.all(np.isfinite(center)) or not scale > 0:
        raise InvalidArgumentError(f"{path}: invalid normalization block")
    root = path.parent
    pairs = []
    seen = set()
    for k, rec in enumerate(doc["pairs"]):
        where = f"{path}: pair {k}"
        try:
            pid = str(rec["id"])
            src, tgt = str(rec["source_path"]), str(rec["target_path"])
        except (KeyError, TypeError):
            raise InvalidArgumentError(f"{where}: id, source_path and target_path are required") from None
        if pid in seen:
            raise InvalidArgumentError(f"{where}: duplicate id {pid!r}")
        seen.add(pid)
        gt = None
        if "gt_rotation" in rec:
            gt = _transform_from_lists(rec["gt_rotation"], rec.get("gt_translation", [0, 0, 0]), where)
        m = ManifestPair(pid, src, tgt, gt, rec.get("rot_level"), rec.get("overlap"))
        pairs.append(m)
    manifest = PairManifest(tuple(pairs), center, scale, str(doc.get("version", MANIFEST_VERSION)), root)
    if check_paths:
        for m in pairs:
            for rel in (m.source_path, m.target_path):
                if not manifest.resolve(rel).is_file():
                    raise InvalidArgumentError(f"{path}: pair {m.id!r} references missing file {rel}")
    return manifest


# -- predictions and reports -----------------------------------------------------

def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if hasattr(x, "value") and hasattr(type(x), "__members__"):
        return x.value
    return x


def _write_json(doc, path) -> None:
    text = json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")


def write_predictions(records: list, path, config: dict | None = None) -> None:
    """Predicted transforms, one record per pair id (``rotation`` row-major 9, ``translation`` 3)."""
    _write_json({"version": REPORT_VERSION, "config": config or {}, "pairs": records}, path)


def read_predictions(path) -> dict:
    doc = json.loads(Path(path).read_text())
    out = {}
    for rec in doc.get("pairs", []):
        R = np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3)
        out[str(rec["id"])] = (RigidTransform(R, rec["translation"]), rec)
    return out


@dataclass
class RunReport:
    config: dict
    pairs: list
    summary: dict
    timing: dict = field(default_factory=dict)
    version: str = REPORT_VERSION


def write_report(report: RunReport, path) -> Path:
    """JSON report at ``path`` and per-pair metrics CSV next to it; returns the CSV path."""
    if not report.pairs:
        raise InvalidArgumentError("report has no pairs")
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    doc = {"version": report.version, "config": report.config, "pairs": report.pairs,
           "summary": report.summary, "timing": report.timing}
    _write_json(doc, path)
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in report.pairs:
            row = []
            for col in CSV_COLUMNS:
                v = rec.get(col)
                row.append(_fmt(v) if isinstance(v, float) else v)
            w.writerow(row)
    return csv_path


def read_report(path) -> RunReport:
    doc = json.loads(Path(path).read_text())
    return RunReport(doc.get("config", {}), doc["pairs"], doc.get("summary", {}),
                     doc.get("timing", {}), doc.get("version", REPORT_VERSION))
