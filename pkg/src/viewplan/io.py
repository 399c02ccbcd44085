"""Persistence: exam manifests, heatmap rasters, overlays, and reports.

Formats
-------
Manifest: JSON text. Top level ``{"exam_id", "views", "dependencies"?}``;
each view is ``{"view_id", "role", "slices"}``; each slice is
``{"origin": [mm x3], "row_dir": [x3], "col_dir": [x3],
"spacing": [mm x2], "cols", "rows", "thickness"}``. Field names map one to
one onto the standard pose attributes of a DICOM header (position,
orientation cosines, pixel spacing, slice thickness), but no DICOM parsing
happens here. All numeric fields round-trip exactly.

Heatmap file (".hmap"): little-endian header ``magic "HMAP", version u16,
rows u32, cols u32, channels u32`` followed by channels*rows*cols float32
values, row-major within a channel, channel-major overall. A label set is
stored as one file per (source view, slice), named
``<view>_<slice:03d>.hmap``, channels ordered by the dependency table.

Overlay: binary PGM (P5), 8-bit grayscale, so goldens diff bytewise.
Ground truth, automatic, and overlapping line pixels get distinct gray
levels over an optional background raster.

Reports: JSON plus CSV with columns
``exam,target,normal_deviation_deg,point_to_plane_mm``.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BadMagic,
    InvariantViolation,
    NonFiniteValue,
    SchemaError,
    TruncatedPayload,
)
from .exam import ExamManifest, ViewRecord, VIEW_ROLES
from .geom import Line2D, SlicePose
from .heatmap import DependencyMap, Heatmap, LabelSet
from .metrics import PlaneMetrics, Report

HMAP_MAGIC = b"HMAP"
HMAP_VERSION = 1
_HEADER = struct.Struct("<4sHIII")

OVERLAY_LEVELS = {"gt": 170, "auto": 255}
OVERLAY_OVERLAP = 212
OVERLAY_BACKGROUND_MAX = 128


# --- manifest ---------------------------------------------------------------


def _expect(mapping, key, kind, path):
    if not isinstance(mapping, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in mapping:
        raise SchemaError(f"{path}.{key}: missing field")
    value = mapping[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{path}.{key}: expected a number")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"{path}.{key}: expected an integer")
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}: expected {kind.__name__}")
    return value


def _vector(mapping, key, n, path):
    raw = _expect(mapping, key, list, path)
    if len(raw) != n or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise SchemaError(f"{path}.{key}: expected {n} numbers")
    return [float(v) for v in raw]


def parse_manifest(text: str) -> ExamManifest:
    """Parse and validate a manifest; every failure is a structured error.

    Raises :class:`SchemaError` with the offending field path, or
    :class:`InvariantViolation` naming the slice whose pose is invalid.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest is not valid JSON: {e}") from None
    exam_id = _expect(doc, "exam_id", str, "$")
    views_raw = _expect(doc, "views", list, "$")
    views: List[ViewRecord] = []
    for vi, view in enumerate(views_raw):
        vpath = f"$.views[{vi}]"
        view_id = _expect(view, "view_id", str, vpath)
        role = _expect(view, "role", str, vpath)
        if role not in VIEW_ROLES:
            raise SchemaError(f"{vpath}.role: unknown role {role!r}")
        slices_raw = _expect(view, "slices", list, vpath)
        slices = []
        for si, sl in enumerate(slices_raw):
            spath = f"{vpath}.slices[{si}]"
            origin = _vector(sl, "origin", 3, spath)
            row_dir = _vector(sl, "row_dir", 3, spath)
            col_dir = _vector(sl, "col_dir", 3, spath)
            spacing = _vector(sl, "spacing", 2, spath)
            cols = _expect(sl, "cols", int, spath)
            rows = _expect(sl, "rows", int, spath)
            thickness = _expect(sl, "thickness", float, spath)
            try:
                slices.append(SlicePose(origin, row_dir, col_dir, spacing[0], spacing[1],
                                        cols, rows, thickness))
            except InvariantViolation as e:
                raise InvariantViolation(f"{spath}: {e}") from None
        try:
            views.append(ViewRecord(view_id, role, tuple(slices)))
        except InvariantViolation as e:
            raise InvariantViolation(f"{vpath}: {e}") from None
    deps = None
    if "dependencies" in doc:
        deps_raw = doc["dependencies"]
        if not isinstance(deps_raw, dict):
            raise SchemaError("$.dependencies: expected an object")
        deps = {}
        for t, ss in deps_raw.items():
            if not isinstance(ss, list) or not all(isinstance(s, str) for s in ss):
                raise SchemaError(f"$.dependencies.{t}: expected a list of view ids")
            deps[t] = tuple(ss)
    try:
        return ExamManifest(exam_id, tuple(views), deps)
    except InvariantViolation as e:
        raise InvariantViolation(f"$.views: {e}") from None


def serialize_manifest(exam: ExamManifest) -> str:
    """Deterministic JSON text; numeric fields survive a round trip exactly."""
    doc = {
        "exam_id": exam.exam_id,
        "views": [
            {
                "view_id": v.view_id,
                "role": v.role,
                "slices": [
                    {
                        "origin": [float(x) for x in s.origin],
                        "row_dir": [float(x) for x in s.row_dir],
                        "col_dir": [float(x) for x in s.col_dir],
                        "spacing": [s.spacing_x, s.spacing_y],
                        "cols": s.cols,
                        "rows": s.rows,
                        "thickness": s.thickness,
                    }
                    for s in v.slices
                ],
            }
            for v in exam.views
        ],
    }
    if exam.dependencies is not None:
        doc["dependencies"] = {t: list(ss) for t, ss in exam.dependencies.items()}
    return json.dumps(doc, indent=1, sort_keys=True)


def load_manifest(path) -> ExamManifest:
    return parse_manifest(Path(path).read_text())


def save_manifest(path, exam: ExamManifest) -> None:
    Path(path).write_text(serialize_manifest(exam) + "\n")


# --- heatmap rasters ---------------------------------------------------------


def write_heatmaps(path, heatmaps: Sequence[Heatmap]) -> None:
    """Write one slice's channel stack to a ``.hmap`` file (float32 payload)."""
    if not heatmaps:
        raise InvariantViolation("cannot write an empty channel stack")
    rows, cols = heatmaps[0].rows, heatmaps[0].cols
    stack = np.stack([h.values for h in heatmaps]).astype("<f4")
    if not np.all(np.isfinite(stack)):
        raise NonFiniteValue(f"{path}: non-finite values in channel stack")
    header = _HEADER.pack(HMAP_MAGIC, HMAP_VERSION, rows, cols, len(heatmaps))
    Path(path).write_bytes(header + stack.tobytes())


def read_heatmaps(path) -> Tuple[Heatmap, ...]:
    """Read a ``.hmap`` channel stack; payloads round-trip bit-exactly."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size or blob[:4] != HMAP_MAGIC:
        raise BadMagic(f"{path}: not a heatmap file")
    magic, version, rows, cols, channels = _HEADER.unpack_from(blob)
    if version != HMAP_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    expected = 4 * channels * rows * cols
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: expected {expected} payload bytes, found {len(payload)}"
        )
    stack = np.frombuffer(payload, dtype="<f4").reshape(channels, rows, cols)
    if not np.all(np.isfinite(stack)):
        raise NonFiniteValue(f"{path}: non-finite values in payload")
    return tuple(Heatmap(c.astype(float)) for c in stack)


def _hmap_name(view_id: str, slice_index: int) -> str:
    return f"{view_id}_{slice_index:03d}.hmap"


def write_labelset(directory, labels: LabelSet) -> List[str]:
    """Write a label set as one file per (source view, slice); returns names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for view, idx in labels.slice_groups():
        maps = [labels.get(view, idx, t) for t in labels.targets_for(view)]
        name = _hmap_name(view, idx)
        write_heatmaps(directory / name, maps)
        names.append(name)
    return names


def read_labelset(directory, exam: ExamManifest, deps: DependencyMap) -> LabelSet:
    """Reassemble a label set from a directory written by :func:`write_labelset`."""
    directory = Path(directory)
    entries: Dict[Tuple[str, int, str], Heatmap] = {}
    order: Dict[str, Tuple[str, ...]] = {}
    for target, sources in deps.edges:
        for src in sources:
            if src in order:
                continue
            order[src] = deps.targets_from(src)
            view = exam.view(src)
            for idx in range(len(view.slices)):
                maps = read_heatmaps(directory / _hmap_name(src, idx))
                targets = order[src]
                if len(maps) != len(targets):
                    raise TruncatedPayload(
                        f"{_hmap_name(src, idx)}: {len(maps)} channels,"
                        f" dependency table expects {len(targets)}"
                    )
                for t, hm in zip(targets, maps):
                    entries[(src, idx, t)] = hm
    return LabelSet(entries, order)


# --- overlays ----------------------------------------------------------------


def _rasterize(line: Line2D, rows: int, cols: int) -> np.ndarray:
    """Nearest-pixel walk along the line's major axis; one mark per step."""
    mask = np.zeros((rows, cols), dtype=bool)
    if abs(line.b) >= abs(line.a):
        xs = np.arange(cols)
        ys = np.floor((-line.c - line.a * xs) / line.b + 0.5).astype(int)
        ok = (ys >= 0) & (ys < rows)
        mask[ys[ok], xs[ok]] = True
    else:
        ys = np.arange(rows)
        xs = np.floor((-line.c - line.b * ys) / line.a + 0.5).astype(int)
        ok = (xs >= 0) & (xs < cols)
        mask[ys[ok], xs[ok]] = True
    return mask


def _dilate(mask: np.ndarray) -> np.ndarray:
    """3x3 binary dilation (one-pixel neighbourhood), separable box."""
    vert = mask.copy()
    vert[1:, :] |= mask[:-1, :]
    vert[:-1, :] |= mask[1:, :]
    out = vert.copy()
    out[:, 1:] |= vert[:, :-1]
    out[:, :-1] |= vert[:, 1:]
    return out


def render_overlay(
    background: Union[np.ndarray, Tuple[int, int]],
    lines: Sequence[Tuple[Line2D, str]],
    levels: Optional[Mapping[str, int]] = None,
    overlap_level: int = OVERLAY_OVERLAP,
) -> bytes:
    """Render lines over a grayscale background as a binary PGM image.

    ``background`` is either a (rows, cols) float raster in [0, 1] or a
    (rows, cols) shape for a blank canvas. Each line carries a label that
    selects its gray level (defaults: gt 170, auto 255). A marked pixel
    whose line passes within one pixel of a differently-labelled line gets
    the overlap level, so sub-pixel-separated prescriptions read as
    overlapping, matching the rasterization's own quantization.
    """
    levels = dict(OVERLAY_LEVELS if levels is None else levels)
    if isinstance(background, np.ndarray):
        rows, cols = background.shape
        canvas = np.clip(background, 0.0, 1.0) * OVERLAY_BACKGROUND_MAX
        canvas = canvas.astype(np.uint8)
    else:
        rows, cols = int(background[0]), int(background[1])
        canvas = np.zeros((rows, cols), dtype=np.uint8)
    by_label: Dict[str, np.ndarray] = {}
    for line, label in lines:
        if label not in levels:
            raise InvariantViolation(f"no gray level defined for label {label!r}")
        mask = _rasterize(line, rows, cols)
        by_label[label] = by_label.get(label, np.zeros((rows, cols), bool)) | mask
    overlap = np.zeros((rows, cols), dtype=bool)
    labels_present = sorted(by_label)
    for i, la in enumerate(labels_present):
        for lb in labels_present[i + 1:]:
            da, db = _dilate(by_label[la]), _dilate(by_label[lb])
            overlap |= (by_label[la] & db) | (by_label[lb] & da)
    for label in labels_present:
        canvas[by_label[label]] = levels[label]
    canvas[overlap] = overlap_level
    header = f"P5\n{cols} {rows}\n255\n".encode()
    return header + canvas.tobytes()


def write_overlay(path, *args, **kwargs) -> None:
    Path(path).write_bytes(render_overlay(*args, **kwargs))


# --- reports -------------------------------------------------------------------

CaseRow = Tuple[str, str, PlaneMetrics]  # (exam id, target, metrics)


def report_to_dict(report: Report) -> dict:
    def stats(s):
        return {"mean": s.mean, "std": s.std, "n": s.n}

    return {
        "per_target": {
            t: {"normal_deviation_deg": stats(nd), "point_to_plane_mm": stats(pp)}
            for t, (nd, pp) in sorted(report.per_target.items())
        },
        "overall": {
            "normal_deviation_deg": stats(report.overall[0]),
            "point_to_plane_mm": stats(report.overall[1]),
        },
    }


def write_report_json(path, report: Report, cases: Iterable[CaseRow] = ()) -> None:
    doc = report_to_dict(report)
    rows = [
        {
            "exam": exam,
            "target": target,
            "normal_deviation_deg": m.normal_deviation_deg,
            "point_to_plane_mm": m.point_to_plane_mm,
        }
        for exam, target, m in cases
    ]
    if rows:
        doc["cases"] = rows
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def report_csv(cases: Iterable[CaseRow]) -> str:
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["exam", "target", "normal_deviation_deg", "point_to_plane_mm"])
    for exam, target, m in cases:
        writer.writerow([exam, target, repr(m.normal_deviation_deg), repr(m.point_to_plane_mm)])
    return buf.getvalue()


def write_report_csv(path, cases: Iterable[CaseRow]) -> None:
    Path(path).write_text(report_csv(cases))
