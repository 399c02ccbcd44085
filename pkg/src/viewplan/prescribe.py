"""Plane prescription by multi-view heatmap aggregation.

A candidate plane is parameterized by an anchor position along a fixed 3D
segment plus the polar/azimuth angles of its normal. Its score is the sum
of heatmap values sampled along its intersection segments with every
source slice; the prescribed plane is the argmax over a three-level
coarse-to-fine grid (default steps 15, 5, 1 in pixels and degrees).

Scoring is evaluated in vectorized batches over candidates; the public
scalar operations run through the same arithmetic, so a stored result
score always matches its re-evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateGeometry,
    EmptyIntersection,
    InvariantViolation,
    SearchSpaceTooLarge,
    ShapeMismatch,
)
from .exam import ExamManifest
from .geom import (
    CLIP_SLACK,
    PARALLEL_TOL,
    Plane3D,
    Segment2D,
    SlicePose,
    SphericalAngles,
    clip_line,
    image_to_patient,
    intersect_planes,
    line3d_to_line2d,
    normal_from_angles,
    pose_to_plane,
)
from .heatmap import DependencyMap, Heatmap, LabelSet

SAMPLING_MODES = ("bilinear", "nearest")

# Extra endpoint sample only when the leftover arc exceeds this (pixels).
_ENDPOINT_EPS = 1e-9

_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class SourceView:
    """One source view with a heatmap per slice (the channel of one target)."""

    view_id: str
    slices: Tuple[SlicePose, ...]
    heatmaps: Tuple[Heatmap, ...]

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        object.__setattr__(self, "heatmaps", tuple(self.heatmaps))
        if len(self.slices) != len(self.heatmaps) or not self.slices:
            raise ShapeMismatch(
                f"view {self.view_id!r} needs one heatmap per slice"
            )
        for pose, hm in zip(self.slices, self.heatmaps):
            if (hm.rows, hm.cols) != (pose.rows, pose.cols):
                raise ShapeMismatch(
                    f"view {self.view_id!r}: heatmap extent {(hm.rows, hm.cols)}"
                    f" does not match pose extent {(pose.rows, pose.cols)}"
                )


@dataclass(frozen=True, eq=False)
class AnchorSegment:
    """3D segment along which the candidate plane's point is constrained.

    ``step_mm`` is one pixel of the host source view, so anchor indices are
    pixel-equivalent steps from ``start``.
    """

    start: np.ndarray
    end: np.ndarray
    step_mm: float

    def __post_init__(self):
        start = np.array(self.start, dtype=float)
        end = np.array(self.end, dtype=float)
        start.flags.writeable = False
        end.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        if not self.step_mm > 0:
            raise InvariantViolation(f"step_mm must be positive, got {self.step_mm}")
        if not self.length > 0:
            raise InvariantViolation("anchor segment must have positive length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        return (self.end - self.start) / self.length

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.length / self.step_mm)) + 1

    def point_at(self, index: int) -> np.ndarray:
        return self.start + (float(index) * self.step_mm) * self.direction


@dataclass(frozen=True)
class CandidatePlane:
    """Search-space point: anchor index plus normal angles."""

    anchor_index: int
    angles: SphericalAngles

    def triple(self) -> Tuple[int, float, float]:
        return (self.anchor_index, self.angles.theta, self.angles.phi)


@dataclass(frozen=True)
class SearchConfig:
    """Grid-search schedule and ranges.

    ``steps`` are per level (position step in pixels, angle step in
    degrees), strictly decreasing; each refinement level scans a radius of
    the previous step around the incumbent. Angle ranges only apply to the
    coarse level; refinement clamps to them (azimuth wraps when the range
    is the full circle).
    """

    steps: Tuple[Tuple[int, int], ...] = ((15, 15), (5, 5), (1, 1))
    theta_range: Tuple[int, int] = (0, 180)
    phi_range: Tuple[int, int] = (0, 360)
    anchor_range: Optional[Tuple[int, int]] = None
    mode: str = "bilinear"

    def __post_init__(self):
        steps = tuple((int(p), int(a)) for p, a in self.steps)
        if not steps:
            raise InvariantViolation("at least one search level is required")
        for (p0, a0), (p1, a1) in zip(steps, steps[1:]):
            if not (p1 < p0 and a1 < a0):
                raise InvariantViolation("search steps must be strictly decreasing")
        if any(p < 1 or a < 1 for p, a in steps):
            raise InvariantViolation("search steps must be at least 1")
        object.__setattr__(self, "steps", steps)
        if self.mode not in SAMPLING_MODES:
            raise InvariantViolation(f"mode must be one of {SAMPLING_MODES}")
        t_lo, t_hi = self.theta_range
        if not (0 <= t_lo <= t_hi <= 180):
            raise InvariantViolation(f"bad theta range {self.theta_range}")
        p_lo, p_hi = self.phi_range
        if not (p_hi - p_lo <= 360 and p_lo <= p_hi):
            raise InvariantViolation(f"bad phi range {self.phi_range}")

    @property
    def phi_wraps(self) -> bool:
        return self.phi_range[1] - self.phi_range[0] >= 360


@dataclass(frozen=True, eq=False)
class PrescriptionResult:
    """Winning plane with its score, per-source segments, and diagnostics."""

    plane: Plane3D
    score: float
    candidate: Optional[CandidatePlane]
    segments: Tuple[Tuple[str, int, Optional[Segment2D]], ...]
    visited: int
    degenerate_zero_score: bool
    level_scores: Tuple[float, ...]
    line_params: Optional[Tuple[int, int]] = None


# ---------------------------------------------------------------------------
# scoring core
#
# For a slice with origin o, in-plane unit axes r, c and spacings sx, sy, a
# plane with unit normal n through point p intersects the slice's pixel grid
# along  a*x + b*y + cc = 0  with  a = sx*(n.r), b = sy*(n.c),
# cc = n.(o - p).  This is the plane-plane intersection expressed directly
# in pixel coordinates; hypot(n.r, n.c) equals |n x slice_normal|, so the
# 1e-8 parallelism tolerance carries over unchanged.


class _SliceData:
    __slots__ = ("view_id", "index", "pose", "origin", "row", "col",
                 "sx", "sy", "xmax", "ymax", "cols", "rows", "values", "flat")

    def __init__(self, view_id: str, index: int, pose: SlicePose, heatmap: Heatmap):
        self.view_id = view_id
        self.index = index
        self.pose = pose
        self.origin = pose.origin
        self.row = pose.row_dir
        self.col = pose.col_dir
        self.sx = pose.spacing_x
        self.sy = pose.spacing_y
        self.cols = pose.cols
        self.rows = pose.rows
        self.xmax = pose.cols - 1.0
        self.ymax = pose.rows - 1.0
        self.values = heatmap.values
        self.flat = np.ascontiguousarray(heatmap.values).ravel()


def _slice_data(sources: Sequence[SourceView]) -> List[_SliceData]:
    out = []
    for view in sources:
        for idx, (pose, hm) in enumerate(zip(view.slices, view.heatmaps)):
            out.append(_SliceData(view.view_id, idx, pose, hm))
    return out


def _trace_coeffs(normals: np.ndarray, points: np.ndarray, sd: _SliceData):
    """Pixel-space line coefficients of plane/slice intersections.

    Returns (a, b, cc, live) with ``live`` false where the plane is
    parallel to the slice within tolerance.
    """
    nr = normals @ sd.row
    nc = normals @ sd.col
    live = np.hypot(nr, nc) >= PARALLEL_TOL
    a = sd.sx * nr
    b = sd.sy * nc
    cc = normals @ sd.origin - np.einsum("ij,ij->i", normals, points)
    return a, b, cc, live


def _clip_traces(a, b, cc, live, sd: _SliceData):
    """Canonicalize and clip traces against the image rectangle (vectorized).

    Mirrors :func:`viewplan.geom.clip_line` arithmetic exactly. Returns
    (x0, y0, x1, y1, hit).
    """
    h = np.hypot(a, b)
    h_safe = np.where(live, h, 1.0)
    a = a / h_safe
    b = b / h_safe
    cc = cc / h_safe
    flip = (a < 0.0) | ((a == 0.0) & (b < 0.0))
    sign = np.where(flip, -1.0, 1.0)
    a = a * sign + 0.0
    b = b * sign + 0.0
    cc = cc * sign + 0.0
    px0 = -a * cc
    py0 = -b * cc
    dx = -b
    dy = a
    t_lo = np.full(a.shape, -np.inf)
    t_hi = np.full(a.shape, np.inf)
    miss = ~live
    for p0, d, hi in ((px0, dx, sd.xmax), (py0, dy, sd.ymax)):
        nz = np.abs(d) > 1e-15
        dd = np.where(nz, d, 1.0)
        t0 = (0.0 - p0) / dd
        t1 = (hi - p0) / dd
        lo = np.minimum(t0, t1)
        up = np.maximum(t0, t1)
        t_lo = np.where(nz, np.maximum(t_lo, lo), t_lo)
        t_hi = np.where(nz, np.minimum(t_hi, up), t_hi)
        miss |= (~nz) & ((p0 < -CLIP_SLACK) | (p0 > hi + CLIP_SLACK))
    miss |= t_lo > t_hi
    t_lo = np.where(miss, 0.0, t_lo)
    t_hi = np.where(miss, 0.0, t_hi)
    x0 = np.clip(px0 + t_lo * dx, 0.0, sd.xmax)
    y0 = np.clip(py0 + t_lo * dy, 0.0, sd.ymax)
    x1 = np.clip(px0 + t_hi * dx, 0.0, sd.xmax)
    y1 = np.clip(py0 + t_hi * dy, 0.0, sd.ymax)
    return x0, y0, x1, y1, ~miss


def _interp(sd: _SliceData, xs, ys, mode: str):
    x = np.clip(xs, 0.0, sd.xmax)
    y = np.clip(ys, 0.0, sd.ymax)
    flat = sd.flat
    if mode == "nearest":
        ix = np.minimum((x + 0.5).astype(np.int64), sd.cols - 1)
        iy = np.minimum((y + 0.5).astype(np.int64), sd.rows - 1)
        return flat[iy * sd.cols + ix]
    ix = np.minimum(x.astype(np.int64), sd.cols - 2)
    iy = np.minimum(y.astype(np.int64), sd.rows - 2)
    fx = x - ix
    fy = y - iy
    idx = iy * sd.cols + ix
    v00 = flat[idx]
    v01 = flat[idx + 1]
    v10 = flat[idx + sd.cols]
    v11 = flat[idx + sd.cols + 1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def _segment_sums(sd: _SliceData, x0, y0, x1, y1, hit, mode: str) -> np.ndarray:
    """Sum heatmap values at unit-pixel arc-length samples along segments.

    Samples sit at arc lengths 0, 1, ..., floor(L); the far endpoint is
    added when the leftover arc exceeds 1e-9 px, so both endpoints are
    always represented. Missed clips contribute 0.
    """
    dx = x1 - x0
    dy = y1 - y0
    length = np.hypot(dx, dy)
    n_full = np.floor(length).astype(np.int64)
    safe_len = np.where(length > 0.0, length, 1.0)
    ux = dx / safe_len
    uy = dy / safe_len
    k = int(n_full.max()) + 1 if n_full.size else 1
    ts = np.arange(k, dtype=float)[None, :]
    mask = ts <= n_full[:, None]
    xs = x0[:, None] + ts * ux[:, None]
    ys = y0[:, None] + ts * uy[:, None]
    vals = _interp(sd, xs, ys, mode)
    sums = np.where(mask, vals, 0.0).sum(axis=1)
    extra = (length - n_full) > _ENDPOINT_EPS
    if np.any(extra):
        ends = _interp(sd, x1, y1, mode)
        sums = sums + np.where(extra, ends, 0.0)
    return np.where(hit, sums, 0.0)


def _score_batch(normals: np.ndarray, points: np.ndarray,
                 slice_data: Sequence[_SliceData], mode: str) -> np.ndarray:
    scores = np.zeros(len(normals))
    for sd in slice_data:
        a, b, cc, live = _trace_coeffs(normals, points, sd)
        x0, y0, x1, y1, hit = _clip_traces(a, b, cc, live, sd)
        scores += _segment_sums(sd, x0, y0, x1, y1, hit, mode)
    return scores


# ---------------------------------------------------------------------------
# public operations


def build_anchor(sources: Sequence[SourceView],
                 pair_choice: Optional[Tuple[int, int]] = None) -> AnchorSegment:
    """Anchor segment: the intersection of two source views, clipped in-image.

    By default the first two source views (dependency order) define the
    anchor; their planes are intersected, the line is clipped against the
    first view's image rectangle, and the endpoints are lifted back to 3D.
    The step is the first view's mean pixel spacing in mm. Stacked views
    contribute their first slice.
    """
    if len(sources) < 2:
        raise DegenerateGeometry(
            "anchor needs at least two source views;"
            " use line_search_degenerate for single-source targets"
        )
    i, j = pair_choice if pair_choice is not None else (0, 1)
    host = sources[i].slices[0]
    other = sources[j].slices[0]
    line = intersect_planes(pose_to_plane(host), pose_to_plane(other))
    seg = clip_line(line3d_to_line2d(line, host), host)
    if seg is None:
        raise EmptyIntersection(
            f"intersection of {sources[i].view_id!r} and {sources[j].view_id!r}"
            f" misses the {sources[i].view_id!r} image"
        )
    start = image_to_patient(host, seg.start)
    end = image_to_patient(host, seg.end)
    if not np.linalg.norm(end - start) > 0:
        raise EmptyIntersection("anchor segment degenerates to a single point")
    return AnchorSegment(start, end, (host.spacing_x + host.spacing_y) / 2.0)


def sample_segment(heatmap: Heatmap, seg: Segment2D, mode: str = "bilinear") -> float:
    """Sum of heatmap values along a segment at unit-pixel arc length.

    Endpoints are included; values are read with bilinear interpolation by
    default, or nearest-pixel when ``mode="nearest"``.
    """
    if mode not in SAMPLING_MODES:
        raise InvariantViolation(f"mode must be one of {SAMPLING_MODES}")
    sd = _SliceData("", 0, seg.host, heatmap)
    x0 = np.array([seg.start[0]])
    y0 = np.array([seg.start[1]])
    x1 = np.array([seg.end[0]])
    y1 = np.array([seg.end[1]])
    hit = np.array([True])
    return float(_segment_sums(sd, x0, y0, x1, y1, hit, mode)[0])


def score_plane(plane: Plane3D, sources: Sequence[SourceView],
                mode: str = "bilinear", with_segments: bool = False):
    """Aggregate heatmap response of a plane over all source slices.

    Sources whose slice is parallel to the plane, or whose clipped trace
    misses the image, contribute zero. With ``with_segments=True`` returns
    ``(score, segments)`` where segments is a tuple of
    ``(view_id, slice_index, Segment2D | None)``.
    """
    slice_data = _slice_data(sources)
    normals = plane.normal[None, :]
    points = plane.point[None, :]
    total = 0.0
    segments = []
    for sd in slice_data:
        a, b, cc, live = _trace_coeffs(normals, points, sd)
        x0, y0, x1, y1, hit = _clip_traces(a, b, cc, live, sd)
        total += float(_segment_sums(sd, x0, y0, x1, y1, hit, mode)[0])
        if with_segments:
            if hit[0]:
                seg = Segment2D((float(x0[0]), float(y0[0])),
                                (float(x1[0]), float(y1[0])), sd.pose)
            else:
                seg = None
            segments.append((sd.view_id, sd.index, seg))
    if with_segments:
        return total, tuple(segments)
    return total


def score_candidate(cand: CandidatePlane, anchor: AnchorSegment,
                    sources: Sequence[SourceView], mode: str = "bilinear") -> float:
    """Score of one candidate: instantiate its plane and aggregate responses."""
    plane = instantiate(cand, anchor)
    return score_plane(plane, sources, mode)


def instantiate(cand: CandidatePlane, anchor: AnchorSegment) -> Plane3D:
    """The 3D plane a candidate triple stands for."""
    return Plane3D(anchor.point_at(cand.anchor_index), normal_from_angles(cand.angles))


# --- grid machinery --------------------------------------------------------


def _coarse_axis(lo: int, hi: int, step: int, half_open: bool) -> np.ndarray:
    stop = hi + (0 if half_open else 1)
    return np.arange(lo, stop, step, dtype=np.int64)


def _refine_axis(center: int, radius: int, step: int, lo: int, hi: int,
                 wrap: Optional[int]) -> np.ndarray:
    vals = center + np.arange(-radius, radius + 1, step, dtype=np.int64)
    if wrap is not None:
        vals = vals % wrap
    else:
        vals = np.clip(vals, lo, hi)
    return np.unique(vals)


def _argmax_grid(anchor: AnchorSegment, slice_data: Sequence[_SliceData],
                 avals: np.ndarray, tvals: np.ndarray, pvals: np.ndarray,
                 mode: str):
    """First-occurrence argmax over the lexicographic (anchor, theta, phi) grid."""
    aa, tt, pp = np.meshgrid(avals, tvals, pvals, indexing="ij")
    aa = aa.ravel()
    tt = tt.ravel()
    pp = pp.ravel()
    n = aa.size
    direction = anchor.direction
    best_score = -np.inf
    best_i = 0
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        t = np.radians(tt[lo:hi].astype(float))
        p = np.radians(pp[lo:hi].astype(float))
        st = np.sin(t)
        normals = np.stack([st * np.cos(p), st * np.sin(p), np.cos(t)], axis=1)
        points = anchor.start[None, :] + (
            (aa[lo:hi].astype(float) * anchor.step_mm)[:, None] * direction[None, :]
        )
        scores = _score_batch(normals, points, slice_data, mode)
        j = int(np.argmax(scores))
        if scores[j] > best_score:
            best_score = float(scores[j])
            best_i = lo + j
    return (int(aa[best_i]), int(tt[best_i]), int(pp[best_i])), best_score, n


def _anchor_bounds(anchor: AnchorSegment, config: SearchConfig) -> Tuple[int, int]:
    lo, hi = 0, anchor.n_steps - 1
    if config.anchor_range is not None:
        lo = max(lo, int(config.anchor_range[0]))
        hi = min(hi, int(config.anchor_range[1]))
        if lo > hi:
            raise InvariantViolation(f"empty anchor range {config.anchor_range}")
    return lo, hi


def _finish(anchor, sources, config, triple, score, visited, level_scores):
    cand = CandidatePlane(triple[0], SphericalAngles(float(triple[1]), float(triple[2] % 360)))
    plane = instantiate(cand, anchor)
    _, segments = score_plane(plane, sources, config.mode, with_segments=True)
    return PrescriptionResult(
        plane=plane,
        score=score,
        candidate=cand,
        segments=segments,
        visited=visited,
        degenerate_zero_score=(score == 0.0),
        level_scores=tuple(level_scores),
    )


def pyramid_search(anchor: AnchorSegment, sources: Sequence[SourceView],
                   config: Optional[SearchConfig] = None) -> PrescriptionResult:
    """Coarse-to-fine argmax over (anchor index, theta, phi).

    The first level scans the whole configured range at the coarse steps;
    each later level scans a full grid of its own step within the previous
    step's radius around the incumbent. Ties resolve to the lexicographically
    smallest (anchor_index, theta, phi), which makes the result independent
    of evaluation order.
    """
    config = config or SearchConfig()
    slice_data = _slice_data(sources)
    a_lo, a_hi = _anchor_bounds(anchor, config)
    t_lo, t_hi = config.theta_range
    p_lo, p_hi = config.phi_range
    visited = 0
    level_scores: List[float] = []
    best: Tuple[int, int, int] = (a_lo, t_lo, p_lo)
    best_score = -np.inf
    for level, (pos_step, ang_step) in enumerate(config.steps):
        if level == 0:
            avals = _coarse_axis(a_lo, a_hi, pos_step, half_open=False)
            tvals = _coarse_axis(t_lo, t_hi, ang_step, half_open=False)
            pvals = _coarse_axis(p_lo, p_hi, ang_step, half_open=config.phi_wraps)
        else:
            prev_pos, prev_ang = config.steps[level - 1]
            avals = _refine_axis(best[0], prev_pos, pos_step, a_lo, a_hi, None)
            tvals = _refine_axis(best[1], prev_ang, ang_step, t_lo, t_hi, None)
            wrap = 360 if config.phi_wraps else None
            pvals = _refine_axis(best[2], prev_ang, ang_step, p_lo, p_hi, wrap)
        triple, score, n = _argmax_grid(anchor, slice_data, avals, tvals, pvals, config.mode)
        visited += n
        best, best_score = triple, score
        level_scores.append(best_score)
    return _finish(anchor, sources, config, best, best_score, visited, level_scores)


def exhaustive_search(anchor: AnchorSegment, sources: Sequence[SourceView],
                      config: Optional[SearchConfig] = None,
                      cap: int = 50_000_000) -> PrescriptionResult:
    """True argmax at the finest configured step over the configured ranges.

    Meant as a verification oracle for :func:`pyramid_search`: with the
    default finest step of 1, every point a pyramid refinement can visit
    lies on this grid, so the exhaustive score dominates the pyramid's.
    (With a coarser finest step the pyramid's incumbent-centred grids may
    fall between enumeration points.) Refuses to enumerate more than
    ``cap`` candidates.
    """
    config = config or SearchConfig()
    slice_data = _slice_data(sources)
    a_lo, a_hi = _anchor_bounds(anchor, config)
    pos_step, ang_step = config.steps[-1]
    avals = _coarse_axis(a_lo, a_hi, pos_step, half_open=False)
    tvals = _coarse_axis(config.theta_range[0], config.theta_range[1], ang_step, half_open=False)
    pvals = _coarse_axis(config.phi_range[0], config.phi_range[1], ang_step,
                         half_open=config.phi_wraps)
    n = avals.size * tvals.size * pvals.size
    if n > cap:
        raise SearchSpaceTooLarge(f"{n} candidates exceed the cap of {cap}")
    triple, score, n = _argmax_grid(anchor, slice_data, avals, tvals, pvals, config.mode)
    return _finish(anchor, sources, config, triple, score, n, [score])


def line_search_degenerate(source: SourceView,
                           config: Optional[SearchConfig] = None) -> PrescriptionResult:
    """Prescribe a plane orthogonal to a single source view.

    The search runs over in-plane line parameters of the view's first
    slice: a signed pixel offset from the image centre and an in-plane
    angle in degrees, with the same coarse-to-fine schedule as the 3D
    search. The winning line is lifted to the plane that contains it and is
    orthogonal to the source plane; stacked views are scored across all of
    their slices.
    """
    config = config or SearchConfig()
    slice_data = _slice_data([source])
    pose = source.slices[0]
    cx = (pose.cols - 1) / 2.0
    cy = (pose.rows - 1) / 2.0
    s_max = int(math.ceil(math.hypot(pose.cols - 1.0, pose.rows - 1.0) / 2.0))

    def plane_params(svals: np.ndarray, avals_deg: np.ndarray):
        ang = np.radians(avals_deg.astype(float))
        na = np.cos(ang)
        nb = np.sin(ang)
        # in-plane unit normal of the line, lifted to patient space
        g = (na / pose.spacing_x)[:, None] * pose.row_dir[None, :] + (
            (nb / pose.spacing_y)[:, None] * pose.col_dir[None, :]
        )
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        px = cx + svals.astype(float) * na
        py = cy + svals.astype(float) * nb
        pts = image_to_patient(pose, np.stack([px, py], axis=1))
        return g, pts

    visited = 0
    level_scores: List[float] = []
    best = (0, 0)
    best_score = -np.inf
    for level, (pos_step, ang_step) in enumerate(config.steps):
        if level == 0:
            # offset grid phased on the image centre so offset 0 is always sampled
            k = s_max // pos_step
            svals = np.arange(-k * pos_step, s_max + 1, pos_step, dtype=np.int64)
            avals = _coarse_axis(0, 180, ang_step, half_open=False)
        else:
            prev_pos, prev_ang = config.steps[level - 1]
            svals = _refine_axis(best[0], prev_pos, pos_step, -s_max, s_max, None)
            avals = _refine_axis(best[1], prev_ang, ang_step, 0, 180, None)
        ss, anw = np.meshgrid(svals, avals, indexing="ij")
        ss = ss.ravel()
        anw = anw.ravel()
        chunk_best = -np.inf
        chunk_i = 0
        for lo in range(0, ss.size, _CHUNK):
            hi = min(lo + _CHUNK, ss.size)
            normals, points = plane_params(ss[lo:hi], anw[lo:hi])
            scores = _score_batch(normals, points, slice_data, config.mode)
            j = int(np.argmax(scores))
            if scores[j] > chunk_best:
                chunk_best = float(scores[j])
                chunk_i = lo + j
        visited += ss.size
        best = (int(ss[chunk_i]), int(anw[chunk_i]))
        best_score = chunk_best
        level_scores.append(best_score)
    normals, points = plane_params(np.array([best[0]]), np.array([best[1]]))
    plane = Plane3D(points[0], normals[0])
    _, segments = score_plane(plane, [source], config.mode, with_segments=True)
    return PrescriptionResult(
        plane=plane,
        score=best_score,
        candidate=None,
        segments=segments,
        visited=visited,
        degenerate_zero_score=(best_score == 0.0),
        level_scores=tuple(level_scores),
        line_params=best,
    )


def sources_for_target(exam: ExamManifest, labels: LabelSet, target: str,
                       deps: DependencyMap) -> List[SourceView]:
    """Assemble per-target SourceViews from an exam and its label set."""
    out = []
    for src in deps.sources_of(target):
        view = exam.view(src)
        heatmaps = tuple(labels.get(src, i, target) for i in range(len(view.slices)))
        out.append(SourceView(src, view.slices, heatmaps))
    return out
