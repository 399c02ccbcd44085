"""Synthetic exam generator with known ground-truth planes.

A phantom encodes geometry only: a randomized left-ventricular long axis
with protocol-consistent localizer and standard-view planes around it,
plus labels rendered straight from the ground-truth intersections. It is
the correctness oracle for the search and aggregation machinery, standing
in for clinical data.

Protocol layout (primary ordering): the axial stack is a body plane; the
p2C localizer contains the long axis and is orthogonal to the axial stack;
the pSA stack is orthogonal to p2C (normal along the long axis); the p4C
localizer is rotated about the long axis and tilted to be oblique to both;
the standard 2C/3C/4C planes contain the long axis at distinct rotations
about it, and the SAX plane is orthogonal to it at a basal offset. The
alternative ordering only swaps the dependency table, not the geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometry, EmptyIntersection, InvariantViolation, ParallelPlanes
from .exam import ExamManifest, ViewRecord
from .geom import Plane3D, SlicePose, pose_to_plane
from .heatmap import (
    DependencyMap,
    Heatmap,
    LabelSet,
    default_dependency_map,
    gen_labels,
)
from . import prescribe

STANDARD_TARGETS = ("2C", "3C", "4C", "SAX")

_CANONICAL_LONG_AXIS = np.array([-0.55, 0.45, -0.70]) / np.linalg.norm(
    np.array([-0.55, 0.45, -0.70])
)


@dataclass(frozen=True)
class ViewGeometry:
    """Raster geometry of one view: extent, spacing, thickness, stack layout."""

    rows: int
    cols: int
    spacing: float
    thickness: float
    n_slices: int = 1
    interval_mm: float = 0.0


def default_view_geometry() -> Dict[str, ViewGeometry]:
    """Modal acquisition geometry of the eight views."""
    return {
        "axial": ViewGeometry(192, 256, 1.34, 6.0, n_slices=30, interval_mm=6.0),
        "p2C": ViewGeometry(192, 176, 1.98, 6.0),
        "p4C": ViewGeometry(160, 192, 1.77, 6.0),
        "pSA": ViewGeometry(192, 176, 1.88, 6.0, n_slices=8, interval_mm=12.0),
        "2C": ViewGeometry(192, 156, 1.80, 7.0),
        "3C": ViewGeometry(170, 173, 1.67, 7.0),
        "4C": ViewGeometry(155, 192, 1.72, 7.0),
        "SAX": ViewGeometry(192, 161, 1.85, 7.0),
    }


def tiny_view_geometry() -> Dict[str, ViewGeometry]:
    """Small rasters for fast tests; same spacings and thicknesses."""
    return {
        "axial": ViewGeometry(64, 80, 1.34, 6.0, n_slices=12, interval_mm=6.0),
        "p2C": ViewGeometry(64, 64, 1.98, 6.0),
        "p4C": ViewGeometry(64, 64, 1.77, 6.0),
        "pSA": ViewGeometry(64, 64, 1.88, 6.0, n_slices=6, interval_mm=10.0),
        "2C": ViewGeometry(64, 64, 1.80, 7.0),
        "3C": ViewGeometry(64, 64, 1.67, 7.0),
        "4C": ViewGeometry(64, 64, 1.72, 7.0),
        "SAX": ViewGeometry(64, 64, 1.85, 7.0),
    }


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian noise (std in heatmap units) plus optional blur."""

    std: float = 0.0
    blur_sigma_px: float = 0.0

    def __post_init__(self):
        if self.std < 0 or self.blur_sigma_px < 0:
            raise InvariantViolation("noise std and blur must be nonnegative")


@dataclass(frozen=True)
class PhantomConfig:
    seed: int
    view_geometry: Mapping[str, ViewGeometry] = field(default_factory=default_view_geometry)
    rotation_range_deg: float = 30.0
    alpha: float = 0.5
    noise: NoiseConfig = NoiseConfig()
    noise_seed: Optional[int] = None
    alternative_protocol: bool = False
    center_jitter_mm: float = 6.0
    basal_offset_mm: Tuple[float, float] = (25.0, 40.0)
    max_attempts: int = 100
    certify_recoverable: bool = True

    def __post_init__(self):
        for name, g in dict(self.view_geometry).items():
            if g.rows < 2 or g.cols < 2:
                raise InvariantViolation(f"view {name!r} extent must be at least 2x2")
        if not 0 < self.rotation_range_deg <= 45:
            raise InvariantViolation("rotation range must be in (0, 45] degrees")


@dataclass(frozen=True, eq=False)
class PhantomExam:
    """A generated exam: manifest, ground truth per target, and labels."""

    manifest: ExamManifest
    gt_planes: Dict[str, Plane3D]
    labels: LabelSet
    corrupted: Optional[LabelSet]
    dependency_map: DependencyMap
    config: PhantomConfig

    def gt_pose(self, target: str) -> SlicePose:
        return self.manifest.view(target).slices[0]

    def sources(self, target: str, corrupted: bool = False):
        labels = self.corrupted if corrupted else self.labels
        if labels is None:
            raise DegenerateGeometry("phantom has no corrupted labels")
        return prescribe.sources_for_target(self.manifest, labels, target, self.dependency_map)


def _rotate(v: np.ndarray, axis: np.ndarray, deg: float) -> np.ndarray:
    """Rodrigues rotation of v about a unit axis."""
    th = math.radians(deg)
    c, s = math.cos(th), math.sin(th)
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1.0 - c)


def _plane_axes(normal: np.ndarray, prefer: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal in-plane axes with row x col = normal."""
    row = prefer - (prefer @ normal) * normal
    nr = np.linalg.norm(row)
    if nr < 1e-6:
        # prefer is along the normal; fall back to the least-aligned global axis
        k = int(np.argmin(np.abs(normal)))
        e = np.zeros(3)
        e[k] = 1.0
        row = e - (e @ normal) * normal
        nr = np.linalg.norm(row)
    row = row / nr
    col = np.cross(normal, row)
    return row, col / np.linalg.norm(col)


def _pose(normal, center, geom: ViewGeometry, prefer) -> SlicePose:
    row, col = _plane_axes(normal, prefer)
    origin = (
        center
        - ((geom.cols - 1) / 2.0) * geom.spacing * row
        - ((geom.rows - 1) / 2.0) * geom.spacing * col
    )
    return SlicePose(origin, row, col, geom.spacing, geom.spacing,
                     geom.cols, geom.rows, geom.thickness)


def _stack(normal, center, geom: ViewGeometry, prefer) -> Tuple[SlicePose, ...]:
    poses = []
    for i in range(geom.n_slices):
        offset = (i - (geom.n_slices - 1) / 2.0) * geom.interval_mm
        poses.append(_pose(normal, center + offset * normal, geom, prefer))
    return tuple(poses)


def _draw_geometry(rng: np.random.Generator, config: PhantomConfig):
    """One deterministic draw of the full exam geometry.

    Draw counts are fixed so a rejected attempt consumes the same amount of
    randomness regardless of why it was rejected.
    """
    jit = config.center_jitter_mm
    heart = rng.uniform(-jit, jit, size=3)
    rot = rng.uniform(-config.rotation_range_deg, config.rotation_range_deg, size=3)
    psi_p4c = rng.uniform(78.0, 105.0)
    tilt_p4c = rng.uniform(7.0, 14.0)
    rho_2c = rng.uniform(-18.0, 18.0)
    rho_3c = rng.uniform(42.0, 60.0)
    rho_4c = rng.uniform(82.0, 108.0)
    basal = rng.uniform(*config.basal_offset_mm)
    view_jitter = rng.uniform(-4.0, 4.0, size=(8, 2))

    z = np.array([0.0, 0.0, 1.0])
    lax = _CANONICAL_LONG_AXIS
    for angle, axis in zip(rot, np.eye(3)):
        lax = _rotate(lax, axis, angle)
    lax = lax / np.linalg.norm(lax)

    geo = dict(config.view_geometry)
    jitters = dict(zip(("axial", "p2C", "p4C", "pSA", "2C", "3C", "4C", "SAX"), view_jitter))

    n_p2c = np.cross(z, lax)
    n_p2c = n_p2c / np.linalg.norm(n_p2c)
    m0 = _rotate(n_p2c, lax, psi_p4c)
    w = np.cross(m0, lax)
    n_p4c = _rotate(m0, w / np.linalg.norm(w), tilt_p4c)

    def inplane(normal, prefer, j):
        r, c = _plane_axes(normal, prefer)
        return j[0] * r + j[1] * c

    views = {}
    views["axial"] = _stack(z, heart + inplane(z, np.array([1.0, 0, 0]), jitters["axial"]),
                            geo["axial"], np.array([1.0, 0.0, 0.0]))
    views["p2C"] = (_pose(n_p2c, heart + inplane(n_p2c, lax, jitters["p2C"]), geo["p2C"], lax),)
    views["p4C"] = (_pose(n_p4c, heart + inplane(n_p4c, lax, jitters["p4C"]), geo["p4C"], lax),)
    views["pSA"] = _stack(lax, heart + inplane(lax, n_p2c, jitters["pSA"]), geo["pSA"], n_p2c)
    for name, rho in (("2C", rho_2c), ("3C", rho_3c), ("4C", rho_4c)):
        n_v = _rotate(n_p2c, lax, rho)
        views[name] = (_pose(n_v, heart + inplane(n_v, lax, jitters[name]), geo[name], lax),)
    q = heart + basal * lax
    views["SAX"] = (_pose(lax, q + inplane(lax, n_p2c, jitters["SAX"]), geo["SAX"], n_p2c),)
    return views, lax, z


def _edges_well_conditioned(views, deps: DependencyMap, min_angle_deg: float = 8.0) -> bool:
    min_cross = math.sin(math.radians(min_angle_deg))
    for target, sources in deps.edges:
        nt = views[target][0].normal
        for src in sources:
            ns = views[src][0].normal
            if np.linalg.norm(np.cross(ns, nt)) < min_cross:
                return False
    return True


def _gt_anchor_param(anchor: prescribe.AnchorSegment, gt: Plane3D) -> Optional[float]:
    """Continuous anchor parameter where the target plane crosses the anchor.

    None when the plane contains the anchor direction (the position is then
    unconstrained and any anchor index instantiates the same plane).
    """
    denom = float(gt.normal @ anchor.direction) * anchor.step_mm
    if abs(denom) < 1e-3 * anchor.step_mm:
        return None
    return float(gt.normal @ (gt.point - anchor.start)) / denom


def _recoverable(manifest, labels, deps, target, gt, gt_pose) -> bool:
    """Certify the phantom's oracle contract for one target.

    A usable phantom must let the default pyramid recover the ground truth
    from clean labels; margins are slightly tighter than the documented
    closed-loop bounds so certified exams keep headroom. The target plane
    must also cross the anchor segment away from its ends (unless it
    contains the anchor line, in which case the position is free).
    """
    sources = prescribe.sources_for_target(manifest, labels, target, deps)
    try:
        anchor = prescribe.build_anchor(sources)
    except (ParallelPlanes, EmptyIntersection):
        return False
    t_star = _gt_anchor_param(anchor, gt)
    if t_star is not None and not (3.0 <= t_star <= anchor.n_steps - 4.0):
        return False
    result = prescribe.pyramid_search(anchor, sources)
    deviation = math.degrees(
        math.acos(min(1.0, abs(float(result.plane.normal @ gt.normal))))
    )
    center = gt_pose.origin + (
        ((gt_pose.cols - 1) / 2.0) * gt_pose.spacing_x * gt_pose.row_dir
        + ((gt_pose.rows - 1) / 2.0) * gt_pose.spacing_y * gt_pose.col_dir
    )
    distance = abs(float(result.plane.normal @ (center - result.plane.point)))
    return deviation <= 1.2 and distance <= 1.2 * anchor.step_mm


def generate(config: PhantomConfig) -> PhantomExam:
    """Generate a protocol-consistent random exam with labels.

    Deterministic in the seed. Draws are rejected and redrawn, up to
    ``max_attempts``, when the geometry is degenerate (near-parallel
    dependency pairs, anchor crossings too close to the image border) or,
    with ``certify_recoverable`` set, when the default search does not
    recover a standard target from the clean labels within margin.
    """
    rng = np.random.default_rng(config.seed)
    deps = default_dependency_map(config.alternative_protocol)
    for _ in range(config.max_attempts):
        views, lax, z = _draw_geometry(rng, config)
        if abs(lax @ z) > math.cos(math.radians(10.0)):
            continue
        if not _edges_well_conditioned(views, deps):
            continue
        records = tuple(
            ViewRecord(name, name, views[name])
            for name in ("axial", "p2C", "p4C", "pSA", "2C", "3C", "4C", "SAX")
        )
        manifest = ExamManifest(f"phantom-{config.seed:04d}", records)
        gt_planes = {t: pose_to_plane(views[t][0]) for t in STANDARD_TARGETS}
        gt_planes.update({t: pose_to_plane(views[t][0]) for t in ("p2C", "p4C", "pSA")})
        labels = gen_labels(manifest, deps, config.alpha)
        if config.certify_recoverable and not all(
            _recoverable(manifest, labels, deps, t, gt_planes[t], views[t][0])
            for t in STANDARD_TARGETS
        ):
            continue
        corrupted = None
        if config.noise.std > 0 or config.noise.blur_sigma_px > 0:
            noise_seed = config.seed + 1 if config.noise_seed is None else config.noise_seed
            corrupted = corrupt(labels, config.noise, noise_seed)
        return PhantomExam(manifest, gt_planes, labels, corrupted, deps, config)
    raise DegenerateGeometry(
        f"no usable geometry after {config.max_attempts} attempts (seed {config.seed})"
    )


def corrupt(labels: LabelSet, noise: NoiseConfig, seed: int) -> LabelSet:
    """Seeded per-pixel Gaussian noise, clipped to [0, 1], optionally blurred.

    ``std == 0`` with no blur returns the input unchanged. Entries are
    processed in label-set order, so results are deterministic in the seed.
    """
    if noise.std == 0 and noise.blur_sigma_px == 0:
        return labels
    rng = np.random.default_rng(seed)
    entries = {}
    for key in labels.keys():
        values = labels.get(*key).values
        if noise.std > 0:
            values = values + rng.normal(0.0, noise.std, size=values.shape)
        values = np.clip(values, 0.0, 1.0)
        if noise.blur_sigma_px > 0:
            values = ndimage.gaussian_filter(values, noise.blur_sigma_px)
        entries[key] = Heatmap(values)
    order = {v: labels.targets_for(v) for v in labels.views()}
    return LabelSet(entries, order)


def tiny_config(seed: int, **overrides) -> PhantomConfig:
    """A small, fast phantom configuration for tests and demos."""
    cfg = PhantomConfig(seed=seed, view_geometry=tiny_view_geometry(),
                        center_jitter_mm=3.0, basal_offset_mm=(16.0, 26.0),
                        max_attempts=200)
    return replace(cfg, **overrides) if overrides else cfg
