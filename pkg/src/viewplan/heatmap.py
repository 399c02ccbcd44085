"""Intersecting-line heatmap labels and the matching L2 loss.

A label heatmap encodes a 2D line as a Gaussian of the perpendicular pixel
distance: ``H(x, y) = exp(-(ax+by+c)^2 / (2 sigma^2 (a^2+b^2)))``. The
kernel width sigma is tied to the slice thickness of the target view and
converted to source pixels. Exam-level label generation walks the
view-dependency table and renders one heatmap per (source slice, target).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Tuple

import numpy as np

from .errors import InvariantViolation, MissingView, ParallelPlanes, ShapeMismatch
from .exam import ExamManifest
from .geom import (
    Line2D,
    SlicePose,
    intersect_planes,
    line3d_to_line2d,
    pose_to_plane,
)

LabelKey = Tuple[str, int, str]  # (source view id, slice index, target id)


@dataclass(frozen=True, eq=False)
class Heatmap:
    """A per-pixel float raster, row-major, matching its host slice extent."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 2:
            raise InvariantViolation(f"heatmap must be 2D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvariantViolation("heatmap values must all be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel size: ratio ``alpha`` to target thickness, resolved to pixels."""

    alpha: float
    sigma_px: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvariantViolation(f"alpha must be positive, got {self.alpha}")
        if not self.sigma_px > 0:
            raise InvariantViolation(f"sigma_px must be positive, got {self.sigma_px}")

    @classmethod
    def for_target(cls, target_pose: SlicePose, source_pose: SlicePose, alpha: float = 0.5):
        return cls(alpha, sigma_for_target(target_pose, source_pose, alpha))


def sigma_for_target(target_pose: SlicePose, source_pose: SlicePose, alpha: float) -> float:
    """Kernel width in source pixels: alpha times the target slice thickness.

    The mm value is converted with the mean of the source view's two pixel
    spacings (exact for isotropic pixels, graceful for anisotropic ones).
    """
    if not alpha > 0:
        raise InvariantViolation(f"alpha must be positive, got {alpha}")
    sigma_mm = alpha * target_pose.thickness
    return sigma_mm / ((source_pose.spacing_x + source_pose.spacing_y) / 2.0)


def render_heatmap(line: Line2D, pose: SlicePose, kernel: KernelConfig) -> Heatmap:
    """Evaluate the line-distance Gaussian at every integer pixel of a slice.

    On-line pixels get exactly 1; a pixel at perpendicular distance d gets
    ``exp(-d^2 / (2 sigma^2))``. Values are kept as unquantized float64;
    quantization happens only at file export. Far pixels may underflow to
    exactly 0 in floating point.
    """
    xs = np.arange(pose.cols, dtype=float)
    ys = np.arange(pose.rows, dtype=float)
    d = line.a * xs[None, :] + line.b * ys[:, None] + line.c
    denom = 2.0 * kernel.sigma_px**2 * (line.a**2 + line.b**2)
    return Heatmap(np.exp(-(d * d) / denom))


@dataclass(frozen=True)
class DependencyMap:
    """Ordered target -> source-views table driving label generation.

    ``edges`` is an ordered tuple of ``(target id, (source ids...))``. The
    order fixes both the channel order per source view and the default
    anchor pair used when prescribing.
    """

    edges: Tuple[Tuple[str, Tuple[str, ...]], ...]

    def __post_init__(self):
        seen = set()
        norm = []
        for target, sources in self.edges:
            if target in seen:
                raise InvariantViolation(f"duplicate target {target!r} in dependency map")
            seen.add(target)
            sources = tuple(sources)
            if target in sources:
                raise InvariantViolation(f"target {target!r} depends on itself")
            if not sources:
                raise InvariantViolation(f"target {target!r} has no source views")
            norm.append((target, sources))
        object.__setattr__(self, "edges", tuple(norm))

    def targets(self) -> Tuple[str, ...]:
        return tuple(t for t, _ in self.edges)

    def sources_of(self, target: str) -> Tuple[str, ...]:
        for t, sources in self.edges:
            if t == target:
                return sources
        raise MissingView(f"target {target!r} is not in the dependency map")

    def targets_from(self, source: str) -> Tuple[str, ...]:
        """Targets that list ``source`` as a source view, in table order."""
        return tuple(t for t, sources in self.edges if source in sources)


def default_dependency_map(alternative: bool = False) -> DependencyMap:
    """The standard view-dependency table.

    ``alternative=True`` selects the protocol variant in which the p4C
    localizer is planned before the pSA stack (pSA then also uses p4C, and
    p4C is planned from p2C alone).
    """
    if alternative:
        psa_sources: Tuple[str, ...] = ("p2C", "p4C")
        p4c_sources: Tuple[str, ...] = ("p2C",)
    else:
        psa_sources = ("p2C",)
        p4c_sources = ("p2C", "pSA")
    return DependencyMap(
        (
            ("p2C", ("axial",)),
            ("pSA", psa_sources),
            ("p4C", p4c_sources),
            ("2C", ("p4C", "pSA")),
            ("3C", ("p2C", "p4C", "pSA")),
            ("4C", ("p2C", "pSA")),
            ("SAX", ("p2C", "p4C")),
        )
    )


class LabelSet:
    """Heatmaps keyed by (source view, slice index, target), in a fixed order.

    The per-source channel order follows the dependency table; iteration
    order is deterministic so downstream consumers (files, noise, loss) are
    reproducible bit for bit.
    """

    def __init__(self, entries: Mapping[LabelKey, Heatmap],
                 target_order: Mapping[str, Tuple[str, ...]]):
        self._entries: Dict[LabelKey, Heatmap] = dict(entries)
        self._target_order = {v: tuple(ts) for v, ts in target_order.items()}

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self) -> Tuple[LabelKey, ...]:
        return tuple(self._entries.keys())

    def get(self, view_id: str, slice_index: int, target: str) -> Heatmap:
        try:
            return self._entries[(view_id, slice_index, target)]
        except KeyError:
            raise MissingView(
                f"label set has no heatmap for ({view_id!r}, {slice_index}, {target!r})"
            ) from None

    def views(self) -> Tuple[str, ...]:
        seen = []
        for v, _, _ in self._entries:
            if v not in seen:
                seen.append(v)
        return tuple(seen)

    def targets_for(self, view_id: str) -> Tuple[str, ...]:
        return self._target_order[view_id]

    def slice_count(self, view_id: str) -> int:
        return 1 + max(i for v, i, _ in self._entries if v == view_id)

    def slice_groups(self) -> Iterator[Tuple[str, int]]:
        seen = []
        for v, i, _ in self._entries:
            if (v, i) not in seen:
                seen.append((v, i))
        return iter(seen)

    def stack(self, view_id: str, slice_index: int) -> np.ndarray:
        """Channel stack (T, rows, cols) for one source slice, table order."""
        maps = [self.get(view_id, slice_index, t) for t in self._target_order[view_id]]
        return np.stack([m.values for m in maps])

    def equals_exact(self, other: "LabelSet") -> bool:
        if self.keys() != other.keys():
            return False
        return all(
            np.array_equal(self._entries[k].values, other._entries[k].values)
            for k in self._entries
        )


def gen_labels(exam: ExamManifest, deps: DependencyMap, alpha: float = 0.5) -> LabelSet:
    """Render the full label set of an exam from its slice poses.

    For every dependency edge and every slice of the source view, the
    target plane is intersected with the slice plane, expressed in the
    slice's pixel coordinates, and rendered as a distance Gaussian. For a
    stacked target view the first slice of the stack is the target plane.

    Raises
    ------
    MissingView
        When the dependency table references a view absent from the exam.
    ParallelPlanes
        When a (source slice, target) pair has parallel planes; the message
        names the offending pair.
    """
    entries: Dict[LabelKey, Heatmap] = {}
    order: Dict[str, Tuple[str, ...]] = {}
    for target, sources in deps.edges:
        target_pose = exam.view(target).slices[0]
        target_plane = pose_to_plane(target_pose)
        for src in sources:
            view = exam.view(src)
            if src not in order:
                order[src] = deps.targets_from(src)
            for idx, pose in enumerate(view.slices):
                try:
                    line3 = intersect_planes(pose_to_plane(pose), target_plane)
                except ParallelPlanes:
                    raise ParallelPlanes(
                        f"source {src!r} slice {idx} is parallel to target {target!r}"
                    ) from None
                line2 = line3d_to_line2d(line3, pose)
                kernel = KernelConfig(alpha, sigma_for_target(target_pose, pose, alpha))
                entries[(src, idx, target)] = render_heatmap(line2, pose, kernel)
    return LabelSet(entries, order)


def l2_loss(truth: LabelSet, pred: LabelSet) -> float:
    """Mean per-slice-group L2 loss between two label sets.

    For one source slice with T channels over |omega| pixels the loss is
    ``(1/T)(1/|omega|) sum_t sum_xy (H - Hhat)^2``; the value returned is
    the unweighted mean of that quantity over all slice groups.
    """
    if set(truth.keys()) != set(pred.keys()):
        raise ShapeMismatch("label sets have different (view, slice, target) keys")
    per_group = []
    for view, idx in truth.slice_groups():
        a = truth.stack(view, idx)
        b = pred.stack(view, idx)
        if a.shape != b.shape:
            raise ShapeMismatch(
                f"extent mismatch for ({view!r}, {idx}): {a.shape} vs {b.shape}"
            )
        diff = a - b
        per_group.append(float(np.mean(diff * diff)))
    if not per_group:
        raise ShapeMismatch("label sets are empty")
    return float(np.mean(per_group))
