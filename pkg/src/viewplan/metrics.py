"""Evaluation of automatic planes against ground truth.

Two per-case metrics: the absolute angular difference between plane
normals, and the distance from the centre of the ground-truth view image
to the automatic plane. Batch aggregation reports mean and sample standard
deviation per target plus an overall row computed over the per-target
means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import EmptyGroup, InvariantViolation
from .geom import Plane3D, SlicePose, image_to_patient


@dataclass(frozen=True)
class PlaneMetrics:
    normal_deviation_deg: float
    point_to_plane_mm: float

    def __post_init__(self):
        if not (0.0 <= self.normal_deviation_deg <= 90.0):
            raise InvariantViolation(
                f"normal deviation must be in [0, 90], got {self.normal_deviation_deg}"
            )
        if not self.point_to_plane_mm >= 0.0:
            raise InvariantViolation(
                f"point-to-plane distance must be nonnegative, got {self.point_to_plane_mm}"
            )


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    n: int


@dataclass(frozen=True, eq=False)
class Report:
    """Per-case metrics with per-target and overall mean +/- std."""

    cases: Tuple[Tuple[str, PlaneMetrics], ...]
    per_target: Dict[str, Tuple[Stats, Stats]]  # target -> (normal, distance)
    overall: Tuple[Stats, Stats]


def normal_deviation(auto: Plane3D, gt: Plane3D) -> float:
    """Absolute angle between plane normals in degrees, in [0, 90].

    Invariant to flipping the sign of either normal.
    """
    d = abs(float(np.dot(auto.normal, gt.normal)))
    return math.degrees(math.acos(min(1.0, d)))


def point_to_plane(gt_pose: SlicePose, auto: Plane3D) -> float:
    """Distance in mm from the ground-truth image centre to the automatic plane."""
    center = image_to_patient(gt_pose, ((gt_pose.cols - 1) / 2.0, (gt_pose.rows - 1) / 2.0))
    return abs(float(np.dot(auto.normal, center - auto.point)))


def _stats(values: Sequence[float]) -> Stats:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return Stats(mean, std, int(arr.size))


def aggregate(cases: Sequence[PlaneMetrics], groups: Sequence[str]) -> Report:
    """Group per-case metrics by target and compute the summary rows.

    Per-target rows use the sample standard deviation (ddof=1, 0 for a
    single case). The overall row averages the per-target means, and its
    std is the sample std across those means.
    """
    if len(cases) != len(groups):
        raise InvariantViolation("cases and groups must have equal length")
    if not cases:
        raise EmptyGroup("no cases to aggregate")
    order = []
    by_group: Dict[str, list] = {}
    for metrics, group in zip(cases, groups):
        if group not in by_group:
            by_group[group] = []
            order.append(group)
        by_group[group].append(metrics)
    per_target = {}
    for group in sorted(order):
        ms = by_group[group]
        per_target[group] = (
            _stats([m.normal_deviation_deg for m in ms]),
            _stats([m.point_to_plane_mm for m in ms]),
        )
    overall = (
        _stats([per_target[g][0].mean for g in sorted(order)]),
        _stats([per_target[g][1].mean for g in sorted(order)]),
    )
    return Report(tuple(zip(groups, cases)), per_target, overall)
