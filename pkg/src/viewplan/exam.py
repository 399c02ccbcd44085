"""Exam manifest: the in-memory carrier of per-view slice poses.

An exam is an ordered collection of views (axial, p2C, p4C, pSA, 2C, 3C,
4C, SAX); each view is an ordered stack of slices. Parsing/serialization of
the on-disk manifest format lives in :mod:`viewplan.io`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

import numpy as np

from .errors import InvariantViolation, MissingView
from .geom import SlicePose

VIEW_ROLES = ("axial", "p2C", "p4C", "pSA", "2C", "3C", "4C", "SAX")

# Angle tolerance (as cross-product magnitude) for "slices share a normal".
STACK_NORMAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ViewRecord:
    """One view: an id, a role, and an ordered stack of slice poses."""

    view_id: str
    role: str
    slices: Tuple[SlicePose, ...]

    def __post_init__(self):
        if self.role not in VIEW_ROLES:
            raise InvariantViolation(f"unknown view role {self.role!r}")
        if not self.slices:
            raise InvariantViolation(f"view {self.view_id!r} has no slices")
        object.__setattr__(self, "slices", tuple(self.slices))
        n0 = self.slices[0].normal
        for i, s in enumerate(self.slices[1:], start=1):
            if np.linalg.norm(np.cross(n0, s.normal)) > STACK_NORMAL_TOL or n0 @ s.normal <= 0:
                raise InvariantViolation(
                    f"view {self.view_id!r} slice {i} does not share the stack normal"
                )


@dataclass(frozen=True, eq=False)
class ExamManifest:
    """All views of one exam plus optional dependency overrides."""

    exam_id: str
    views: Tuple[ViewRecord, ...]
    dependencies: Optional[Mapping[str, Tuple[str, ...]]] = None
    _by_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        by_id = {}
        for v in self.views:
            if v.view_id in by_id:
                raise InvariantViolation(f"duplicate view id {v.view_id!r}")
            by_id[v.view_id] = v
        object.__setattr__(self, "_by_id", by_id)
        if self.dependencies is not None:
            deps = {str(t): tuple(str(s) for s in ss) for t, ss in dict(self.dependencies).items()}
            object.__setattr__(self, "dependencies", deps)

    def has_view(self, view_id: str) -> bool:
        return view_id in self._by_id

    def view(self, view_id: str) -> ViewRecord:
        try:
            return self._by_id[view_id]
        except KeyError:
            raise MissingView(f"exam {self.exam_id!r} has no view {view_id!r}") from None

    def view_ids(self) -> Tuple[str, ...]:
        return tuple(v.view_id for v in self.views)
