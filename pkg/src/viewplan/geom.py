"""Slice-pose algebra.

Conversions between pixel and patient coordinates, plane construction,
plane-plane intersection, spherical parameterization of plane normals, and
clipping of infinite 2D lines against image rectangles.

Conventions used throughout the package:

* patient coordinates are in millimetres;
* pixel coordinates are continuous, with ``x`` the column index and ``y``
  the row index, and the origin at the centre of pixel ``(0, 0)``;
* all types are immutable after construction and all operations are pure,
  so everything here is safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import InvariantViolation, LineNotInPlane, ParallelPlanes

# Tolerances shared by the whole package.
UNIT_TOL = 1e-9
PARALLEL_TOL = 1e-8
CLIP_SLACK = 1e-6


def _vec3(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.shape != (3,):
        raise InvariantViolation(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


def _unit3(value, name: str) -> np.ndarray:
    arr = _vec3(value, name)
    if abs(np.linalg.norm(arr) - 1.0) > UNIT_TOL:
        raise InvariantViolation(f"{name} must be a unit vector (|{name}| = 1 within {UNIT_TOL})")
    return arr


@dataclass(frozen=True, eq=False)
class SlicePose:
    """Placement of a 2D image in 3D patient space.

    Parameters
    ----------
    origin : (3,) float
        Patient coordinates (mm) of the centre of pixel (0, 0).
    row_dir : (3,) unit float
        Direction of increasing column index.
    col_dir : (3,) unit float
        Direction of increasing row index; orthogonal to ``row_dir``.
    spacing_x, spacing_y : float
        Pixel pitch in mm along ``row_dir`` / ``col_dir``.
    cols, rows : int
        Image extent in pixels, at least 2 each.
    thickness : float
        Slice thickness in mm.
    """

    origin: np.ndarray
    row_dir: np.ndarray
    col_dir: np.ndarray
    spacing_x: float
    spacing_y: float
    cols: int
    rows: int
    thickness: float
    normal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin, "origin"))
        object.__setattr__(self, "row_dir", _unit3(self.row_dir, "row_dir"))
        object.__setattr__(self, "col_dir", _unit3(self.col_dir, "col_dir"))
        if abs(float(np.dot(self.row_dir, self.col_dir))) > UNIT_TOL:
            raise InvariantViolation("row_dir and col_dir must be orthogonal within 1e-9")
        for name in ("spacing_x", "spacing_y", "thickness"):
            v = float(getattr(self, name))
            if not (v > 0.0 and math.isfinite(v)):
                raise InvariantViolation(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        for name in ("cols", "rows"):
            v = getattr(self, name)
            if int(v) != v or int(v) < 2:
                raise InvariantViolation(f"{name} must be an integer >= 2, got {v}")
            object.__setattr__(self, name, int(v))
        n = np.cross(self.row_dir, self.col_dir)
        n = n / np.linalg.norm(n)
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True, eq=False)
class Plane3D:
    """A plane given by a point on it and a unit normal, both in mm."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vec3(self.point, "point"))
        object.__setattr__(self, "normal", _unit3(self.normal, "normal"))


@dataclass(frozen=True, eq=False)
class Line3D:
    """A line given by a point on it and a unit direction, both in mm."""

    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vec3(self.point, "point"))
        object.__setattr__(self, "direction", _unit3(self.direction, "direction"))


@dataclass(frozen=True)
class Line2D:
    """Implicit line a*x + b*y + c = 0 in pixel coordinates, canonical form.

    Canonical means a**2 + b**2 == 1 and the first nonzero of (a, b) is
    positive, so any rescaling of the same line maps to an identical triple.
    Construct through :meth:`from_coeffs` or :meth:`from_points`.
    """

    a: float
    b: float
    c: float

    @classmethod
    def from_coeffs(cls, a: float, b: float, c: float) -> "Line2D":
        h = math.hypot(a, b)
        if h == 0.0 or not math.isfinite(h):
            raise InvariantViolation("line coefficients require a^2 + b^2 > 0")
        a, b, c = a / h, b / h, c / h
        if a < 0.0 or (a == 0.0 and b < 0.0):
            a, b, c = -a, -b, -c
        # normalise -0.0 so equal lines compare bit-equal
        return cls(a + 0.0, b + 0.0, c + 0.0)

    @classmethod
    def from_points(cls, p: Tuple[float, float], q: Tuple[float, float]) -> "Line2D":
        x1, y1 = float(p[0]), float(p[1])
        x2, y2 = float(q[0]), float(q[1])
        return cls.from_coeffs(y1 - y2, x2 - x1, x1 * y2 - x2 * y1)

    def value(self, x: float, y: float) -> float:
        """Signed perpendicular pixel distance of (x, y) from the line."""
        return self.a * x + self.b * y + self.c

    def direction(self) -> Tuple[float, float]:
        """Unit direction vector along the line."""
        return (-self.b, self.a)


@dataclass(frozen=True, eq=False)
class Segment2D:
    """An in-image line segment in continuous pixel coordinates."""

    start: Tuple[float, float]
    end: Tuple[float, float]
    host: SlicePose

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class SphericalAngles:
    """Polar/azimuth angles (degrees) of a unit normal in patient coordinates.

    ``normal = (sin(theta)cos(phi), sin(theta)sin(phi), cos(theta))`` with
    theta in [0, 180] and phi in [0, 360).
    """

    theta: float
    phi: float

    def __post_init__(self):
        t, p = float(self.theta), float(self.phi)
        if not (0.0 <= t <= 180.0):
            raise InvariantViolation(f"theta must be in [0, 180], got {t}")
        if not (0.0 <= p < 360.0):
            raise InvariantViolation(f"phi must be in [0, 360), got {p}")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "phi", p)


def pose_to_plane(pose: SlicePose) -> Plane3D:
    """The plane a slice lies in: through its origin, normal row_dir x col_dir."""
    return Plane3D(pose.origin, pose.normal)


def image_to_patient(pose: SlicePose, px) -> np.ndarray:
    """Map continuous pixel coordinates to patient mm.

    ``px`` is an (x, y) pair or an (..., 2) array; the result has shape
    (..., 3). Points outside the image rectangle are allowed.
    """
    p = np.asarray(px, dtype=float)
    x = p[..., 0:1]
    y = p[..., 1:2]
    return pose.origin + x * (pose.spacing_x * pose.row_dir) + y * (pose.spacing_y * pose.col_dir)


def patient_to_image(pose: SlicePose, pt):
    """Project patient-space points onto the slice and express them in pixels.

    Returns ``(px, out_of_plane_mm)`` where ``px`` is the orthogonal
    projection in continuous pixel coordinates and ``out_of_plane_mm`` the
    signed distance along the slice normal.
    """
    d = np.asarray(pt, dtype=float) - pose.origin
    x = d @ pose.row_dir / pose.spacing_x
    y = d @ pose.col_dir / pose.spacing_y
    oop = d @ pose.normal
    return np.stack([x, y], axis=-1), oop


def intersect_planes(p1: Plane3D, p2: Plane3D) -> Line3D:
    """Intersection line of two planes.

    The returned direction is the normalised cross product of the normals;
    the returned point is the point of the line closest to the patient
    origin, which makes the representation deterministic.

    Raises
    ------
    ParallelPlanes
        If ``|n1 x n2| < 1e-8``.
    """
    d = np.cross(p1.normal, p2.normal)
    nd = np.linalg.norm(d)
    if nd < PARALLEL_TOL:
        raise ParallelPlanes("planes are parallel within tolerance 1e-8")
    d = d / nd
    # closest point to origin: on both planes and orthogonal to the direction
    mat = np.stack([p1.normal, p2.normal, d])
    rhs = np.array([p1.normal @ p1.point, p2.normal @ p2.point, 0.0])
    point = np.linalg.solve(mat, rhs)
    return Line3D(point, d)


def line3d_to_line2d(line: Line3D, pose: SlicePose) -> Line2D:
    """Express an in-plane 3D line in a slice's pixel coordinates.

    The line must lie in the slice plane: two probe points spanning the
    image extent must have out-of-plane residuals below 1e-6 mm.
    """
    probe = max(pose.cols * pose.spacing_x, pose.rows * pose.spacing_y, 1.0)
    pts = np.stack([line.point, line.point + probe * line.direction])
    px, oop = patient_to_image(pose, pts)
    if np.max(np.abs(oop)) > 1e-6:
        raise LineNotInPlane(
            f"line is out of the slice plane by {np.max(np.abs(oop)):.3g} mm"
        )
    return Line2D.from_points(tuple(px[0]), tuple(px[1]))


def clip_line(line: Line2D, pose: SlicePose) -> Optional[Segment2D]:
    """Clip an infinite pixel-space line against the image rectangle.

    The rectangle is ``[0, cols-1] x [0, rows-1]``. Returns ``None`` when
    the line misses the rectangle; a miss is a valid outcome, not an error.
    """
    xmax, ymax = pose.cols - 1.0, pose.rows - 1.0
    # point on the line closest to the pixel origin, unit direction
    px0, py0 = -line.a * line.c, -line.b * line.c
    dx, dy = -line.b, line.a
    t_lo, t_hi = -math.inf, math.inf
    for p0, d, hi in ((px0, dx, xmax), (py0, dy, ymax)):
        if abs(d) > 1e-15:
            t0 = (0.0 - p0) / d
            t1 = (hi - p0) / d
            if t0 > t1:
                t0, t1 = t1, t0
            t_lo = max(t_lo, t0)
            t_hi = min(t_hi, t1)
        elif p0 < -CLIP_SLACK or p0 > hi + CLIP_SLACK:
            return None
    if t_lo > t_hi:
        return None
    sx = min(max(px0 + t_lo * dx, 0.0), xmax)
    sy = min(max(py0 + t_lo * dy, 0.0), ymax)
    ex = min(max(px0 + t_hi * dx, 0.0), xmax)
    ey = min(max(py0 + t_hi * dy, 0.0), ymax)
    return Segment2D((sx, sy), (ex, ey), pose)


def normal_from_angles(angles: SphericalAngles) -> np.ndarray:
    """Unit normal for polar/azimuth angles given in degrees."""
    t = np.radians(angles.theta)
    p = np.radians(angles.phi)
    st = np.sin(t)
    return np.array([st * np.cos(p), st * np.sin(p), np.cos(t)])


def angles_from_normal(n) -> SphericalAngles:
    """Inverse of :func:`normal_from_angles`; phi is 0 by convention at the poles."""
    arr = np.asarray(n, dtype=float)
    norm = np.linalg.norm(arr)
    if abs(norm - 1.0) > 1e-6:
        raise InvariantViolation(f"normal must be unit length, |n| = {norm:.8f}")
    arr = arr / norm
    theta = math.degrees(math.acos(min(1.0, max(-1.0, float(arr[2])))))
    phi = math.degrees(math.atan2(float(arr[1]), float(arr[0])))
    if phi < 0.0:
        phi += 360.0
    if phi >= 360.0:
        phi = 0.0
    return SphericalAngles(theta, phi)
