"""
Slice-pose geometry basics
==========================

Build a slice pose, move between pixel and patient coordinates, intersect
two view planes, and express the intersection in a view's pixel frame.
"""

import numpy as np

from viewplan import (
    SlicePose,
    clip_line,
    image_to_patient,
    intersect_planes,
    line3d_to_line2d,
    patient_to_image,
    pose_to_plane,
)

# An axial slice: rows grow along +y, columns along +x, 1.5 mm pixels.
axial = SlicePose(
    origin=(-120.0, -120.0, 40.0),
    row_dir=(1.0, 0.0, 0.0),
    col_dir=(0.0, 1.0, 0.0),
    spacing_x=1.5,
    spacing_y=1.5,
    cols=160,
    rows=160,
    thickness=6.0,
)

center_px = ((axial.cols - 1) / 2, (axial.rows - 1) / 2)
center_mm = image_to_patient(axial, center_px)
print("image centre in patient mm:", center_mm)

back_px, out_of_plane = patient_to_image(axial, center_mm)
print("round trip:", back_px, "out-of-plane:", out_of_plane)

# A second, oblique view through the same centre.
n = np.array([0.6, 0.0, 0.8])
row = np.array([0.8, 0.0, -0.6])
col = np.cross(n, row)
oblique = SlicePose(center_mm - 80 * row - 80 * col, row, col, 1.0, 1.0, 160, 160, 6.0)

line3 = intersect_planes(pose_to_plane(axial), pose_to_plane(oblique))
print("intersection direction:", line3.direction)

line2 = line3d_to_line2d(line3, axial)
print("in axial pixels: %.3f x + %.3f y + %.3f = 0" % (line2.a, line2.b, line2.c))

segment = clip_line(line2, axial)
print("clipped to the image:", segment.start, "->", segment.end)
