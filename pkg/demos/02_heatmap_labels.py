"""
Intersecting-line heatmap labels
================================

Generate a synthetic exam, render its label set from the slice poses
alone, and write one slice's labels plus a line overlay for inspection.
"""

from pathlib import Path

from viewplan import generate, tiny_config
from viewplan import io as vio
from viewplan.geom import intersect_planes, line3d_to_line2d, pose_to_plane

out = Path("demo_output/labels")
out.mkdir(parents=True, exist_ok=True)

exam = generate(tiny_config(seed=1))
labels = exam.labels

print("views with labels:", labels.views())
print("channels rendered from p2C:", labels.targets_for("p2C"))

hm = labels.get("p2C", 0, "4C")
print("label extent:", hm.rows, "x", hm.cols, " max:", hm.values.max())

# the ridge of the label follows the geometric intersection line
pose = exam.manifest.view("p2C").slices[0]
line = line3d_to_line2d(
    intersect_planes(pose_to_plane(pose), exam.gt_planes["4C"]), pose
)
print("ridge line: %.3f x + %.3f y + %.3f = 0" % (line.a, line.b, line.c))

vio.write_heatmaps(out / "p2C_000.hmap", [labels.get("p2C", 0, t)
                                          for t in labels.targets_for("p2C")])
vio.write_overlay(out / "p2C_4C.pgm", hm.values, [(line, "gt")])
print("wrote", out / "p2C_000.hmap", "and", out / "p2C_4C.pgm")
