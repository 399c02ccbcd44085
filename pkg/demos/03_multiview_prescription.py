"""
Multi-view plane prescription
=============================

The closed loop: prescribe the standard views of a synthetic exam from its
own clean labels and compare against the known ground-truth planes.
"""

from viewplan import (
    build_anchor,
    generate,
    line_search_degenerate,
    normal_deviation,
    point_to_plane,
    pyramid_search,
    tiny_config,
)

exam = generate(tiny_config(seed=2))

print(f"{'target':>6} {'deviation':>10} {'distance':>10} {'score':>9} {'visited':>8}")
for target in ("2C", "3C", "4C", "SAX"):
    sources = exam.sources(target)
    anchor = build_anchor(sources)
    result = pyramid_search(anchor, sources)
    nd = normal_deviation(result.plane, exam.gt_planes[target])
    pp = point_to_plane(exam.gt_pose(target), result.plane)
    print(f"{target:>6} {nd:9.2f}d {pp:8.2f}mm {result.score:9.1f} {result.visited:8d}")

# a plane orthogonal to its only source degenerates into a 2D line search
view = exam.manifest.view("axial")
heatmaps = tuple(exam.labels.get("axial", i, "p2C") for i in range(len(view.slices)))
from viewplan import SourceView

result = line_search_degenerate(SourceView("axial", view.slices, heatmaps))
nd = normal_deviation(result.plane, exam.gt_planes["p2C"])
print(f"\np2C from the axial stack alone: {nd:.2f} deg off, "
      f"line (offset, angle) = {result.line_params}")
