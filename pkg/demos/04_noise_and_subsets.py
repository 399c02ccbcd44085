"""
Noise robustness and the value of extra views
=============================================

Corrupt one source view's labels and compare full three-view aggregation
against every two-view subset when prescribing the 3C plane.
"""

import numpy as np

from viewplan import (
    NoiseConfig,
    build_anchor,
    corrupt,
    generate,
    normal_deviation,
    pyramid_search,
    tiny_config,
)
from viewplan.prescribe import sources_for_target

TARGET = "3C"

errors = {}
for seed in range(4):
    exam = generate(tiny_config(seed))
    noisy = corrupt(exam.labels, NoiseConfig(std=0.3), seed=seed + 99)
    clean = sources_for_target(exam.manifest, exam.labels, TARGET, exam.dependency_map)
    dirty = sources_for_target(exam.manifest, noisy, TARGET, exam.dependency_map)
    # pSA carries the corrupted predictions; the LAX views stay clean
    sources = [dirty[i] if v.view_id == "pSA" else clean[i]
               for i, v in enumerate(clean)]

    def run(subset):
        anchor = build_anchor(subset)
        res = pyramid_search(anchor, subset)
        return normal_deviation(res.plane, exam.gt_planes[TARGET])

    errors.setdefault("full", []).append(run(sources))
    for drop in range(3):
        kept = [s for i, s in enumerate(sources) if i != drop]
        name = "+".join(s.view_id for s in kept)
        errors.setdefault(name, []).append(run(kept))

for name, vals in errors.items():
    print(f"{name:>12}: mean normal deviation {np.mean(vals):6.2f} deg")
