"""
The file-based pipeline
=======================

Drive the four CLI stages end to end: emit a phantom, regenerate its
labels from the manifest, prescribe the standard views, and evaluate the
result against the manifest's own ground truth.
"""

import json
import subprocess
import sys
from pathlib import Path

out = Path("demo_output/pipeline")
out.mkdir(parents=True, exist_ok=True)


def run(*args):
    cmd = [sys.executable, "-m", "viewplan.cli", *args]
    print("$", " ".join(args))
    subprocess.run(cmd, check=True)


run("phantom", "--seed", "42", "--out", str(out / "exam"))
run("gen-labels", "--manifest", str(out / "exam/manifest.json"),
    "--out", str(out / "labels"))
run("prescribe", "--manifest", str(out / "exam/manifest.json"),
    "--heatmaps", str(out / "labels"), "--targets", "2C,3C,4C,SAX",
    "--out", str(out / "planes"))
run("evaluate", "--auto", str(out / "planes/planes.json"),
    "--gt-manifest", str(out / "exam/manifest.json"), "--out", str(out / "report"))
run("loss", "--truth", str(out / "exam/labels"), "--pred", str(out / "labels"))

report = json.loads((out / "report/report.json").read_text())
print(json.dumps(report["overall"], indent=2))
