"""Command-line entry points wiring the modules into a batch workflow.

Subcommands::

    viewplan phantom    --seed N --out DIR [--alpha A] [--noise-std S] ...
    viewplan gen-labels --manifest M --out DIR [--alpha A] ...
    viewplan prescribe  --manifest M --heatmaps DIR --targets T1,T2 --out DIR ...
    viewplan evaluate   --auto planes.json --gt-manifest M --out DIR
    viewplan loss       --truth DIR --pred DIR

Exit codes: 0 success, 2 validation error (schema, missing views or files,
bad flags), 3 geometric degeneracy (parallel planes, empty intersections).
Every subcommand is deterministic given its flags; rerunning overwrites
outputs bit-identically. The stages compose through files only:
``phantom -> gen-labels -> prescribe -> evaluate``.

The prescribed-planes file (``planes.json``) holds ``{"exam_id", "planes":
{target: {"point", "normal", "score", "visited", "degenerate_zero_score",
...}}}`` and is both written by ``prescribe`` and read by ``evaluate``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as vio
from .errors import (
    CliError,
    DegenerateGeometry,
    EmptyGroup,
    EmptyIntersection,
    HeatmapFormatError,
    InvariantViolation,
    LineNotInPlane,
    MissingView,
    ParallelPlanes,
    SchemaError,
    SearchSpaceTooLarge,
    ShapeMismatch,
)
from .geom import Plane3D, intersect_planes, line3d_to_line2d, pose_to_plane
from .heatmap import DependencyMap, default_dependency_map, gen_labels
from .metrics import PlaneMetrics, aggregate, normal_deviation, point_to_plane
from .phantom import NoiseConfig, PhantomConfig, generate
from .prescribe import (
    SearchConfig,
    build_anchor,
    line_search_degenerate,
    pyramid_search,
    sources_for_target,
)

_VALIDATION_ERRORS = (
    SchemaError,
    InvariantViolation,
    MissingView,
    ShapeMismatch,
    SearchSpaceTooLarge,
    HeatmapFormatError,
    EmptyGroup,
    CliError,
)
_GEOMETRY_ERRORS = (ParallelPlanes, EmptyIntersection, DegenerateGeometry, LineNotInPlane)


def _deps_for(exam, alternative: bool) -> DependencyMap:
    if exam.dependencies is not None:
        return DependencyMap(tuple((t, ss) for t, ss in exam.dependencies.items()))
    return default_dependency_map(alternative)


def _parse_steps(text: str):
    try:
        steps = tuple((int(s), int(s)) for s in text.split(","))
    except ValueError:
        raise CliError(f"bad --steps value {text!r}; expected e.g. 15,5,1") from None
    return steps


def cmd_phantom(args) -> int:
    noise = NoiseConfig(std=args.noise_std, blur_sigma_px=args.blur)
    config = PhantomConfig(
        seed=args.seed,
        alpha=args.alpha,
        noise=noise,
        alternative_protocol=args.alternative_protocol,
        rotation_range_deg=args.rotation_range,
    )
    exam = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vio.save_manifest(out / "manifest.json", exam.manifest)
    vio.write_labelset(out / "labels", exam.labels)
    if exam.corrupted is not None:
        vio.write_labelset(out / "labels_noisy", exam.corrupted)
    print(f"wrote {out / 'manifest.json'} and labels for seed {args.seed}")
    return 0


def cmd_gen_labels(args) -> int:
    exam = vio.load_manifest(args.manifest)
    deps = _deps_for(exam, args.alternative_protocol)
    labels = gen_labels(exam, deps, args.alpha)
    names = vio.write_labelset(args.out, labels)
    print(f"wrote {len(names)} heatmap files to {args.out}")
    return 0


def _prescribe_one(exam, labels, deps, target, config, anchor_pair=None):
    sources = sources_for_target(exam, labels, target, deps)
    if len(sources) == 1:
        return line_search_degenerate(sources[0], config), sources
    pair = None
    if anchor_pair is not None:
        ids = [s.view_id for s in sources]
        missing = [v for v in anchor_pair if v not in ids]
        if missing:
            raise CliError(
                f"anchor pair {anchor_pair} not among the sources {ids} of {target!r}"
            )
        pair = (ids.index(anchor_pair[0]), ids.index(anchor_pair[1]))
    anchor = build_anchor(sources, pair)
    return pyramid_search(anchor, sources, config), sources


def cmd_prescribe(args) -> int:
    exam = vio.load_manifest(args.manifest)
    deps = _deps_for(exam, args.alternative_protocol)
    targets = args.targets.split(",")
    for t in targets:
        if t not in deps.targets():
            raise CliError(f"unknown target {t!r}; dependency table has {deps.targets()}")
    labels = vio.read_labelset(args.heatmaps, exam, deps)
    config = SearchConfig(steps=_parse_steps(args.steps), mode=args.mode)
    anchor_pair = None
    if args.anchor_pair:
        parts = args.anchor_pair.split(",")
        if len(parts) != 2:
            raise CliError(f"bad --anchor-pair {args.anchor_pair!r}; expected VIEW,VIEW")
        anchor_pair = tuple(parts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    planes = {}
    for target in targets:
        result, sources = _prescribe_one(exam, labels, deps, target, config, anchor_pair)
        planes[target] = {
            "point": [float(x) for x in result.plane.point],
            "normal": [float(x) for x in result.plane.normal],
            "score": result.score,
            "visited": result.visited,
            "degenerate_zero_score": result.degenerate_zero_score,
        }
        if result.candidate is not None:
            planes[target]["anchor_index"] = result.candidate.anchor_index
            planes[target]["theta_deg"] = result.candidate.angles.theta
            planes[target]["phi_deg"] = result.candidate.angles.phi
        if result.line_params is not None:
            planes[target]["offset_px"], planes[target]["angle_deg"] = result.line_params
        if args.overlays:
            _write_overlays(out / "overlays", exam, target, result, sources)
    doc = {"exam_id": exam.exam_id, "planes": planes}
    (out / "planes.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"wrote {out / 'planes.json'} ({len(planes)} targets)")
    return 0


def _write_overlays(directory, exam, target, result, sources):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gt_plane = pose_to_plane(exam.view(target).slices[0]) if exam.has_view(target) else None
    for view in sources:
        for idx, pose in enumerate(view.slices):
            lines = []
            try:
                auto = line3d_to_line2d(
                    intersect_planes(pose_to_plane(pose), result.plane), pose)
                lines.append((auto, "auto"))
            except (ParallelPlanes, LineNotInPlane):
                pass
            if gt_plane is not None:
                try:
                    gt = line3d_to_line2d(
                        intersect_planes(pose_to_plane(pose), gt_plane), pose)
                    lines.append((gt, "gt"))
                except (ParallelPlanes, LineNotInPlane):
                    pass
            name = f"{target}__{view.view_id}_{idx:03d}.pgm"
            vio.write_overlay(directory / name, (pose.rows, pose.cols), lines)


def cmd_evaluate(args) -> int:
    doc = json.loads(Path(args.auto).read_text())
    if not isinstance(doc, dict) or "planes" not in doc or "exam_id" not in doc:
        raise SchemaError(f"{args.auto}: expected a planes.json document")
    exam = vio.load_manifest(args.gt_manifest)
    if doc["exam_id"] != exam.exam_id:
        raise CliError(
            f"exam id mismatch: planes are for {doc['exam_id']!r},"
            f" manifest is {exam.exam_id!r}"
        )
    cases = []
    rows = []
    groups = []
    for target in sorted(doc["planes"]):
        entry = doc["planes"][target]
        plane = Plane3D(np.array(entry["point"]), np.array(entry["normal"]))
        gt_pose = exam.view(target).slices[0]
        gt_plane = pose_to_plane(gt_pose)
        m = PlaneMetrics(normal_deviation(plane, gt_plane), point_to_plane(gt_pose, plane))
        cases.append(m)
        groups.append(target)
        rows.append((exam.exam_id, target, m))
    report = aggregate(cases, groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vio.write_report_json(out / "report.json", report, rows)
    vio.write_report_csv(out / "report.csv", rows)
    nd, pp = report.overall
    print(f"overall: normal deviation {nd.mean:.2f} deg, point-to-plane {pp.mean:.2f} mm")
    return 0


def cmd_loss(args) -> int:
    truth_dir, pred_dir = Path(args.truth), Path(args.pred)
    truth_names = sorted(p.name for p in truth_dir.glob("*.hmap"))
    pred_names = sorted(p.name for p in pred_dir.glob("*.hmap"))
    if not truth_names:
        raise CliError(f"no .hmap files in {truth_dir}")
    if truth_names != pred_names:
        raise ShapeMismatch(
            f"directories hold different files: {len(truth_names)} vs {len(pred_names)}"
        )
    per_file = []
    for name in truth_names:
        a = np.stack([h.values for h in vio.read_heatmaps(truth_dir / name)])
        b = np.stack([h.values for h in vio.read_heatmaps(pred_dir / name)])
        if a.shape != b.shape:
            raise ShapeMismatch(f"{name}: shape {a.shape} vs {b.shape}")
        d = a - b
        per_file.append(float(np.mean(d * d)))
    loss = float(np.mean(per_file))
    print(f"{loss:.17g}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewplan",
        description="imaging-plane prescription toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic exam with labels")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--blur", type=float, default=0.0)
    p.add_argument("--rotation-range", type=float, default=30.0)
    p.add_argument("--alternative-protocol", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("gen-labels", help="render label heatmaps from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--alternative-protocol", action="store_true")
    p.set_defaults(func=cmd_gen_labels)

    p = sub.add_parser("prescribe", help="search for target planes from heatmaps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--targets", required=True, help="comma-separated target ids")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", default="15,5,1")
    p.add_argument("--mode", choices=("bilinear", "nearest"), default="bilinear")
    p.add_argument("--anchor-pair", default=None,
                   help="two source view ids defining the anchor segment")
    p.add_argument("--alternative-protocol", action="store_true")
    p.add_argument("--overlays", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_prescribe)

    p = sub.add_parser("evaluate", help="compare prescribed planes to ground truth")
    p.add_argument("--auto", required=True, help="planes.json from prescribe")
    p.add_argument("--gt-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loss", help="L2 loss between two label directories")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_loss)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _GEOMETRY_ERRORS as e:
        print(f"degenerate geometry: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
