import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from viewplan import io as vio
from viewplan import phantom
from viewplan.errors import (
    BadMagic,
    InvariantViolation,
    NonFiniteValue,
    SchemaError,
    TruncatedPayload,
)
from viewplan.geom import Line2D
from viewplan.heatmap import Heatmap, default_dependency_map
from viewplan.metrics import PlaneMetrics, aggregate

from conftest import axial_pose

DATA = Path(__file__).parent / "data"


def _minimal_manifest_doc():
    return {
        "exam_id": "t1",
        "views": [
            {
                "view_id": "axial",
                "role": "axial",
                "slices": [
                    {
                        "origin": [0.0, 0.0, 0.0],
                        "row_dir": [1.0, 0.0, 0.0],
                        "col_dir": [0.0, 1.0, 0.0],
                        "spacing": [1.25, 1.25],
                        "cols": 16,
                        "rows": 12,
                        "thickness": 6.0,
                    }
                ],
            }
        ],
    }


class TestManifest:
    def test_minimal_round_trip(self):
        text = json.dumps(_minimal_manifest_doc())
        exam = vio.parse_manifest(text)
        assert exam.exam_id == "t1"
        again = vio.parse_manifest(vio.serialize_manifest(exam))
        pose_a = exam.view("axial").slices[0]
        pose_b = again.view("axial").slices[0]
        assert np.array_equal(pose_a.origin, pose_b.origin)
        assert pose_a.spacing_x == pose_b.spacing_x
        assert pose_a.cols == pose_b.cols

    def test_non_orthogonal_cosines_name_the_slice(self):
        doc = _minimal_manifest_doc()
        c = (1 - 0.05**2) ** 0.5
        doc["views"][0]["slices"][0]["col_dir"] = [0.05, c, 0.0]
        with pytest.raises(InvariantViolation, match=r"views\[0\].slices\[0\]"):
            vio.parse_manifest(json.dumps(doc))

    def test_missing_field_path(self):
        doc = _minimal_manifest_doc()
        del doc["views"][0]["slices"][0]["origin"]
        with pytest.raises(SchemaError, match=r"slices\[0\].origin"):
            vio.parse_manifest(json.dumps(doc))

    def test_bad_json_is_schema_error(self):
        with pytest.raises(SchemaError):
            vio.parse_manifest("{not json")

    def test_unknown_role(self):
        doc = _minimal_manifest_doc()
        doc["views"][0]["role"] = "coronal"
        with pytest.raises(SchemaError, match="role"):
            vio.parse_manifest(json.dumps(doc))

    def test_duplicate_view_ids(self):
        doc = _minimal_manifest_doc()
        doc["views"].append(doc["views"][0])
        with pytest.raises(InvariantViolation, match="duplicate"):
            vio.parse_manifest(json.dumps(doc))

    def test_non_finite_numbers_rejected(self):
        doc = _minimal_manifest_doc()
        doc["views"][0]["slices"][0]["origin"] = [0.0, 0.0, float("nan")]
        text = json.dumps(doc)  # python's json emits a NaN literal
        with pytest.raises(InvariantViolation, match="finite"):
            vio.parse_manifest(text)

    @pytest.mark.parametrize("mutate", [
        lambda d: d.__setitem__("views", "not-a-list"),
        lambda d: d["views"][0].__setitem__("slices", [{}]),
        lambda d: d["views"][0]["slices"][0].__setitem__("cols", 7.5),
        lambda d: d["views"][0]["slices"][0].__setitem__("spacing", [1.0]),
        lambda d: d.__setitem__("dependencies", {"p2C": "axial"}),
    ])
    def test_malformed_inputs_raise_structured_errors(self, mutate):
        doc = _minimal_manifest_doc()
        mutate(doc)
        with pytest.raises(SchemaError):
            vio.parse_manifest(json.dumps(doc))

    def test_phantom_manifest_is_serialization_fixed_point(self):
        exam = phantom.generate(phantom.tiny_config(1, certify_recoverable=False))
        text1 = vio.serialize_manifest(exam.manifest)
        text2 = vio.serialize_manifest(vio.parse_manifest(text1))
        assert text1 == text2

    def test_dependency_override_round_trip(self):
        doc = _minimal_manifest_doc()
        doc["dependencies"] = {"p2C": ["axial"]}
        exam = vio.parse_manifest(json.dumps(doc))
        assert exam.dependencies == {"p2C": ("axial",)}
        again = vio.parse_manifest(vio.serialize_manifest(exam))
        assert again.dependencies == {"p2C": ("axial",)}


class TestHeatmapFiles:
    def test_float32_round_trip_bit_exact(self, tmp_path, rng):
        stacks = [Heatmap(rng.uniform(0, 1, (7, 9)).astype(np.float32).astype(float))
                  for _ in range(3)]
        path = tmp_path / "x.hmap"
        vio.write_heatmaps(path, stacks)
        back = vio.read_heatmaps(path)
        assert len(back) == 3
        for a, b in zip(stacks, back):
            assert np.array_equal(a.values, b.values)

    def test_write_read_write_is_stable(self, tmp_path, rng):
        maps = [Heatmap(rng.uniform(0, 1, (5, 6)))]
        p1, p2 = tmp_path / "a.hmap", tmp_path / "b.hmap"
        vio.write_heatmaps(p1, maps)
        vio.write_heatmaps(p2, vio.read_heatmaps(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hmap"
        path.write_bytes(b"JUNK" + b"\0" * 32)
        with pytest.raises(BadMagic):
            vio.read_heatmaps(path)

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "t.hmap"
        vio.write_heatmaps(path, [Heatmap(rng.uniform(0, 1, (4, 4)))])
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(TruncatedPayload):
            vio.read_heatmaps(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path = tmp_path / "t.hmap"
        vio.write_heatmaps(path, [Heatmap(rng.uniform(0, 1, (4, 4)))])
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(TruncatedPayload):
            vio.read_heatmaps(path)

    def test_non_finite_rejected_on_read(self, tmp_path):
        path = tmp_path / "nf.hmap"
        payload = np.array([[np.inf, 0, 0, 0]], dtype="<f4")
        header = vio._HEADER.pack(vio.HMAP_MAGIC, vio.HMAP_VERSION, 2, 2, 1)
        path.write_bytes(header + payload.tobytes())
        with pytest.raises(NonFiniteValue):
            vio.read_heatmaps(path)

    def test_golden_file_checksum_and_content(self):
        golden = DATA / "golden.hmap"
        blob = golden.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        expected = (DATA / "golden.hmap.sha256").read_text().strip()
        assert digest == expected
        maps = vio.read_heatmaps(golden)
        regenerated = _golden_heatmaps()
        assert len(maps) == len(regenerated)
        for a, b in zip(maps, regenerated):
            assert np.array_equal(a.values, np.asarray(b.values, dtype="<f4").astype(float))


def _golden_heatmaps():
    from viewplan.heatmap import KernelConfig, render_heatmap

    pose = axial_pose(cols=12, rows=8)
    lines = [Line2D.from_coeffs(1.0, 0.0, -4.0), Line2D.from_coeffs(0.6, 0.8, -6.0)]
    return [render_heatmap(line, pose, KernelConfig(0.5, 2.0)) for line in lines]


class TestLabelSetFiles:
    def test_directory_round_trip(self):
        exam = phantom.generate(phantom.tiny_config(1, certify_recoverable=False))
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            names = vio.write_labelset(d, exam.labels)
            assert f"axial_000.hmap" in names
            back = vio.read_labelset(d, exam.manifest, exam.dependency_map)
            for key in exam.labels.keys():
                a = exam.labels.get(*key).values.astype("<f4")
                b = back.get(*key).values
                assert np.array_equal(a.astype(float), b)


class TestOverlay:
    def test_empty_lines_keep_background(self):
        bg = np.linspace(0, 1, 20).reshape(4, 5)
        blob = vio.render_overlay(bg, [])
        assert blob.startswith(b"P5\n5 4\n255\n")
        raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(4, 5)
        assert raster.max() <= vio.OVERLAY_BACKGROUND_MAX

    def test_horizontal_line_marks_one_row(self):
        line = Line2D.from_coeffs(0.0, 1.0, -2.0)
        blob = vio.render_overlay((6, 9), [(line, "auto")])
        raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(6, 9)
        marked_rows = np.unique(np.nonzero(raster)[0])
        assert list(marked_rows) == [2]
        assert np.all(raster[2, :] == vio.OVERLAY_LEVELS["auto"])

    def test_overlap_level(self):
        line = Line2D.from_coeffs(0.0, 1.0, -1.0)
        blob = vio.render_overlay((4, 4), [(line, "auto"), (line, "gt")])
        raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(4, 4)
        assert np.all(raster[1, :] == vio.OVERLAY_OVERLAP)

    def test_adjacent_lines_read_as_overlap(self):
        near = [(Line2D.from_coeffs(0.0, 1.0, -1.0), "gt"),
                (Line2D.from_coeffs(0.0, 1.0, -2.0), "auto")]
        blob = vio.render_overlay((8, 6), near)
        raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(8, 6)
        assert np.all(raster[1, :] == vio.OVERLAY_OVERLAP)
        assert np.all(raster[2, :] == vio.OVERLAY_OVERLAP)

    def test_distant_lines_keep_own_levels(self):
        far = [(Line2D.from_coeffs(0.0, 1.0, -1.0), "gt"),
               (Line2D.from_coeffs(0.0, 1.0, -5.0), "auto")]
        blob = vio.render_overlay((8, 6), far)
        raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8).reshape(8, 6)
        assert np.all(raster[1, :] == vio.OVERLAY_LEVELS["gt"])
        assert np.all(raster[5, :] == vio.OVERLAY_LEVELS["auto"])

    def test_closed_loop_overlay_mostly_overlap(self):
        # ground truth vs recovered plane traces coincide on nearly all marks
        from viewplan.geom import intersect_planes, line3d_to_line2d, pose_to_plane
        from viewplan.prescribe import build_anchor, pyramid_search

        exam = phantom.generate(phantom.tiny_config(3))
        sources = exam.sources("4C")
        result = pyramid_search(build_anchor(sources), sources)
        for view in sources:
            pose = view.slices[0]
            gt = line3d_to_line2d(intersect_planes(
                pose_to_plane(pose), exam.gt_planes["4C"]), pose)
            auto = line3d_to_line2d(intersect_planes(
                pose_to_plane(pose), result.plane), pose)
            blob = vio.render_overlay((pose.rows, pose.cols), [(gt, "gt"), (auto, "auto")])
            raster = np.frombuffer(blob.split(b"255\n", 1)[1], dtype=np.uint8)
            marked = np.count_nonzero(raster)
            overlap = np.count_nonzero(raster == vio.OVERLAY_OVERLAP)
            assert overlap / marked >= 0.95

    def test_unknown_label_rejected(self):
        with pytest.raises(InvariantViolation):
            vio.render_overlay((4, 4), [(Line2D.from_coeffs(1, 0, -1), "mystery")])

    def test_deterministic_and_matches_golden(self):
        blob = _golden_overlay()
        golden = DATA / "golden_overlay.pgm"
        assert blob == golden.read_bytes()
        assert blob == _golden_overlay()


def _golden_overlay():
    gt = Line2D.from_coeffs(0.0, 1.0, -3.0)
    auto = Line2D.from_coeffs(0.19611613513818404, 0.9805806756909202, -3.5)
    bg = np.zeros((8, 12))
    bg[:, 6:] = 0.5
    return vio.render_overlay(bg, [(gt, "gt"), (auto, "auto")])


class TestReports:
    def test_csv_columns_and_values(self):
        rows = [("e1", "4C", PlaneMetrics(5.5, 2.25)), ("e1", "SAX", PlaneMetrics(1.0, 0.5))]
        text = vio.report_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == "exam,target,normal_deviation_deg,point_to_plane_mm"
        assert lines[1] == "e1,4C,5.5,2.25"

    def test_json_report_round_trip_fields(self, tmp_path):
        cases = [PlaneMetrics(4.0, 2.0), PlaneMetrics(6.0, 1.0)]
        report = aggregate(cases, ["4C", "SAX"])
        out = tmp_path / "report.json"
        vio.write_report_json(out, report, [("e", "4C", cases[0]), ("e", "SAX", cases[1])])
        doc = json.loads(out.read_text())
        assert doc["overall"]["normal_deviation_deg"]["mean"] == 5.0
        assert doc["per_target"]["4C"]["point_to_plane_mm"]["mean"] == 2.0
        assert len(doc["cases"]) == 2
