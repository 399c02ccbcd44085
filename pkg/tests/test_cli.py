import json
from pathlib import Path

import numpy as np
import pytest

from viewplan import io as vio
from viewplan import phantom
from viewplan.cli import main


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    """A tiny phantom emitted through the library, reused across CLI tests."""
    root = tmp_path_factory.mktemp("cliphantom")
    exam = phantom.generate(phantom.tiny_config(2))
    vio.save_manifest(root / "manifest.json", exam.manifest)
    vio.write_labelset(root / "labels", exam.labels)
    return root


class TestGenLabels:
    def test_writes_expected_files(self, phantom_dir, tmp_path):
        out = tmp_path / "labels"
        rc = main(["gen-labels", "--manifest", str(phantom_dir / "manifest.json"),
                   "--out", str(out)])
        assert rc == 0
        names = sorted(p.name for p in out.glob("*.hmap"))
        # one file per source slice; p2C emits five channels
        assert "p2C_000.hmap" in names
        assert len(vio.read_heatmaps(out / "p2C_000.hmap")) == 5
        manifest = vio.load_manifest(phantom_dir / "manifest.json")
        n_axial = len(manifest.view("axial").slices)
        assert len([n for n in names if n.startswith("axial_")]) == n_axial

    def test_reproduces_library_labels(self, phantom_dir, tmp_path):
        out = tmp_path / "labels"
        main(["gen-labels", "--manifest", str(phantom_dir / "manifest.json"),
              "--out", str(out)])
        for name in ("p2C_000.hmap", "axial_003.hmap"):
            a = (phantom_dir / "labels" / name).read_bytes()
            b = (out / name).read_bytes()
            assert a == b

    def test_rerun_is_bit_identical(self, phantom_dir, tmp_path):
        out = tmp_path / "labels"
        args = ["gen-labels", "--manifest", str(phantom_dir / "manifest.json"),
                "--out", str(out)]
        main(args)
        first = {p.name: p.read_bytes() for p in out.glob("*.hmap")}
        main(args)
        second = {p.name: p.read_bytes() for p in out.glob("*.hmap")}
        assert first == second

    def test_missing_view_exits_2(self, phantom_dir, tmp_path, capsys):
        doc = json.loads((phantom_dir / "manifest.json").read_text())
        doc["views"] = [v for v in doc["views"] if v["view_id"] != "pSA"]
        bad = tmp_path / "partial.json"
        bad.write_text(json.dumps(doc))
        rc = main(["gen-labels", "--manifest", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "pSA" in capsys.readouterr().err

    def test_parallel_pair_exits_3(self, tmp_path):
        # two-view manifest with an explicit dependency onto a parallel pair
        doc = {
            "exam_id": "par",
            "views": [
                {"view_id": "axial", "role": "axial", "slices": [_slice([0, 0, 0])]},
                {"view_id": "p2C", "role": "p2C", "slices": [_slice([0, 0, 30])]},
            ],
            "dependencies": {"p2C": ["axial"]},
        }
        bad = tmp_path / "parallel.json"
        bad.write_text(json.dumps(doc))
        rc = main(["gen-labels", "--manifest", str(bad), "--out", str(tmp_path / "y")])
        assert rc == 3


def _slice(origin):
    return {
        "origin": list(map(float, origin)),
        "row_dir": [1.0, 0.0, 0.0],
        "col_dir": [0.0, 1.0, 0.0],
        "spacing": [1.5, 1.5],
        "cols": 24,
        "rows": 24,
        "thickness": 6.0,
    }


class TestPrescribeEvaluate:
    def test_pipeline_recovers_ground_truth(self, phantom_dir, tmp_path):
        out = tmp_path / "pre"
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "2C,3C,4C,SAX",
                   "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "planes.json").read_text())
        assert set(doc["planes"]) == {"2C", "3C", "4C", "SAX"}
        overlays = list((out / "overlays").glob("*.pgm"))
        assert overlays, "overlays should be written by default"

        rep = tmp_path / "rep"
        rc = main(["evaluate", "--auto", str(out / "planes.json"),
                   "--gt-manifest", str(phantom_dir / "manifest.json"),
                   "--out", str(rep)])
        assert rc == 0
        report = json.loads((rep / "report.json").read_text())
        assert report["overall"]["normal_deviation_deg"]["mean"] <= 1.5
        csv_text = (rep / "report.csv").read_text()
        assert csv_text.splitlines()[0] == "exam,target,normal_deviation_deg,point_to_plane_mm"
        assert len(csv_text.splitlines()) == 5

    def test_unknown_target_exits_2(self, phantom_dir, tmp_path, capsys):
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "5C",
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "5C" in capsys.readouterr().err

    def test_single_source_target_uses_line_search(self, phantom_dir, tmp_path):
        out = tmp_path / "loc"
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "p2C", "--no-overlays",
                   "--out", str(out)])
        assert rc == 0
        entry = json.loads((out / "planes.json").read_text())["planes"]["p2C"]
        assert "offset_px" in entry and "angle_deg" in entry

    def test_anchor_pair_override(self, phantom_dir, tmp_path):
        out = tmp_path / "ap"
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "3C", "--anchor-pair", "p4C,pSA",
                   "--no-overlays", "--out", str(out)])
        assert rc == 0
        entry = json.loads((out / "planes.json").read_text())["planes"]["3C"]
        assert entry["score"] > 0

    def test_anchor_pair_not_a_source_exits_2(self, phantom_dir, tmp_path, capsys):
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "SAX", "--anchor-pair", "pSA,p2C",
                   "--no-overlays", "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "anchor pair" in capsys.readouterr().err

    def test_zero_heatmaps_flagged(self, phantom_dir, tmp_path):
        zeros = tmp_path / "zeros"
        zeros.mkdir()
        for path in (phantom_dir / "labels").glob("*.hmap"):
            maps = vio.read_heatmaps(path)
            from viewplan.heatmap import Heatmap

            vio.write_heatmaps(zeros / path.name,
                               [Heatmap(np.zeros_like(m.values)) for m in maps])
        out = tmp_path / "res"
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(zeros),
                   "--targets", "4C", "--no-overlays",
                   "--out", str(out)])
        assert rc == 0
        entry = json.loads((out / "planes.json").read_text())["planes"]["4C"]
        assert entry["degenerate_zero_score"] is True
        assert entry["score"] == 0.0

    def test_evaluate_gt_against_itself_is_zero(self, phantom_dir, tmp_path):
        manifest = vio.load_manifest(phantom_dir / "manifest.json")
        from viewplan.geom import pose_to_plane

        planes = {}
        for target in ("2C", "3C", "4C", "SAX"):
            plane = pose_to_plane(manifest.view(target).slices[0])
            planes[target] = {"point": [float(x) for x in plane.point],
                              "normal": [float(x) for x in plane.normal]}
        auto = tmp_path / "gt_planes.json"
        auto.write_text(json.dumps({"exam_id": manifest.exam_id, "planes": planes}))
        rep = tmp_path / "rep"
        rc = main(["evaluate", "--auto", str(auto),
                   "--gt-manifest", str(phantom_dir / "manifest.json"),
                   "--out", str(rep)])
        assert rc == 0
        doc = json.loads((rep / "report.json").read_text())
        assert doc["overall"]["normal_deviation_deg"]["mean"] == pytest.approx(0.0, abs=1e-9)
        assert doc["overall"]["point_to_plane_mm"]["mean"] == pytest.approx(0.0, abs=1e-9)

    def test_exam_id_mismatch_exits_2(self, phantom_dir, tmp_path, capsys):
        out = tmp_path / "pre2"
        main(["prescribe",
              "--manifest", str(phantom_dir / "manifest.json"),
              "--heatmaps", str(phantom_dir / "labels"),
              "--targets", "SAX", "--no-overlays",
              "--out", str(out)])
        doc = json.loads((out / "planes.json").read_text())
        doc["exam_id"] = "someone-else"
        (out / "planes.json").write_text(json.dumps(doc))
        rc = main(["evaluate", "--auto", str(out / "planes.json"),
                   "--gt-manifest", str(phantom_dir / "manifest.json"),
                   "--out", str(tmp_path / "rep2")])
        assert rc == 2
        assert "mismatch" in capsys.readouterr().err

    def test_missing_manifest_exits_2(self, tmp_path):
        rc = main(["gen-labels", "--manifest", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2


class TestPhantomCommand:
    def test_emits_manifest_and_labels(self, tmp_path):
        out = tmp_path / "ph"
        rc = main(["phantom", "--seed", "12", "--out", str(out)])
        assert rc == 0
        assert (out / "manifest.json").exists()
        assert list((out / "labels").glob("*.hmap"))

    def test_deterministic_in_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["phantom", "--seed", "4", "--out", str(a)]) == 0
        assert main(["phantom", "--seed", "4", "--out", str(b)]) == 0
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        for pa in sorted((a / "labels").glob("*.hmap")):
            assert pa.read_bytes() == (b / "labels" / pa.name).read_bytes()

    def test_noise_emits_second_label_dir(self, tmp_path):
        out = tmp_path / "phn"
        rc = main(["phantom", "--seed", "12", "--out", str(out), "--noise-std", "0.1"])
        assert rc == 0
        assert list((out / "labels_noisy").glob("*.hmap"))


class TestLoss:
    def test_loss_of_identical_dirs_is_zero(self, phantom_dir, capsys):
        rc = main(["loss", "--truth", str(phantom_dir / "labels"),
                   "--pred", str(phantom_dir / "labels")])
        assert rc == 0
        assert float(capsys.readouterr().out.strip()) == 0.0

    def test_loss_matches_bruteforce(self, phantom_dir, tmp_path, capsys):
        noisy_dir = tmp_path / "noisy"
        noisy_dir.mkdir()
        rng = np.random.default_rng(0)
        expect_groups = []
        from viewplan.heatmap import Heatmap

        for path in sorted((phantom_dir / "labels").glob("*.hmap")):
            maps = vio.read_heatmaps(path)
            bumped = []
            for m in maps:
                delta = rng.normal(0, 0.05, m.values.shape)
                bumped.append(Heatmap(np.clip(m.values + delta, 0, 1)))
            vio.write_heatmaps(noisy_dir / path.name, bumped)
            a = np.stack([m.values for m in maps]).astype("<f4").astype(float)
            b = np.stack([m.values for m in vio.read_heatmaps(noisy_dir / path.name)])
            total = 0.0
            t, r, c = a.shape
            for ch in range(t):
                for y in range(r):
                    for x in range(c):
                        total += (a[ch, y, x] - b[ch, y, x]) ** 2
            expect_groups.append(total / (t * r * c))
        rc = main(["loss", "--truth", str(phantom_dir / "labels"), "--pred", str(noisy_dir)])
        assert rc == 0
        got = float(capsys.readouterr().out.strip())
        assert got == pytest.approx(sum(expect_groups) / len(expect_groups), abs=1e-9)

    def test_mismatched_dirs_exit_2(self, phantom_dir, tmp_path):
        d = tmp_path / "partial"
        d.mkdir()
        names = sorted((phantom_dir / "labels").glob("*.hmap"))
        (d / names[0].name).write_bytes(names[0].read_bytes())
        rc = main(["loss", "--truth", str(phantom_dir / "labels"), "--pred", str(d)])
        assert rc == 2


class TestArgErrors:
    def test_no_command_exits_2(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_bad_steps_exits_2(self, phantom_dir, tmp_path, capsys):
        rc = main(["prescribe",
                   "--manifest", str(phantom_dir / "manifest.json"),
                   "--heatmaps", str(phantom_dir / "labels"),
                   "--targets", "SAX", "--steps", "abc",
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        capsys.readouterr()
