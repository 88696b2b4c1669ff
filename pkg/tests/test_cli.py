"""CLI commands end to end on synthetic fixtures."""

import json
import re

import numpy as np
import pytest
from PIL import Image

from selokit import cli, mapio, metrics
from selokit.annotations import load_manifest
from selokit.pipeline import PipelineConfig
from selokit.scorers import parse_scorer_spec


def write_fixture(root, n_cases=3, size=96, noise_seed=5):
    """One image, n cases with distinct GT boxes; returns the manifest path."""
    rng = np.random.default_rng(noise_seed)
    img = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    img_path = root / "scene.png"
    Image.fromarray(img).save(img_path)
    cases = []
    for i in range(n_cases):
        x = 8 + 28 * i
        cases.append(
            {
                "id": f"c{i}",
                "query": f"object number {i} by the road",
                "regions": [[[x, 10], [x + 24, 10], [x + 24, 34], [x, 34]]],
            }
        )
    doc = {
        "version": 1,
        "images": [
            {"file": "scene.png", "height": size, "width": size, "cases": cases}
        ],
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(doc))
    return manifest_path


def run_config(manifest, out, scorer="constant:0.5", **kwargs):
    return cli.RunConfig(
        manifest=manifest,
        scorer=parse_scorer_spec(scorer),
        pipeline=PipelineConfig(scales=(16, 32), offsets=(0.0, 0.5),
                                median_kernel=3),
        params=metrics.MetricParams(),
        out_dir=out,
        **kwargs,
    )


def strip_volatile(report):
    report = json.loads(json.dumps(report))
    report.pop("generated_at", None)
    for case in report.get("cases", []):
        case.pop("timings", None)
    return report


class TestGenerate:
    def test_constant_scorer_three_degenerate_maps(self, tmp_path):
        manifest = write_fixture(tmp_path)
        result = cli.cmd_generate(run_config(manifest, tmp_path / "out"))
        assert result["errors"] == []
        assert len(result["cases"]) == 3
        assert all(c["degenerate"] for c in result["cases"])
        for i in range(3):
            assert (tmp_path / "out" / "maps" / f"c{i}.npy").exists()
            assert (tmp_path / "out" / "maps" / f"c{i}.png").exists()
            timing = json.loads(
                (tmp_path / "out" / "maps" / f"c{i}.timing.json").read_text()
            )
            assert set(timing) == {"cut_s", "sim_s", "gnt_s", "flt_s", "total_s"}

    def test_gt_oracle_maps_peak_inside_gt(self, tmp_path):
        manifest = write_fixture(tmp_path)
        cli.cmd_generate(run_config(manifest, tmp_path / "out",
                                    scorer="gt-oracle"))
        man = load_manifest(manifest)
        for entry, case in man.iter_cases():
            pmap = mapio.load_map_array(
                tmp_path / "out" / "maps" / f"{case.case_id}.npy")
            r, c = np.unravel_index(np.argmax(pmap.values), pmap.values.shape)
            poly = case.regions[0]
            xs = [x for x, _ in poly.vertices]
            ys = [y for _, y in poly.vertices]
            assert min(xs) - 8 <= c <= max(xs) + 8
            assert min(ys) - 8 <= r <= max(ys) + 8

    def test_broken_image_isolated_per_case(self, tmp_path):
        manifest = write_fixture(tmp_path)
        doc = json.loads(manifest.read_text())
        doc["images"].append(
            {
                "file": "missing.png",
                "height": 96,
                "width": 96,
                "cases": [
                    {
                        "id": "broken",
                        "query": "nothing to see",
                        "regions": [[[0, 0], [10, 0], [0, 10]]],
                    }
                ],
            }
        )
        manifest.write_text(json.dumps(doc))
        result = cli.cmd_generate(run_config(manifest, tmp_path / "out"))
        assert len(result["cases"]) == 3
        assert [e["case_id"] for e in result["errors"]] == ["broken"]

    def test_dim_mismatch_reported(self, tmp_path):
        manifest = write_fixture(tmp_path)
        doc = json.loads(manifest.read_text())
        doc["images"][0]["height"] = 128  # image file is 96 px tall
        manifest.write_text(json.dumps(doc))
        result = cli.cmd_generate(run_config(manifest, tmp_path / "out"))
        assert len(result["errors"]) == 3

    def test_render_flag_writes_overlays(self, tmp_path):
        manifest = write_fixture(tmp_path, n_cases=1)
        cli.cmd_generate(run_config(manifest, tmp_path / "out", render=True))
        assert (tmp_path / "out" / "render" / "c0.png").exists()

    def test_workers_match_serial(self, tmp_path):
        manifest = write_fixture(tmp_path)
        cli.cmd_generate(run_config(manifest, tmp_path / "a",
                                    scorer="seeded-random:9"))
        cli.cmd_generate(run_config(manifest, tmp_path / "b",
                                    scorer="seeded-random:9", workers=3))
        for i in range(3):
            a = (tmp_path / "a" / "maps" / f"c{i}.npy").read_bytes()
            b = (tmp_path / "b" / "maps" / f"c{i}.npy").read_bytes()
            assert a == b


class TestEvaluate:
    def test_report_matches_direct_metrics(self, tmp_path):
        manifest = write_fixture(tmp_path)
        cfg = run_config(manifest, tmp_path / "out", scorer="seeded-random:3")
        cli.cmd_generate(cfg)
        report = cli.cmd_evaluate(
            tmp_path / "out" / "maps", manifest, out_dir=tmp_path / "out")
        assert report["errors"] == []
        man = load_manifest(manifest)
        for entry, case in man.iter_cases():
            pmap = mapio.load_map_array(
                tmp_path / "out" / "maps" / f"{case.case_id}.npy")
            direct = metrics.evaluate_case(pmap, case)
            row = next(c for c in report["cases"]
                       if c["case_id"] == case.case_id)
            assert row["r_mi"] == pytest.approx(direct.r_mi, abs=1e-12)
            assert "timings" in row

    def test_missing_map_reported(self, tmp_path):
        manifest = write_fixture(tmp_path)
        (tmp_path / "maps").mkdir()
        report = cli.cmd_evaluate(tmp_path / "maps", manifest)
        assert len(report["errors"]) == 3
        assert all("no map stored" in e["error"] for e in report["errors"])
        assert report["aggregate"] is None

    def test_aggregate_recomputable_from_rows(self, tmp_path):
        manifest = write_fixture(tmp_path)
        cfg = run_config(manifest, tmp_path / "out", scorer="seeded-random:3")
        cli.cmd_generate(cfg)
        report = cli.cmd_evaluate(tmp_path / "out" / "maps", manifest)
        agg = report["aggregate"]
        for key in ("r_su", "r_as", "r_da", "r_mi"):
            mean = sum(c[key] for c in report["cases"]) / len(report["cases"])
            assert agg[key] == mean

    def test_csv_column_order(self, tmp_path):
        manifest = write_fixture(tmp_path, n_cases=1)
        cfg = run_config(manifest, tmp_path / "out", scorer="seeded-random:3")
        cli.cmd_generate(cfg)
        cli.cmd_evaluate(tmp_path / "out" / "maps", manifest,
                         out_dir=tmp_path / "out")
        csv_text = (tmp_path / "out" / "report.csv").read_text()
        assert csv_text.splitlines()[0] == "Case,R_su,R_da,R_as,R_mi"

    def test_rerun_identical_modulo_timestamps(self, tmp_path):
        manifest = write_fixture(tmp_path)
        cfg = run_config(manifest, tmp_path / "out", scorer="seeded-random:3")
        cli.cmd_generate(cfg)
        r1 = cli.cmd_evaluate(tmp_path / "out" / "maps", manifest)
        r2 = cli.cmd_evaluate(tmp_path / "out" / "maps", manifest)
        assert strip_volatile(r1) == strip_volatile(r2)

    def test_stored_map_dim_mismatch_reported(self, tmp_path):
        manifest = write_fixture(tmp_path, n_cases=1)
        maps = tmp_path / "maps"
        maps.mkdir()
        np.save(maps / "c0.npy", np.zeros((10, 10), np.float32))
        report = cli.cmd_evaluate(maps, manifest)
        assert len(report["errors"]) == 1
        assert "manifest says" in report["errors"][0]["error"]

    def test_evaluate_via_main(self, tmp_path, capsys):
        manifest = write_fixture(tmp_path)
        cli.cmd_generate(run_config(manifest, tmp_path / "out",
                                    scorer="seeded-random:3"))
        rc = cli.main([
            "evaluate", "--manifest", str(manifest),
            "--maps", str(tmp_path / "out" / "maps"),
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 0
        assert "cases=3" in capsys.readouterr().out
        assert (tmp_path / "out" / "report.csv").exists()


class TestRun:
    def test_compose_generate_and_evaluate(self, tmp_path):
        manifest = write_fixture(tmp_path)
        report = cli.cmd_run(run_config(manifest, tmp_path / "out",
                                        scorer="gt-oracle"))
        assert report["errors"] == []
        assert report["aggregate"]["case_count"] == 3
        assert (tmp_path / "out" / "report.json").exists()
        assert (tmp_path / "out" / "report.csv").exists()

    def test_ablation_mode_runs_six_scale_sets(self, tmp_path):
        manifest = write_fixture(tmp_path, size=260)
        cfg = run_config(manifest, tmp_path / "out", scorer="constant:0.5")
        summary = cli.cmd_run(cfg, ablation=True)
        rows = summary["ablation"]
        assert [r["run"] for r in rows] == ["s1", "s2", "s3", "s4", "s5", "s6"]
        assert rows[0]["scales"] == [128, 256]
        assert rows[5]["scales"] == [128, 256, 512, 768]
        assert all(r["total_time_s"] >= 0 for r in rows)
        # 260 px image: sets with a 128 or 256 scale run, 512/768-only fails
        assert rows[2]["errors"] == 3
        assert rows[0]["errors"] == 0
        assert (tmp_path / "out" / "ablation.csv").exists()
        for name in ("s1", "s4", "s6"):
            assert (tmp_path / "out" / name / "report.json").exists()


class TestMainEntry:
    def test_full_cli_run_and_exit_codes(self, tmp_path, capsys):
        manifest = write_fixture(tmp_path)
        rc = cli.main([
            "run", "--manifest", str(manifest),
            "--scorer", "seeded-random:11",
            "--scales", "32,48", "--offsets", "0,0.5",
            "--median-kernel", "3",
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert re.search(r"R_mi=\d", out)

    def test_exit_code_one_on_partial_failure(self, tmp_path):
        manifest = write_fixture(tmp_path)
        doc = json.loads(manifest.read_text())
        doc["images"][0]["cases"][1]["regions"] = [
            [[0.1, 0.1], [0.4, 0.1], [0.4, 0.4], [0.1, 0.4]]
        ]  # rasterizes empty -> evaluation error
        manifest.write_text(json.dumps(doc))
        rc = cli.main([
            "run", "--manifest", str(manifest),
            "--scorer", "constant:0.5",
            "--scales", "32", "--median-kernel", "3",
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 1

    def test_exit_code_two_on_config_error(self, tmp_path, capsys):
        rc = cli.main([
            "run", "--manifest", str(tmp_path / "absent.json"),
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_stats_subcommand(self, tmp_path, capsys):
        manifest = write_fixture(tmp_path)
        rc = cli.main(["stats", "--manifest", str(manifest)])
        assert rc == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["sample_number"] == 3
        assert stats["image_number"] == 1
        assert stats["ave_region_number"] == 1.0

    def test_render_subcommand(self, tmp_path):
        manifest = write_fixture(tmp_path, n_cases=1)
        cli.main([
            "generate", "--manifest", str(manifest),
            "--scorer", "gt-oracle",
            "--scales", "32,48", "--median-kernel", "3",
            "--out", str(tmp_path / "out"),
        ])
        rc = cli.main([
            "render",
            "--map", str(tmp_path / "out" / "maps" / "c0.npy"),
            "--image", str(tmp_path / "scene.png"),
            "--manifest", str(manifest),
            "--case", "c0",
            "--out", str(tmp_path / "overlay.png"),
        ])
        assert rc == 0
        assert (tmp_path / "overlay.png").exists()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
        assert "selokit" in capsys.readouterr().out

    def test_param_flag_overrides_params_file(self, tmp_path):
        manifest = write_fixture(tmp_path, n_cases=1)
        params_file = tmp_path / "params.json"
        params_file.write_text(json.dumps({"rho": 0.8, "beta": 2.0}))
        rc = cli.main([
            "run", "--manifest", str(manifest),
            "--scorer", "constant:0.5",
            "--scales", "32", "--median-kernel", "3",
            "--params", str(params_file),
            "--param", "rho=0.25", "--param", "nms_window=7",
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["config"]["params"]["rho"] == 0.25
        assert report["config"]["params"]["beta"] == 2.0
        assert report["config"]["params"]["nms_window"] == 7
