import json

import numpy as np
import pytest

from ldo.cli import PipelineConfig, config_from_dict, load_config, main, render_stats
from ldo.heights import height_histogram
from ldo.ingest import write_scene
from ldo.metrics import evaluate
from ldo.voxelizer import GridSpec, build_ldo, load_occ, save_occ

from conftest import build_scene


def run_cli(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture
def tiny_setup(rng, tmp_path):
    scene = build_scene(rng, n_frames=3, n_static=80, n_tracks=2, class_count=8,
                        extent=10.0, z_range=(-4.0, 2.5))
    manifest = write_scene(scene, tmp_path / "scene")
    config = {
        "grid": {"min": [-16.0, -16.0, -5.0], "max": [16.0, 16.0, 3.0],
                 "voxel_size": [0.5, 0.5, 0.5]},
        "class_count": 8,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return scene, manifest, config_path, tmp_path


class TestConfig:
    def test_defaults_match_stock_setup(self):
        cfg = PipelineConfig()
        assert cfg.beta == 0.9
        assert cfg.margin == 0.0
        assert cfg.grid.dims == (128, 128, 10)
        np.testing.assert_allclose(cfg.grid.min, [-51.2, -51.2, -5.0])
        np.testing.assert_allclose(cfg.grid.max, [51.2, 51.2, 3.0])
        assert len(cfg.intervals) == 8
        assert cfg.weight_mode == "BASE_PLUS_FACTOR"

    def test_empty_config_file_gives_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        cfg = load_config(path)
        assert cfg.beta == 0.9
        assert cfg.grid.dims == (128, 128, 10)

    def test_interval_triples_parsed(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"intervals": [[-1.0, 0.0, "BL"], [-5.0, 3.0, "UL"]]}))
        cfg = load_config(path)
        assert cfg.intervals.intervals == ((-1.0, 0.0), (-5.0, 3.0))
        assert cfg.intervals.layers == ("BL", "UL")

    def test_unknown_key_rejected(self):
        from ldo.errors import ConfigError

        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict({"betta": 1.0})

    def test_factor_only_mode_accepted(self):
        cfg = config_from_dict({"weight_mode": "FACTOR_ONLY"})
        assert cfg.weight_mode == "FACTOR_ONLY"


class TestGenerate:
    def test_output_matches_in_memory_build(self, tiny_setup):
        scene, manifest, config_path, tmp = tiny_setup
        out = tmp / "occ.ldoc"
        assert run_cli(["generate", "--manifest", str(manifest),
                        "--config", str(config_path), "--out", str(out)]) == 0
        cfg = load_config(config_path)
        expected = build_ldo(scene, cfg.grid, margin=cfg.margin,
                             weight_mode=cfg.weight_mode,
                             background_class=cfg.background_class)
        assert load_occ(out) == expected

    def test_jobs_produce_byte_identical_output(self, tiny_setup):
        _, manifest, config_path, tmp = tiny_setup
        outs = []
        for jobs in ("1", "8"):
            out = tmp / f"occ_{jobs}.ldoc"
            assert run_cli(["generate", "--manifest", str(manifest),
                            "--config", str(config_path), "--out", str(out),
                            "--jobs", jobs]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_manifest_exits_3_naming_path(self, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        code = run_cli(["generate", "--manifest", str(missing),
                        "--out", str(tmp_path / "o.ldoc")])
        assert code == 3
        assert "absent.json" in capsys.readouterr().err

    def test_non_integral_grid_span_exits_2(self, tiny_setup, capsys):
        _, manifest, _, tmp = tiny_setup
        bad_config = tmp / "bad.json"
        bad_config.write_text(json.dumps(
            {"grid": {"min": [0, 0, 0], "max": [1.0, 1.0, 1.0],
                      "voxel_size": [0.3, 0.5, 0.5]}}
        ))
        code = run_cli(["generate", "--manifest", str(manifest),
                        "--config", str(bad_config), "--out", str(tmp / "o.ldoc")])
        assert code == 2
        assert "integer number of voxels" in capsys.readouterr().err

    def test_usage_error_exits_1(self):
        assert run_cli(["generate"]) == 1
        assert run_cli(["frobnicate"]) == 1


class TestStats:
    def test_empty_grid_reports_zeros(self, tmp_path, capsys):
        spec = GridSpec(np.array([0.0, 0.0, -2.0]), np.array([4.0, 4.0, 2.0]),
                        np.array([1.0, 1.0, 0.5]))
        from ldo.voxelizer import LdoGrid

        grid = LdoGrid(spec, np.zeros(spec.dims, np.uint16), np.zeros(spec.dims, np.float32))
        path = tmp_path / "empty.ldoc"
        save_occ(path, grid)
        assert run_cli(["stats", "--occ", str(path)]) == 0
        out = capsys.readouterr().out
        assert "occupied_voxels: 0" in out
        for line in out.splitlines():
            if line.startswith("["):
                assert line.endswith(": 0")

    def test_single_voxel_grid(self, tmp_path, capsys):
        spec = GridSpec(np.zeros(3), np.array([2.0, 2.0, 2.0]), np.ones(3))
        from ldo.voxelizer import LdoGrid

        labels = np.zeros(spec.dims, np.uint16)
        labels[0, 1, 1] = 5
        weights = np.where(labels != 0, 1.0, 0.0).astype(np.float32)
        path = tmp_path / "one.ldoc"
        save_occ(path, LdoGrid(spec, labels, weights))
        assert run_cli(["stats", "--occ", str(path)]) == 0
        out = capsys.readouterr().out
        assert "occupied_voxels: 1" in out
        assert "class 5: 1" in out

    def test_histogram_lines_match_height_histogram(self, tiny_setup, capsys):
        _, manifest, config_path, tmp = tiny_setup
        out = tmp / "occ.ldoc"
        run_cli(["generate", "--manifest", str(manifest),
                 "--config", str(config_path), "--out", str(out)])
        grid = load_occ(out)
        hist = height_histogram(grid, 0.5)
        text = render_stats(str(out), 0.5)
        hist_lines = [l for l in text.splitlines() if l.startswith("[")]
        assert len(hist_lines) == len(hist)
        for line, count in zip(hist_lines, hist):
            assert line.endswith(f": {count}")

    def test_bad_magic_exits_2(self, tmp_path, capsys):
        path = tmp_path / "junk.ldoc"
        path.write_bytes(b"JUNKJUNKJUNK" + b"\x00" * 100)
        assert run_cli(["stats", "--occ", str(path)]) == 2


class TestMetricsCommand:
    def test_reports_match_evaluate(self, tiny_setup, capsys):
        scene, manifest, config_path, tmp = tiny_setup
        out = tmp / "occ.ldoc"
        run_cli(["generate", "--manifest", str(manifest),
                 "--config", str(config_path), "--out", str(out)])
        assert run_cli(["metrics", "--pred", str(out), "--gt", str(out),
                        "--classes", "8"]) == 0
        text = capsys.readouterr().out
        grid = load_occ(out)
        report = evaluate(grid.labels, grid.labels, 8)
        assert f"sc_iou: {report.sc_iou:.6f}" in text
        assert f"ssc_miou: {report.ssc_miou:.6f}" in text

    def test_dim_mismatch_exits_2(self, tmp_path, capsys):
        from ldo.voxelizer import LdoGrid

        a_spec = GridSpec(np.zeros(3), np.array([2.0, 2.0, 2.0]), np.ones(3))
        b_spec = GridSpec(np.zeros(3), np.array([3.0, 3.0, 3.0]), np.ones(3))
        for name, spec in (("a", a_spec), ("b", b_spec)):
            save_occ(tmp_path / f"{name}.ldoc",
                     LdoGrid(spec, np.zeros(spec.dims, np.uint16),
                             np.zeros(spec.dims, np.float32)))
        code = run_cli(["metrics", "--pred", str(tmp_path / "a.ldoc"),
                        "--gt", str(tmp_path / "b.ldoc"), "--classes", "4"])
        assert code == 2
