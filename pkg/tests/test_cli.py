"""End-to-end CLI runs against small on-disk scenes.

Every test drives main() directly and checks exit codes plus the files
each subcommand promises to leave behind.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from treestereo.cli import main
from treestereo.hdp_model import GmmModel
from treestereo.raster_io import load_ground_truth
from treestereo.synthetic import random_plane_field, render_scene

from conftest import GT_SCALE, write_scene_dir


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    scene = render_scene(
        random_plane_field(64, 96, 12, 3, np.random.default_rng(3)),
        d_max=12,
        seed=3,
        name="scene0",
    )
    root = tmp_path_factory.mktemp("cliscene") / "scene0"
    write_scene_dir(scene, root)
    return root


def run_match(scene_dir, out, *extra: str) -> int:
    return main([
        "match",
        "--left", str(scene_dir / "view1.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--dmax", "12",
        "--out", str(out),
        *extra,
    ])


def test_match_baseline_outputs(scene_dir, tmp_path):
    code = run_match(
        scene_dir, tmp_path,
        "--gt", str(scene_dir / "disp1.pgm"),
        "--gt-right", str(scene_dir / "disp5.pgm"),
        "--gt-scale", str(GT_SCALE),
    )
    assert code == 0
    for name in ("manifest.json", "disparity.pgm", "disparity.png",
                 "metrics.jsonl", "errors.ppm"):
        assert (tmp_path / name).exists(), name
    assert not (tmp_path / "search-ratios.png").exists()

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["d_max"] == 12
    assert manifest["inputs"]["gt"].endswith("disp1.pgm")

    rows = [json.loads(line)
            for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    summary = rows[-1]
    assert summary["record"] == "summary"
    assert summary["method"] == "mst"
    assert "err_ge_1" in summary  # gt was supplied


def test_match_repeat_runs_byte_identical(scene_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_match(scene_dir, a) == 0
    assert run_match(scene_dir, b) == 0
    assert (a / "disparity.pgm").read_bytes() == (b / "disparity.pgm").read_bytes()


def test_match_rt_seeded(scene_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_match(scene_dir, a, "--method", "rt", "--seed", "5") == 0
    assert run_match(scene_dir, b, "--method", "rt", "--seed", "5") == 0
    assert (a / "disparity.pgm").read_bytes() == (b / "disparity.pgm").read_bytes()


def test_match_hdp_outputs(scene_dir, tmp_path):
    code = run_match(scene_dir, tmp_path, "--hdp")
    assert code == 0
    assert (tmp_path / "search-ratios.png").exists()

    rows = [json.loads(line)
            for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    layer_rows = [r for r in rows if r["record"] == "layer"]
    assert [r["level"] for r in layer_rows] == [3, 2, 1, 0]
    summary = rows[-1]
    assert summary["method"] == "hdp+mst"
    assert summary["search_ratios_pct"][-1] == 100.0  # coarsest is exhaustive
    assert summary["stored_entries"] <= summary["dense_entries"]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["inputs"]["model"] == "builtin:default"


def test_match_output_scale_applied(scene_dir, tmp_path):
    assert run_match(scene_dir, tmp_path) == 0
    # default scale for d_max=12 is floor(255/12) = 21
    dec = load_ground_truth(tmp_path / "disparity.pgm", scale=21,
                            zero_invalid=False)
    assert dec.values.max() <= 12


def test_match_dump_matrices_requires_hdp(scene_dir, tmp_path):
    assert run_match(scene_dir, tmp_path, "--dump-matrices") == 2


def test_match_dump_matrices_files(scene_dir, tmp_path):
    code = run_match(scene_dir, tmp_path, "--hdp", "--dump-matrices")
    assert code == 0
    for level in range(3):
        for stem in ("prior", "conditional", "bayes"):
            assert (tmp_path / f"{stem}-level{level}.csv").exists()
            assert (tmp_path / f"{stem}-level{level}.png").exists()


def test_match_missing_input_is_exit_3(scene_dir, tmp_path):
    code = main([
        "match",
        "--left", str(scene_dir / "absent.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--dmax", "12",
        "--out", str(tmp_path),
    ])
    assert code == 3


def test_match_bad_flag_value_is_exit_2(scene_dir, tmp_path):
    assert run_match(scene_dir, tmp_path, "--beta", "1.5") == 2


def test_match_without_dmax_is_exit_2(scene_dir, tmp_path):
    code = main([
        "match",
        "--left", str(scene_dir / "view1.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--out", str(tmp_path),
    ])
    assert code == 2


def test_match_config_file_with_cli_override(scene_dir, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[pipeline]\ntree = rt\ngamma = 0.5\nd_max = 12\n")
    out = tmp_path / "out"
    code = main([
        "match",
        "--left", str(scene_dir / "view1.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--config", str(ini),
        "--method", "mst",
        "--out", str(out),
    ])
    assert code == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["tree"] == "mst"  # flag beats the file
    assert cfg["gamma"] == 0.5
    assert cfg["d_max"] == 12


def test_match_json_stream(scene_dir, tmp_path, capsys):
    assert run_match(scene_dir, tmp_path, "--json") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    rows = [json.loads(line) for line in lines]
    assert rows[-1]["record"] == "summary"


def test_train_gmm_cli(dataset_dir, tmp_path):
    out = tmp_path / "model.gmm"
    code = main([
        "train-gmm",
        "--dataset", str(dataset_dir),
        "--gt-scale", str(GT_SCALE),
        "--dmax", "12",
        "--out", str(out),
    ])
    assert code == 0
    assert out.exists()
    model = GmmModel.load(out)
    assert len(model.layers) == 3  # default pyramid depth

    manifest = json.loads(
        out.with_suffix(out.suffix + ".manifest.json").read_text()
    )
    assert manifest["inputs"]["split_seed"] == 0
    train = manifest["inputs"]["train_scenes"]
    assert len(train) == 1 and train[0] in ("scene0", "scene1")
    # the scene list is also embedded in the model file itself
    assert train[0] in out.read_text()


def test_eval_cli(scene_dir, tmp_path):
    code = main([
        "eval",
        "--pred", str(scene_dir / "disp1.pgm"),
        "--gt", str(scene_dir / "disp1.pgm"),
        "--pred-scale", str(GT_SCALE),
        "--gt-scale", str(GT_SCALE),
        "--thresholds", "1,2,4",
        "--out", str(tmp_path),
    ])
    assert code == 0
    for name in ("report.csv", "report.jsonl", "errors.png"):
        assert (tmp_path / name).exists(), name
    row = json.loads((tmp_path / "report.jsonl").read_text().splitlines()[0])
    assert row["err_ge_1"] == 0.0 and row["err_ge_4"] == 0.0
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert "err_ge_4" in header


def test_eval_bad_thresholds_is_exit_2(scene_dir, tmp_path):
    code = main([
        "eval",
        "--pred", str(scene_dir / "disp1.pgm"),
        "--gt", str(scene_dir / "disp1.pgm"),
        "--gt-scale", str(GT_SCALE),
        "--thresholds", "1,zero",
        "--out", str(tmp_path),
    ])
    assert code == 2


def test_bench_cli(dataset_dir, tmp_path):
    code = main([
        "bench",
        "--dataset", str(dataset_dir),
        "--methods", "mst,hdp+mst",
        "--runs", "1",
        "--dmax", "12",
        "--gt-scale", str(GT_SCALE),
        "--out", str(tmp_path),
    ])
    assert code == 0
    for name in ("manifest.json", "bench.csv", "bench.jsonl",
                 "runtime.png", "errors.png"):
        assert (tmp_path / name).exists(), name
    rows = [json.loads(line)
            for line in (tmp_path / "bench.jsonl").read_text().splitlines()]
    methods = {r["method"] for r in rows}
    assert methods == {"mst", "hdp+mst"}
    hdp_rows = [r for r in rows if r["method"] == "hdp+mst"]
    assert all("speedup" in r and "err_ge_1" in r for r in hdp_rows)


def test_bench_unknown_method_is_exit_2(dataset_dir, tmp_path):
    code = main([
        "bench",
        "--dataset", str(dataset_dir),
        "--methods", "sgm",
        "--dmax", "12",
        "--out", str(tmp_path),
    ])
    assert code == 2


def test_pyramid_cli(scene_dir, tmp_path, capsys):
    code = main([
        "pyramid",
        "--image", str(scene_dir / "view1.ppm"),
        "--dmax", "12",
        "--json",
        "--out", str(tmp_path),
    ])
    assert code == 0
    rows = [json.loads(line)
            for line in capsys.readouterr().out.strip().splitlines()]
    assert [r["d_max"] for r in rows] == [12, 6, 3, 1]
    for row in rows:
        assert (tmp_path / row["file"]).exists()


def test_forest_cli_baseline(scene_dir, tmp_path):
    code = main([
        "forest",
        "--left", str(scene_dir / "view1.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--dmax", "12",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert (tmp_path / "forest-level0.ppm").exists()
    assert not (tmp_path / "forest-level1.ppm").exists()


def test_forest_cli_hdp(scene_dir, tmp_path):
    code = main([
        "forest",
        "--left", str(scene_dir / "view1.ppm"),
        "--right", str(scene_dir / "view5.ppm"),
        "--dmax", "12",
        "--hdp",
        "--out", str(tmp_path),
    ])
    assert code == 0
    for level in range(4):
        assert (tmp_path / f"forest-level{level}.ppm").exists(), level
