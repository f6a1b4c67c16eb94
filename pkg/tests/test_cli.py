import json
import subprocess
import sys

import numpy as np
import pytest

from forge.blend import BlendConfig, poisson_blend, variational_blend
from forge.cli import build_parser, main
from forge.compositor import attack_jpeg, attack_scale, compose, refine
from forge.image import load_image, load_mask, save_image, save_mask
from forge.morphology import edge_mask, remove_small_components
from conftest import make_triple, write_jsonl

SUBCOMMANDS = ["compose", "blend", "refine", "attack", "edge-mask", "postprocess", "eval", "pipeline"]


@pytest.fixture
def files(tmp_path):
    names = make_triple(tmp_path, "a", 1)
    return {k: str(tmp_path / v) for k, v in names.items()}


def run(argv, capsys):
    status = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return status, out, err


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_lists_every_flag(name, capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([name, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[name]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_edge_mask_constant(tmp_path, capsys):
    save_mask(np.ones((9, 9), bool), tmp_path / "m.png")
    status, _, _ = run(["edge-mask", "--mask", tmp_path / "m.png", "--radius", 2, "--out", tmp_path / "e.png"], capsys)
    assert status == 0
    assert not load_mask(tmp_path / "e.png").any()


def test_blend_poisson_identity_bytes(tmp_path, files, capsys):
    status, out, _ = run(["blend", "--mode", "poisson", "--source", files["target"], "--mask", files["mask"],
                          "--target", files["target"], "--out", tmp_path / "b.png", "--json"], capsys)
    assert status == 0
    assert (tmp_path / "b.png").read_bytes() == open(files["target"], "rb").read()
    assert json.loads(out)["l_bg"] == 0


def test_subcommands_match_library(tmp_path, files, capsys):
    s, t = load_image(files["source"]), load_image(files["target"])
    k = load_mask(files["mask"])

    def saved(arr):
        save_image(arr, tmp_path / "ref.png")
        return load_image(tmp_path / "ref.png")

    assert run(["compose", "--source", files["source"], "--mask", files["mask"], "--target", files["target"],
                "--out", tmp_path / "c.png", "--edge-out", tmp_path / "ce.png"], capsys)[0] == 0
    assert np.array_equal(load_image(tmp_path / "c.png"), saved(compose(s, k, t).image))
    assert np.array_equal(load_mask(tmp_path / "ce.png"), edge_mask(k, 2))

    status, out, _ = run(["blend", "--mode", "variational", "--max-iters", 30, "--source", files["source"],
                          "--mask", files["mask"], "--target", files["target"], "--out", tmp_path / "v.png",
                          "--json"], capsys)
    image, losses = variational_blend(s, k, t, BlendConfig(max_iters=30))
    assert status == 0
    assert np.array_equal(load_image(tmp_path / "v.png"), saved(image))
    assert json.loads(out) == losses.to_dict()

    assert run(["blend", "--source", files["source"], "--mask", files["mask"], "--target", files["target"],
                "--out", tmp_path / "p.png"], capsys)[0] == 0
    assert np.array_equal(load_image(tmp_path / "p.png"), saved(poisson_blend(s, k, t)))

    m = load_image(tmp_path / "c.png")
    assert run(["refine", "--image", tmp_path / "c.png", "--mask", files["mask"], "--target", files["target"],
                "--ground-truth-edge", "--out", tmp_path / "r.png", "--mask-out", tmp_path / "rk.png"], capsys)[0] == 0
    ref = refine(m, k, t, edge_mask(k, 2))
    assert np.array_equal(load_image(tmp_path / "r.png"), saved(ref.image))
    assert np.array_equal(load_mask(tmp_path / "rk.png"), ref.mask)

    assert run(["attack", "--image", files["source"], "--kind", "jpeg", "--quality", 50,
                "--out", tmp_path / "j.png"], capsys)[0] == 0
    assert np.array_equal(load_image(tmp_path / "j.png"), saved(attack_jpeg(s, 50)))

    assert run(["attack", "--image", files["source"], "--mask", files["mask"], "--kind", "scale", "--ratio", 0.5,
                "--out", tmp_path / "sc.png", "--mask-out", tmp_path / "sck.png"], capsys)[0] == 0
    small, small_k = attack_scale(s, k, 0.5)
    assert np.array_equal(load_image(tmp_path / "sc.png"), saved(small))
    assert np.array_equal(load_mask(tmp_path / "sck.png"), small_k)

    noisy = k.copy()
    noisy[0, 0] = True
    save_mask(noisy, tmp_path / "noisy.png")
    assert run(["postprocess", "--mask", tmp_path / "noisy.png", "--min-area", 20, "--out", tmp_path / "pp.png"],
               capsys)[0] == 0
    assert np.array_equal(load_mask(tmp_path / "pp.png"), remove_small_components(noisy, 20, 1))


def test_eval_perfect_predictions(tmp_path, capsys):
    rows = []
    for i in range(3):
        gt = np.random.default_rng(i).random((6, 7)) > 0.5
        save_mask(gt, tmp_path / f"gt{i}.png")
        save_mask(gt, tmp_path / f"p{i}.png")
        rows.append({"id": f"i{i}", "prediction": f"p{i}.png", "ground_truth": f"gt{i}.png"})
    write_jsonl(tmp_path / "pairs.jsonl", rows)
    status, out, _ = run(["eval", "--manifest", tmp_path / "pairs.jsonl", "--metric", "f1",
                          "--mode", "per-image", "--json"], capsys)
    assert status == 0
    report = json.loads(out)
    assert report["dataset_f1"] == 1.0
    assert report["mode"] == "per_image_threshold"
    assert [r["id"] for r in report["per_image"]] == ["i0", "i1", "i2"]


def test_pipeline_status(tmp_path, files, capsys):
    good = {"id": "g", "source": files["source"], "mask": files["mask"], "target": files["target"],
            "steps": ["compose"], "outputs": str(tmp_path / "out")}
    bad = dict(good, id="b", source=str(tmp_path / "nope.png"))
    write_jsonl(tmp_path / "ok.jsonl", [good])
    write_jsonl(tmp_path / "mixed.jsonl", [good, bad])
    status, out, _ = run(["pipeline", "--manifest", tmp_path / "ok.jsonl", "--jobs", 1, "--json"], capsys)
    assert status == 0 and json.loads(out)["failed"] == []
    status, out, err = run(["pipeline", "--manifest", tmp_path / "mixed.jsonl", "--jobs", 2, "--json"], capsys)
    assert status == 1 and json.loads(out)["failed"] == ["b"]
    assert "nope.png" in err


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["compose", "--source", "s.png"],
    ["blend", "--mode", "laplace", "--source", "s", "--mask", "k", "--target", "t", "--out", "o"],
    ["blend", "--lambda-grad", "-1", "--source", "s", "--mask", "k", "--target", "t", "--out", "o"],
    ["refine", "--image", "m", "--mask", "k", "--target", "t", "--boundary", "p", "--ground-truth-edge", "--out", "o"],
    ["refine", "--image", "m", "--mask", "k", "--target", "t", "--out", "o"],
    ["attack", "--image", "i", "--kind", "jpeg", "--quality", "70", "--ratio", "0.5", "--out", "o"],
    ["attack", "--image", "i", "--kind", "scale", "--ratio", "1.5", "--out", "o"],
    ["attack", "--image", "i", "--kind", "jpeg", "--quality", "0", "--out", "o"],
    ["edge-mask", "--mask", "m", "--radius", "0", "--out", "o"],
    ["eval", "--manifest", "m", "--mode", "best"],
    ["pipeline", "--manifest", "m", "--jobs", "0"],
    ["compose", "--unknown-flag"],
])
def test_usage_errors_exit_2(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    status, out, err = run(argv, capsys)
    assert status == 2
    assert out == ""
    assert "usage:" in err
    # rejected before any I/O
    assert list(tmp_path.iterdir()) == []


@pytest.mark.parametrize("argv", [
    ["edge-mask", "--mask", "missing.png", "--out", "e.png"],
    ["eval", "--manifest", "missing.jsonl"],
    ["pipeline", "--manifest", "missing.jsonl"],
])
def test_processing_errors_exit_1(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    status, out, err = run(argv, capsys)
    assert status == 1
    assert out == ""
    assert "missing" in err


def test_bad_manifest_exit_1(tmp_path, capsys):
    write_jsonl(tmp_path / "m.jsonl", ["{broken"])
    status, _, err = run(["pipeline", "--manifest", tmp_path / "m.jsonl"], capsys)
    assert status == 1 and ":1:" in err


def test_module_entry_point_and_log_level(tmp_path):
    save_mask(np.zeros((4, 4), bool), tmp_path / "m.png")
    proc = subprocess.run([sys.executable, "-m", "forge.cli", "edge-mask", "--mask", str(tmp_path / "m.png"),
                           "--out", str(tmp_path / "e.png"), "--json"],
                          capture_output=True, text=True, env={"FORGE_LOG": "debug", "PATH": ""})
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["edge_pixels"] == 0
