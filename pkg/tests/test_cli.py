import json
import os

import numpy as np
import pytest

from protoshot import cli, engine, experiments, export
from protoshot.data import read_idx, select_support_set
from protoshot.model import load_model, split_model
from protoshot.synth import write_idx_images, write_idx_labels

SUPPORT_SEED = 11


@pytest.fixture(scope="module")
def small_idx_pair(workdir, train_data):
    images = (train_data.images[:128, ..., 0] * 255).round().astype(np.uint8)
    ip = str(workdir / "cli-imgs")
    lp = str(workdir / "cli-labels")
    write_idx_images(ip, images)
    write_idx_labels(lp, train_data.labels[:128])
    return f"{ip},{lp}"


@pytest.fixture(scope="module")
def test_pair(idx_paths):
    return f"{idx_paths['test_images']},{idx_paths['test_labels']}"


def test_train_command(tmp_path, small_idx_pair, capsys):
    out = str(tmp_path / "run")
    rc = cli.main([
        "train", "--data", small_idx_pair, "--epochs", "1", "--seed", "3",
        "--lr", "1e-3", "--out", out,
    ])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "model.json"))
    assert os.path.exists(os.path.join(out, "model.psx"))
    assert os.path.exists(os.path.join(out, "loss.csv"))
    stdout = capsys.readouterr().out
    assert "trained compact" in stdout and "train_accuracy=" in stdout
    # the artifact loads back and matches the input contract
    bundle = load_model(os.path.join(out, "model.json"), os.path.join(out, "model.psx"))
    assert tuple(bundle.input_shape) == (28, 28, 1)


def test_train_command_idx_directory(tmp_path, idx_paths, capsys):
    data_dir = os.path.dirname(idx_paths["train_images"])
    out = str(tmp_path / "run")
    rc = cli.main([
        "train", "--data", data_dir, "--epochs", "1", "--seed", "1", "--out", out,
        "--eval-data", data_dir,
    ])
    assert rc == 0
    assert "eval_accuracy=" in capsys.readouterr().out


def test_train_rejects_unknown_arch(tmp_path, small_idx_pair, capsys):
    rc = cli.main([
        "train", "--arch", "resnet", "--data", small_idx_pair,
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_attribute_command(tmp_path, fixture_psx, fixture_bundle, test_pair,
                           test_data, capsys):
    query_index = int(test_data.class_indices(6)[0])
    out = str(tmp_path / "attr")
    rc = cli.main([
        "attribute", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--class", "6", "--query-index", str(query_index),
        "--support-n", "10", "--seed", str(SUPPORT_SEED),
        "--patch", "3", "--out", out,
    ])
    assert rc == 0
    for suffix in (".csv", ".json", ".png", "_query.png"):
        assert os.path.exists(out + suffix), suffix
    stdout = capsys.readouterr().out
    assert "z_ref=" in stdout and "color_bound=" in stdout

    fe, head = split_model(fixture_bundle)
    support = select_support_set(test_data, 6, 10, SUPPORT_SEED)
    proto = engine.compute_prototype(fe, head, support)
    want = engine.attribution_map(
        proto, fe, head, test_data.images[query_index], patch_size=3
    )
    got = export.load_map_csv(out + ".csv")
    assert np.array_equal(got, want.values)

    with open(out + ".json") as fh:
        payload = json.load(fh)
    assert payload["patch_size"] == 3
    assert payload["z_ref"] == want.z_ref


def test_sweep_command(tmp_path, fixture_psx, test_pair, test_data, capsys):
    query_index = int(test_data.class_indices(6)[0])
    out = str(tmp_path / "sweep")
    rc = cli.main([
        "sweep", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--query-index", str(query_index), "--support-n", "25",
        "--seed", str(SUPPORT_SEED), "--step", "90", "--out", out,
    ])
    assert rc == 0
    assert os.path.exists(out + ".csv") and os.path.exists(out + ".json")
    stdout = capsys.readouterr().out
    assert "sweep 4 steps" in stdout and "agreement" in stdout
    with open(out + ".json") as fh:
        payload = json.load(fh)
    assert payload["classes"] == [0, 5, 6, 9]
    assert len(payload["parameter"]) == 4


def test_ablate_command(tmp_path, fixture_psx, test_pair, test_data, capsys):
    masks_path = str(tmp_path / "masks.json")
    with open(masks_path, "w") as fh:
        json.dump({"masks": [
            {"id": "top", "rows": [0, 14], "cols": [0, 28]},
            {"id": "corner", "cells": [[0, 0], [0, 1], [1, 0]]},
        ]}, fh)
    out = str(tmp_path / "ablate")
    rc = cli.main([
        "ablate", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--class", str(int(test_data.labels[0])), "--query-index", "0",
        "--support-n", "10", "--seed", "2",
        "--masks", masks_path, "--out", out,
    ])
    assert rc == 0
    with open(out + ".json") as fh:
        scores = json.load(fh)["scores"]
    assert [s["id"] for s in scores] == ["baseline", "top", "corner"]
    assert "baseline=" in capsys.readouterr().out


def test_ablate_rejects_malformed_masks(tmp_path, fixture_psx, test_pair, capsys):
    masks_path = str(tmp_path / "bad.json")
    with open(masks_path, "w") as fh:
        json.dump({"masks": [{"id": "x"}]}, fh)
    rc = cli.main([
        "ablate", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--class", "0", "--query-index", "0",
        "--masks", masks_path, "--out", str(tmp_path / "out"),
    ])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_adversarial_and_roc_commands(tmp_path, fixture_psx, test_pair, capsys):
    out = str(tmp_path / "adv")
    rc = cli.main([
        "adversarial", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--n", "30", "--seed", "5", "--support-n", "20",
        "--support-seed", str(SUPPORT_SEED), "--epsilon", "0.15", "--out", out,
    ])
    assert rc == 0
    for suffix in ("_scores.csv", "_roc.csv", "_roc.json"):
        assert os.path.exists(out + suffix), suffix
    stdout = capsys.readouterr().out
    assert "auc=" in stdout

    roc_out = str(tmp_path / "roc2")
    rc = cli.main(["roc", "--scores", out + "_scores.csv", "--out", roc_out])
    assert rc == 0
    assert os.path.exists(roc_out + ".csv") and os.path.exists(roc_out + ".json")

    benign, adv = export.load_scores_csv(out + "_scores.csv")
    want = experiments.detector_roc(benign, adv)
    with open(roc_out + ".json") as fh:
        payload = json.load(fh)
    assert payload["auc"] == pytest.approx(want.auc, abs=1e-12)
    assert f"auc={want.auc:.6f}" in capsys.readouterr().out


def test_missing_file_is_single_error_line(tmp_path, capsys):
    rc = cli.main([
        "attribute", "--manifest", "/nope.json", "--model", "/nope.psx",
        "--data", "/nope-data", "--class", "0", "--query-index", "0",
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.count("\n") == 1


def test_bad_query_index(tmp_path, fixture_psx, test_pair, capsys):
    rc = cli.main([
        "attribute", "--manifest", fixture_psx["manifest"],
        "--model", fixture_psx["blob"], "--data", test_pair,
        "--class", "0", "--query-index", "999999",
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 1
    assert "out of range" in capsys.readouterr().err


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        cli.main([])
