import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from protoshot import engine, training
from protoshot.architectures import compact_digit_cnn, init_weights
from protoshot.data import select_support_set
from protoshot.model import split_model
from protoshot.service import AppState, JobManager, create_app, decode_array, encode_array
from protoshot.synth import write_idx_images, write_idx_labels

SUPPORT_SEED = 11


@pytest.fixture(scope="module")
def subset_idx(workdir, train_data):
    """Small IDX pair for train jobs."""
    images = (train_data.images[:256, ..., 0] * 255).round().astype(np.uint8)
    labels = train_data.labels[:256]
    ip = str(workdir / "svc-imgs")
    lp = str(workdir / "svc-labels")
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    return ip, lp


@pytest.fixture(scope="module")
def state():
    return AppState(workers=2)


@pytest.fixture(scope="module")
def client(state, fixture_psx, idx_paths, stroke_dir, subset_idx):
    app = create_app(state)
    with TestClient(app) as c:
        r = c.post("/models", json={
            "manifest_path": fixture_psx["manifest"],
            "blob_path": fixture_psx["blob"],
            "id": "fixture",
        })
        assert r.status_code == 200, r.text
        r = c.post("/datasets", json={
            "id": "digits-test",
            "kind": "idx",
            "images_path": str(idx_paths["test_images"]),
            "labels_path": str(idx_paths["test_labels"]),
        })
        assert r.status_code == 200, r.text
        r = c.post("/datasets", json={
            "id": "train-slice",
            "kind": "idx",
            "images_path": subset_idx[0],
            "labels_path": subset_idx[1],
        })
        assert r.status_code == 200, r.text
        yield c


def _wait_for(client, job_id, timeout=300.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        snap = client.get(f"/jobs/{job_id}").json()
        if snap["status"] in ("done", "failed"):
            return snap
        time.sleep(0.02)
    raise TimeoutError(f"job {job_id} still {snap['status']}")


def test_array_codec_round_trip():
    for arr in (
        np.arange(12, dtype=np.float32).reshape(3, 4),
        np.linspace(-1, 1, 7, dtype=np.float64),
        np.array([[1, 0], [0, 1]], dtype=np.uint8),
        np.arange(5, dtype=np.int64),
    ):
        again = decode_array(encode_array(arr))
        assert again.dtype == arr.dtype
        assert np.array_equal(again, arr)


def test_decode_rejects_unknown_dtype():
    with pytest.raises(ValueError):
        decode_array({"dtype": "complex128", "shape": [1], "data_b64": ""})


def test_register_model_reports_parameters(client):
    models = client.get("/models").json()["models"]
    entry = next(m for m in models if m["id"] == "fixture")
    assert entry["input_shape"] == [28, 28, 1]
    assert entry["feature_layer"] == "feature"
    assert entry["parameters"]["total"] == entry["parameters"]["trainable"]
    assert entry["parameters"]["total"] > 100_000


def test_register_model_unknown_path_is_404(client):
    r = client.post("/models", json={
        "manifest_path": "/nope/missing.json",
        "blob_path": "/nope/missing.psx",
    })
    assert r.status_code == 404


def test_register_model_duplicate_id_is_400(client, fixture_psx):
    r = client.post("/models", json={
        "manifest_path": fixture_psx["manifest"],
        "blob_path": fixture_psx["blob"],
        "id": "fixture",
    })
    assert r.status_code == 400


def test_register_corrupt_blob_is_400(client, fixture_psx, tmp_path):
    bad = tmp_path / "bad.psx"
    bad.write_bytes(open(fixture_psx["blob"], "rb").read()[:40])
    r = client.post("/models", json={
        "manifest_path": fixture_psx["manifest"],
        "blob_path": str(bad),
    })
    assert r.status_code == 400


def test_register_pgm_dataset(client, stroke_dir):
    r = client.post("/datasets", json={
        "id": "strokes",
        "kind": "pgm_dir",
        "root_path": str(stroke_dir),
        "resize_to": 28,
    })
    assert r.status_code == 200
    body = r.json()
    assert body["image_shape"] == [28, 28, 1]
    assert len(body["classes"]) == 3


def test_dataset_samples_seeded(client, test_data):
    r = client.get("/datasets/digits-test/samples", params={"class": 6, "seed": 4, "n": 5})
    assert r.status_code == 200
    body = r.json()
    assert len(body["indices"]) == 5
    assert body["labels"] == [6] * 5
    images = decode_array(body["images"])
    assert images.shape == (5, 28, 28, 1)
    assert np.array_equal(images, test_data.images[body["indices"]])

    again = client.get("/datasets/digits-test/samples", params={"class": 6, "seed": 4, "n": 5}).json()
    assert again["indices"] == body["indices"]
    other = client.get("/datasets/digits-test/samples", params={"class": 6, "seed": 5, "n": 5}).json()
    assert other["indices"] != body["indices"]


def test_dataset_samples_errors(client):
    assert client.get("/datasets/nope/samples").status_code == 404
    r = client.get("/datasets/digits-test/samples", params={"class": 6, "n": 10_000})
    assert r.status_code == 400


def test_attribution_job_matches_library_bitwise(client, fixture_bundle, test_data):
    query_index = int(test_data.class_indices(6)[0])
    r = client.post("/jobs", json={"kind": "attribution", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "query_index": query_index,
        "class_index": 6,
        "support_n": 25,
        "support_seed": SUPPORT_SEED,
        "patch_size": 3,
    }})
    assert r.status_code == 200
    job_id = r.json()["id"]
    snap = _wait_for(client, job_id)
    assert snap["status"] == "done", snap
    assert snap["progress"] == 1.0

    result = client.get(f"/jobs/{job_id}/result").json()["result"]
    got = decode_array(result["map"])

    fe, head = split_model(fixture_bundle)
    support = select_support_set(test_data, 6, 25, SUPPORT_SEED)
    proto = engine.compute_prototype(fe, head, support)
    want = engine.attribution_map(
        proto, fe, head, test_data.images[query_index], patch_size=3
    )
    assert np.array_equal(got, want.values)
    assert result["z_ref"] == want.z_ref
    _, bound = engine.normalize_for_display(want.values)
    assert result["color_bound"] == bound


def test_score_endpoint_matches_library_bitwise(client, fixture_bundle, test_data):
    query_index = int(test_data.class_indices(3)[1])
    r = client.post("/score", json={
        "model_id": "fixture",
        "class_index": 3,
        "support": {"n": 20, "seed": 7},
        "dataset_id": "digits-test",
        "query_index": query_index,
    })
    assert r.status_code == 200
    body = r.json()

    fe, head = split_model(fixture_bundle)
    support = select_support_set(test_data, 3, 20, 7)
    proto = engine.compute_prototype(fe, head, support)
    record = engine.protoshot_score(proto, fe, head, test_data.images[query_index])
    assert body["score"] == record.score
    assert body["degenerate"] == record.degenerate
    assert np.array_equal(decode_array(body["components"]), record.components)


def test_score_accepts_encoded_query(client, fixture_bundle, test_data):
    x = test_data.images[0]
    r = client.post("/score", json={
        "model_id": "fixture",
        "class_index": 0,
        "support": {"n": 10, "seed": 1},
        "dataset_id": "digits-test",
        "query": encode_array(x),
    })
    assert r.status_code == 200
    assert -1.0 <= r.json()["score"] <= 1.0


def test_score_unknown_model_is_400(client):
    r = client.post("/score", json={
        "model_id": "ghost",
        "class_index": 0,
        "dataset_id": "digits-test",
        "query_index": 0,
    })
    assert r.status_code == 400


def test_job_validation_failure_creates_no_job(client):
    bad = client.post("/jobs", json={"kind": "attribution", "params": {
        "model_id": "ghost", "dataset_id": "digits-test",
        "query_index": 0, "class_index": 0,
    }})
    assert bad.status_code == 400

    first = client.post("/jobs", json={"kind": "ablation", "params": {
        "model_id": "fixture", "dataset_id": "digits-test",
        "query_index": 0, "class_index": 0, "masks": [],
    }}).json()["id"]
    second = client.post("/jobs", json={"kind": "ablation", "params": {
        "model_id": "fixture", "dataset_id": "digits-test",
        "query_index": 0, "class_index": 0, "masks": [],
    }}).json()["id"]
    assert first != second
    # sequential ids: the rejected submission did not burn a slot
    assert int(second.split("-")[1]) == int(first.split("-")[1]) + 1
    _wait_for(client, first)
    _wait_for(client, second)


def test_job_invalid_kind_and_params(client):
    assert client.post("/jobs", json={"kind": "dance", "params": {}}).status_code == 400
    r = client.post("/jobs", json={"kind": "attribution", "params": {
        "model_id": "fixture", "dataset_id": "digits-test", "query_index": 0,
    }})
    assert r.status_code == 400  # class_index missing
    r = client.post("/jobs", json={"kind": "adversarial", "params": {
        "model_id": "fixture", "dataset_id": "digits-test", "epsilon": -1.0,
    }})
    assert r.status_code == 400


def test_unknown_job_is_404(client):
    assert client.get("/jobs/job-999999").status_code == 404
    assert client.get("/jobs/job-999999/result").status_code == 404


def test_unfinished_job_result_is_409(client, state):
    gate = threading.Event()
    job_id = state.jobs.submit("attribution", {}, lambda progress: gate.wait(30) or {})
    try:
        r = client.get(f"/jobs/{job_id}/result")
        assert r.status_code == 409
    finally:
        gate.set()
    _wait_for(client, job_id)


def test_failed_job_reports_error(client):
    r = client.post("/jobs", json={"kind": "attribution", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "query_index": 0,
        "class_index": 6,
        "support_n": 25,
        "support_seed": SUPPORT_SEED,
        "patch_size": 999,  # validated lazily against the image inside the job
    }})
    # oversized patch passes the static check (>=1) but fails in the runner
    assert r.status_code == 200
    snap = _wait_for(client, r.json()["id"])
    assert snap["status"] == "failed"
    assert "patch" in snap["error"]
    assert client.get(f"/jobs/{r.json()['id']}/result").status_code == 500


def test_attribution_progress_is_fraction_of_perturbations(client):
    r = client.post("/jobs", json={"kind": "attribution", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "query_index": 1,
        "class_index": 0,
        "support_n": 10,
        "support_seed": 1,
        "batch_size": 16,
    }})
    job_id = r.json()["id"]
    seen = []
    while True:
        snap = client.get(f"/jobs/{job_id}").json()
        seen.append(snap["progress"])
        if snap["status"] in ("done", "failed"):
            break
        time.sleep(0.005)
    assert snap["status"] == "done"
    # every observed value is k/784 for whole k, and the series never regresses
    for p in seen:
        assert (p * 784) == pytest.approx(round(p * 784), abs=1e-9)
    assert all(a <= b + 1e-12 for a, b in zip(seen, seen[1:]))
    assert seen[-1] == 1.0


def test_sweep_job_shape(client, test_data):
    r = client.post("/jobs", json={"kind": "sweep", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "query_index": int(test_data.class_indices(6)[0]),
        "support_n": 30,
        "support_seed": SUPPORT_SEED,
        "step_degrees": 45.0,
    }})
    assert r.status_code == 200
    snap = _wait_for(client, r.json()["id"])
    assert snap["status"] == "done", snap
    result = client.get(f"/jobs/{r.json()['id']}/result").json()["result"]
    assert result["classes"] == [0, 5, 6, 9]
    assert len(result["parameter"]) == 8
    assert len(result["protoshot"]) == 8 and len(result["protoshot"][0]) == 4
    assert set(result["agreement"]) == {"protoshot", "exmatchina"}


def test_ablation_job_with_masks(client, fixture_bundle, test_data):
    mask = np.zeros((28, 28), dtype=np.uint8)
    mask[10:18, 10:18] = 1
    r = client.post("/jobs", json={"kind": "ablation", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "query_index": 2,
        "class_index": int(test_data.labels[2]),
        "support_n": 15,
        "support_seed": 3,
        "masks": [{"id": "center", "mask": encode_array(mask)}],
    }})
    snap = _wait_for(client, r.json()["id"])
    assert snap["status"] == "done", snap
    scores = client.get(f"/jobs/{r.json()['id']}/result").json()["result"]["scores"]
    assert [s["id"] for s in scores] == ["baseline", "center"]
    for s in scores:
        assert -1.0 <= s["score"] <= 1.0


def test_adversarial_job_structure(client):
    r = client.post("/jobs", json={"kind": "adversarial", "params": {
        "model_id": "fixture",
        "dataset_id": "digits-test",
        "n": 40,
        "seed": 13,
        "epsilon": 0.15,
        "support_n": 20,
        "support_seed": SUPPORT_SEED,
    }})
    snap = _wait_for(client, r.json()["id"])
    assert snap["status"] == "done", snap
    result = client.get(f"/jobs/{r.json()['id']}/result").json()["result"]
    assert len(result["benign"]) == 40 and len(result["adversarial"]) == 40
    assert 0.0 <= result["auc"] <= 1.0
    assert result["mean_benign"] > result["mean_adversarial"]


def test_train_job_matches_library(client, state, subset_idx, train_data):
    r = client.post("/jobs", json={"kind": "train", "params": {
        "dataset_id": "train-slice",
        "model_id": "svc-trained",
        "arch": "compact",
        "epochs": 1,
        "seed": 17,
        "learning_rate": 1e-3,
        "batch_size": 32,
    }})
    assert r.status_code == 200, r.text
    snap = _wait_for(client, r.json()["id"])
    assert snap["status"] == "done", snap
    result = client.get(f"/jobs/{r.json()['id']}/result").json()["result"]
    assert result["model_id"] == "svc-trained"
    assert len(result["history"]) == 1

    from protoshot.data import read_idx

    subset = read_idx(subset_idx[0], subset_idx[1])
    cfg = training.TrainConfig(optimizer="adam", learning_rate=1e-3,
                               epochs=1, seed=17, batch_size=32)
    bundle, history = training.train(
        init_weights(compact_digit_cnn(), seed=17), subset, cfg
    )
    assert result["history"] == [float(h) for h in history]
    assert result["train_accuracy"] == training.evaluate_accuracy(bundle, subset)

    served = state.models["svc-trained"]
    for name in bundle.weights:
        assert np.array_equal(served.weights[name], bundle.weights[name]), name

    ids = [m["id"] for m in client.get("/models").json()["models"]]
    assert "svc-trained" in ids


def test_job_manager_direct_lifecycle():
    jm = JobManager(workers=1)
    try:
        gate = threading.Event()

        def blocked(progress):
            gate.wait(10)
            return "ok"

        job_id = jm.submit("x", {}, blocked)
        assert jm.get(job_id).snapshot()["status"] in ("queued", "running")
        gate.set()
        deadline = time.time() + 10
        while jm.get(job_id).status != "done" and time.time() < deadline:
            time.sleep(0.01)
        assert jm.get(job_id).status == "done"
        assert jm.get(job_id).result == "ok"
        with pytest.raises(KeyError):
            jm.get("nope")
    finally:
        jm.shutdown()
