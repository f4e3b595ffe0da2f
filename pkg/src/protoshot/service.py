"""HTTP service: model/dataset registry, job queue, synchronous scoring.

Long computations run as jobs on a bounded worker pool and are polled via
GET /jobs/{id}; the job table is the only shared mutable state and sits
behind one lock. Arrays cross the wire as base64-encoded little-endian
buffers plus dtype and shape, never as image codecs.
"""

from __future__ import annotations

import base64
import itertools
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from . import architectures, engine, experiments, export, training
from .data import LabeledDataset, read_idx, read_pgm_dir, select_support_set
from .errors import ProtoshotError
from .model import ModelBundle, count_parameters, load_model, save_model, split_model
from .rng import Rng


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    dtype = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1"}[arr.dtype.name]
    return {
        "dtype": arr.dtype.name,
        "shape": list(arr.shape),
        "data_b64": base64.b64encode(np.ascontiguousarray(arr.astype(dtype)).tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    wire = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1"}
    name = obj["dtype"]
    if name not in wire:
        raise ValueError(f"unsupported wire dtype {name!r}")
    raw = base64.b64decode(obj["data_b64"])
    return np.frombuffer(raw, dtype=wire[name]).astype(name).reshape(obj["shape"]).copy()


class _Job:
    __slots__ = ("id", "kind", "params", "status", "progress", "result", "error")

    def __init__(self, job_id, kind, params):
        self.id = job_id
        self.kind = kind
        self.params = params
        self.status = "queued"
        self.progress = 0.0
        self.result = None
        self.error = None

    def snapshot(self) -> dict:
        out = {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "progress": self.progress,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


class JobManager:
    """Thread-safe job table over a bounded worker pool."""

    def __init__(self, workers=2):
        self._executor = ThreadPoolExecutor(max_workers=workers)
        self._lock = threading.Lock()
        self._jobs = {}
        self._counter = itertools.count(1)

    def submit(self, kind, params, fn) -> str:
        with self._lock:
            job_id = f"job-{next(self._counter):06d}"
            job = _Job(job_id, kind, params)
            self._jobs[job_id] = job

        def set_progress(done, total):
            with self._lock:
                job.progress = max(job.progress, done / total if total else 1.0)

        def run():
            with self._lock:
                job.status = "running"
            try:
                result = fn(set_progress)
            except Exception as exc:
                with self._lock:
                    job.status = "failed"
                    job.error = f"{type(exc).__name__}: {exc}"
                return
            with self._lock:
                job.result = result
                job.progress = 1.0
                job.status = "done"

        self._executor.submit(run)
        return job_id

    def get(self, job_id) -> _Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise KeyError(job_id)
        return job

    def shutdown(self):
        self._executor.shutdown(wait=True)


class RegisterModel(BaseModel):
    manifest_path: str
    blob_path: str
    id: str | None = None


class RegisterDataset(BaseModel):
    id: str | None = None
    kind: str = "idx"  # idx | pgm_dir
    images_path: str | None = None
    labels_path: str | None = None
    root_path: str | None = None
    resize_to: int | None = None
    invert: bool = False


class SupportSpec(BaseModel):
    n: int = 10
    seed: int = 0


class JobRequest(BaseModel):
    kind: str
    params: dict = {}


class ScoreRequest(BaseModel):
    model_id: str
    class_index: int
    support: SupportSpec = SupportSpec()
    dataset_id: str | None = None
    query_index: int | None = None
    query: dict | None = None  # encoded array, alternative to query_index


class AppState:
    def __init__(self, workers=2):
        self.models: dict[str, ModelBundle] = {}
        self.model_meta: dict[str, dict] = {}
        self.datasets: dict[str, LabeledDataset] = {}
        self.jobs = JobManager(workers=workers)
        self._lock = threading.Lock()
        self._model_counter = itertools.count(1)

    def add_model(self, bundle: ModelBundle, model_id=None, meta=None) -> str:
        with self._lock:
            if model_id is None:
                model_id = f"model-{next(self._model_counter)}"
            if model_id in self.models:
                raise ValueError(f"model id {model_id!r} already registered")
            self.models[model_id] = bundle
            self.model_meta[model_id] = meta or {}
        return model_id

    def model(self, model_id) -> ModelBundle:
        bundle = self.models.get(model_id)
        if bundle is None:
            raise KeyError(f"unknown model {model_id!r}")
        return bundle

    def dataset(self, dataset_id) -> LabeledDataset:
        ds = self.datasets.get(dataset_id)
        if ds is None:
            raise KeyError(f"unknown dataset {dataset_id!r}")
        return ds


def _model_info(state: AppState, model_id: str) -> dict:
    bundle = state.model(model_id)
    total, trainable, frozen = count_parameters(bundle)
    return {
        "id": model_id,
        "input_shape": list(bundle.input_shape),
        "feature_layer": bundle.feature_layer,
        "class_labels": list(bundle.class_labels),
        "parameters": {"total": total, "trainable": trainable, "non_trainable": frozen},
        **state.model_meta.get(model_id, {}),
    }


def _resolve_query(state: AppState, params: dict) -> np.ndarray:
    if params.get("query") is not None:
        x = decode_array(params["query"]).astype(np.float32)
        if x.ndim != 3:
            raise ValueError(f"query must be rank-3 (H, W, C), got shape {list(x.shape)}")
        return x
    dataset = state.dataset(params["dataset_id"])
    index = int(params["query_index"])
    if not (0 <= index < len(dataset)):
        raise ValueError(f"query index {index} out of range for dataset of {len(dataset)}")
    return dataset.images[index]


def _prototype_for(state, bundle, params, class_index):
    dataset = state.dataset(params["dataset_id"])
    support = select_support_set(
        dataset, class_index,
        int(params.get("support_n", 10)), int(params.get("support_seed", 0)),
    )
    fe, head = split_model(bundle)
    return engine.compute_prototype(fe, head, support), support, fe, head


def _run_attribution(state: AppState, params: dict, set_progress):
    bundle = state.model(params["model_id"])
    x = _resolve_query(state, params)
    proto, _, fe, head = _prototype_for(state, bundle, params, int(params["class_index"]))
    amap = engine.attribution_map(
        proto, fe, head, x,
        reference_value=float(params.get("reference_value", 0.0)),
        patch_size=int(params.get("patch_size", 1)),
        batch_size=int(params.get("batch_size", 256)),
        progress=set_progress,
    )
    scaled, bound = engine.normalize_for_display(amap.values)
    return {
        "map": encode_array(amap.values.astype(np.float64)),
        "z_ref": amap.z_ref,
        "color_bound": bound,
        "patch_size": amap.patch_size,
        "reference_value": amap.reference_value,
        "class_index": amap.class_index,
    }


def _run_sweep(state: AppState, params: dict, set_progress):
    bundle = state.model(params["model_id"])
    x = _resolve_query(state, params)
    dataset = state.dataset(params["dataset_id"])
    classes = [int(c) for c in params.get("classes", [0, 5, 6, 9])]
    n = int(params.get("support_n", 100))
    seed = int(params.get("support_seed", 0))
    fe, head = split_model(bundle)
    prototypes, supports = {}, {}
    for c in classes:
        supports[c] = select_support_set(dataset, c, n, seed)
        prototypes[c] = engine.compute_prototype(fe, head, supports[c])
    set_progress(1, 4)
    trace = experiments.rotation_sweep(
        bundle, prototypes, supports, x,
        step_degrees=float(params.get("step_degrees", 1.0)),
        feature_extractor=fe, class_head=head,
    )
    ps, ex = trace.agreement_rates()
    out = export.sweep_to_dict(trace)
    out["agreement"] = {"protoshot": ps, "exmatchina": ex}
    return out


def _decode_masks(raw_masks) -> list:
    masks = []
    for m in raw_masks:
        masks.append((str(m["id"]), decode_array(m["mask"]).astype(bool)))
    return masks


def _run_ablation(state: AppState, params: dict, set_progress):
    bundle = state.model(params["model_id"])
    x = _resolve_query(state, params)
    proto, _, fe, head = _prototype_for(state, bundle, params, int(params["class_index"]))
    results = experiments.region_ablation(
        proto, fe, head, x, _decode_masks(params.get("masks", [])),
        reference_value=float(params.get("reference_value", 0.0)),
    )
    return {"scores": [{"id": mid, "score": s} for mid, s in results]}


def _run_adversarial(state: AppState, params: dict, set_progress):
    bundle = state.model(params["model_id"])
    dataset = state.dataset(params["dataset_id"])
    n = int(params.get("n", 500))
    seed = int(params.get("seed", 0))
    epsilon = float(params.get("epsilon", 0.15))
    fe, head = split_model(bundle)
    prototypes = {}
    for c in np.unique(dataset.labels):
        support = select_support_set(
            dataset, int(c),
            int(params.get("support_n", 100)), int(params.get("support_seed", 0)),
        )
        prototypes[int(c)] = engine.compute_prototype(fe, head, support)
    set_progress(1, 10)
    benign, adv = experiments.score_distributions(
        bundle, prototypes, dataset, n, seed, epsilon,
        feature_extractor=fe, class_head=head,
    )
    curve = experiments.detector_roc(benign, adv)
    return {
        "benign": benign.tolist(),
        "adversarial": adv.tolist(),
        "mean_benign": float(benign.mean()),
        "mean_adversarial": float(adv.mean()),
        "auc": curve.auc,
        "roc_points": curve.points.tolist(),
        "epsilon": epsilon,
        "n": n,
        "seed": seed,
    }


def _run_train(state: AppState, params: dict, set_progress):
    arch = params.get("arch", "compact")
    builders = {"compact": architectures.compact_digit_cnn, "full": architectures.digit_cnn}
    if arch not in builders:
        raise ValueError(f"unknown arch {arch!r}")
    dataset = state.dataset(params["dataset_id"])
    seed = int(params.get("seed", 0))
    config = training.TrainConfig(
        optimizer=params.get("optimizer", "adam"),
        learning_rate=float(params.get("learning_rate", 1e-3)),
        epochs=int(params.get("epochs", 10)),
        seed=seed,
        batch_size=int(params.get("batch_size", 32)),
    )
    bundle = architectures.init_weights(builders[arch](), seed=seed)
    bundle, history = training.train(bundle, dataset, config, progress=set_progress)
    accuracy = training.evaluate_accuracy(bundle, dataset)
    model_id = state.add_model(bundle, params.get("model_id"))
    out_manifest = params.get("out_manifest")
    out_blob = params.get("out_blob")
    if out_manifest and out_blob:
        save_model(bundle, out_manifest, out_blob)
    return {
        "model_id": model_id,
        "history": [float(h) for h in history],
        "train_accuracy": accuracy,
    }


_JOB_RUNNERS = {
    "attribution": _run_attribution,
    "sweep": _run_sweep,
    "ablation": _run_ablation,
    "adversarial": _run_adversarial,
    "train": _run_train,
}


def _validate_job(state: AppState, kind: str, params: dict) -> None:
    if kind not in _JOB_RUNNERS:
        raise ValueError(f"unknown job kind {kind!r}")
    if kind != "train":
        state.model(params["model_id"])  # KeyError if unknown
    if kind in ("sweep", "adversarial", "train") or params.get("query") is None:
        if "dataset_id" not in params:
            raise ValueError(f"{kind} job needs dataset_id")
        state.dataset(params["dataset_id"])
    if kind in ("attribution", "ablation"):
        if "class_index" not in params:
            raise ValueError(f"{kind} job needs class_index")
        if params.get("query") is None and params.get("query_index") is None:
            raise ValueError(f"{kind} job needs query_index or an encoded query")
    if "epsilon" in params and float(params["epsilon"]) < 0:
        raise ValueError("epsilon must be >= 0")
    if "patch_size" in params and int(params["patch_size"]) < 1:
        raise ValueError("patch_size must be >= 1")


def create_app(state: AppState | None = None) -> FastAPI:
    app = FastAPI(title="protoshot service")
    if state is None:
        state = AppState()
    app.state.store = state

    def _bad_request(exc) -> HTTPException:
        return HTTPException(status_code=400, detail=str(exc))

    @app.post("/models")
    def register_model(req: RegisterModel):
        try:
            bundle = load_model(req.manifest_path, req.blob_path)
            model_id = state.add_model(
                bundle, req.id,
                meta={"manifest_path": req.manifest_path, "blob_path": req.blob_path},
            )
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (ProtoshotError, ValueError) as exc:
            raise _bad_request(exc)
        return _model_info(state, model_id)

    @app.get("/models")
    def list_models():
        return {"models": [_model_info(state, mid) for mid in sorted(state.models)]}

    @app.post("/datasets")
    def register_dataset(req: RegisterDataset):
        try:
            if req.kind == "idx":
                if not req.images_path or not req.labels_path:
                    raise ValueError("idx dataset needs images_path and labels_path")
                ds = read_idx(req.images_path, req.labels_path)
            elif req.kind == "pgm_dir":
                if not req.root_path:
                    raise ValueError("pgm_dir dataset needs root_path")
                ds = read_pgm_dir(req.root_path, resize_to=req.resize_to, invert=req.invert)
            else:
                raise ValueError(f"unknown dataset kind {req.kind!r}")
            with state._lock:
                dataset_id = req.id or f"dataset-{len(state.datasets) + 1}"
                if dataset_id in state.datasets:
                    raise ValueError(f"dataset id {dataset_id!r} already registered")
                state.datasets[dataset_id] = ds
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (ProtoshotError, ValueError) as exc:
            raise _bad_request(exc)
        return {
            "id": dataset_id,
            "size": len(ds),
            "classes": list(ds.classes),
            "image_shape": list(ds.image_shape),
        }

    @app.get("/datasets")
    def list_datasets():
        return {
            "datasets": [
                {
                    "id": did,
                    "size": len(ds),
                    "classes": list(ds.classes),
                    "class_names": list(ds.class_names),
                    "image_shape": list(ds.image_shape),
                }
                for did, ds in sorted(state.datasets.items())
            ]
        }

    @app.get("/datasets/{dataset_id}/samples")
    def dataset_samples(
        dataset_id: str,
        class_index: int | None = Query(default=None, alias="class"),
        seed: int = 0,
        n: int = 9,
    ):
        try:
            ds = state.dataset(dataset_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        pool = ds.class_indices(class_index) if class_index is not None else np.arange(len(ds))
        if len(pool) == 0:
            raise _bad_request(f"dataset has no samples of class {class_index}")
        if n < 1 or n > len(pool):
            raise _bad_request(f"cannot draw {n} samples from {len(pool)}")
        picks = Rng(seed).sample_without_replacement(len(pool), n)
        chosen = pool[np.asarray(picks, dtype=np.int64)]
        return {
            "dataset_id": dataset_id,
            "indices": [int(i) for i in chosen],
            "labels": [int(label) for label in ds.labels[chosen]],
            "images": encode_array(ds.images[chosen]),
        }

    @app.post("/jobs")
    def submit_job(req: JobRequest):
        try:
            _validate_job(state, req.kind, req.params)
        except (KeyError, ValueError, ProtoshotError) as exc:
            msg = str(exc) if not isinstance(exc, KeyError) else str(exc.args[0])
            raise HTTPException(status_code=400, detail=msg)
        runner = _JOB_RUNNERS[req.kind]
        job_id = state.jobs.submit(
            req.kind, req.params, lambda progress: runner(state, req.params, progress)
        )
        return {"id": job_id, "kind": req.kind, "status": "queued"}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            return state.jobs.get(job_id).snapshot()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")

    @app.get("/jobs/{job_id}/result")
    def get_job_result(job_id: str):
        try:
            job = state.jobs.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        if job.status == "failed":
            raise HTTPException(status_code=500, detail=job.error)
        if job.status != "done":
            raise HTTPException(status_code=409, detail=f"job is {job.status}")
        return {"id": job.id, "kind": job.kind, "result": job.result}

    @app.post("/score")
    def score_once(req: ScoreRequest):
        try:
            bundle = state.model(req.model_id)
            params = {
                "dataset_id": req.dataset_id,
                "query_index": req.query_index,
                "query": req.query,
                "support_n": req.support.n,
                "support_seed": req.support.seed,
            }
            x = _resolve_query(state, params)
            proto, _, fe, head = _prototype_for(state, bundle, params, req.class_index)
            record = engine.protoshot_score(proto, fe, head, x)
        except (KeyError, ValueError, ProtoshotError) as exc:
            msg = str(exc) if not isinstance(exc, KeyError) else str(exc.args[0])
            raise HTTPException(status_code=400, detail=msg)
        return {
            "score": record.score,
            "degenerate": record.degenerate,
            "class_index": record.class_index,
            "components": encode_array(record.components),
        }

    return app


def serve(state: AppState, host="127.0.0.1", port=8008):
    import uvicorn

    uvicorn.run(create_app(state), host=host, port=port, log_level="warning")
