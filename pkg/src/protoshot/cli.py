"""Command line interface.

Every subcommand exits 0 on success; failures print a single
"error: <message>" line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import architectures, engine, experiments, export, training
from .data import read_idx, read_pgm_dir, select_support_set
from .model import load_model, save_model, split_model
from .service import AppState, serve


def _load_dataset(spec: str, split: str = "train"):
    """A dataset argument is an IDX directory (canonical file names), an
    'images,labels' pair, or a PGM class directory."""
    if "," in spec:
        images, labels = spec.split(",", 1)
        return read_idx(images, labels)
    if os.path.isdir(spec):
        images = os.path.join(spec, f"{split}-images-idx3-ubyte")
        labels = os.path.join(spec, f"{split}-labels-idx1-ubyte")
        if os.path.exists(images) and os.path.exists(labels):
            return read_idx(images, labels)
        return read_pgm_dir(spec, resize_to=28)
    raise ValueError(f"cannot interpret dataset argument {spec!r}")


def _load_bundle(args):
    return load_model(args.manifest, args.model)


def _query_image(dataset, index):
    if not (0 <= index < len(dataset)):
        raise ValueError(f"query index {index} out of range (dataset has {len(dataset)})")
    return dataset.images[index]


def _prototype(bundle, dataset, class_index, n, seed):
    fe, head = split_model(bundle)
    support = select_support_set(dataset, class_index, n, seed)
    return engine.compute_prototype(fe, head, support), support, fe, head


def _cmd_train(args):
    builders = {"compact": architectures.compact_digit_cnn, "full": architectures.digit_cnn}
    if args.arch not in builders:
        raise ValueError(f"unknown arch {args.arch!r} (use compact|full)")
    dataset = _load_dataset(args.data, split="train")
    bundle = architectures.init_weights(builders[args.arch](), seed=args.seed)
    config = training.TrainConfig(
        optimizer=args.optimizer, learning_rate=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed,
    )
    bundle, history = training.train(bundle, dataset, config)
    os.makedirs(args.out, exist_ok=True)
    manifest = os.path.join(args.out, "model.json")
    blob = os.path.join(args.out, "model.psx")
    save_model(bundle, manifest, blob)
    export.save_loss_csv(history, os.path.join(args.out, "loss.csv"))
    acc = training.evaluate_accuracy(bundle, dataset)
    line = f"trained {args.arch}: final_loss={history[-1]:.6f} train_accuracy={acc:.4f}"
    if args.eval_data:
        held = _load_dataset(args.eval_data, split="test")
        line += f" eval_accuracy={training.evaluate_accuracy(bundle, held):.4f}"
    print(line)
    print(f"saved {manifest} {blob}")


def _cmd_attribute(args):
    bundle = _load_bundle(args)
    dataset = _load_dataset(args.data)
    x = _query_image(dataset, args.query_index)
    proto, _, fe, head = _prototype(bundle, dataset, args.class_index, args.support_n, args.seed)
    amap = engine.attribution_map(
        proto, fe, head, x, reference_value=args.reference, patch_size=args.patch
    )
    scaled, bound = engine.normalize_for_display(amap.values)
    export.save_map_csv(amap, args.out + ".csv")
    export.save_map_json(amap, args.out + ".json")
    export.save_heatmap_png(amap.values, args.out + ".png", bound=bound)
    export.grayscale_png(x, args.out + "_query.png")
    print(f"attribution z_ref={amap.z_ref:.6f} color_bound={bound:.6f} -> {args.out}.csv/.json/.png")


def _cmd_sweep(args):
    bundle = _load_bundle(args)
    dataset = _load_dataset(args.data)
    x = _query_image(dataset, args.query_index)
    classes = [int(c) for c in args.classes.split(",")]
    fe, head = split_model(bundle)
    prototypes, supports = {}, {}
    for c in classes:
        supports[c] = select_support_set(dataset, c, args.support_n, args.seed)
        prototypes[c] = engine.compute_prototype(fe, head, supports[c])
    trace = experiments.rotation_sweep(
        bundle, prototypes, supports, x, step_degrees=args.step,
        feature_extractor=fe, class_head=head,
    )
    export.save_sweep_csv(trace, args.out + ".csv")
    export.save_sweep_json(trace, args.out + ".json")
    ps, ex = trace.agreement_rates()
    print(f"sweep {len(trace)} steps: agreement protoshot={ps:.4f} exmatchina={ex:.4f} -> {args.out}.csv/.json")


def _load_masks(path, shape):
    with open(path) as fh:
        spec = json.load(fh)
    masks = []
    for m in spec.get("masks", []):
        grid = np.zeros(shape, dtype=bool)
        if "rows" in m and "cols" in m:
            r0, r1 = m["rows"]
            c0, c1 = m["cols"]
            grid[r0:r1, c0:c1] = True
        elif "cells" in m:
            for i, j in m["cells"]:
                grid[i, j] = True
        else:
            raise ValueError(f"mask {m.get('id')!r} needs rows/cols or cells")
        masks.append((str(m["id"]), grid))
    return masks


def _cmd_ablate(args):
    bundle = _load_bundle(args)
    dataset = _load_dataset(args.data)
    x = _query_image(dataset, args.query_index)
    proto, _, fe, head = _prototype(bundle, dataset, args.class_index, args.support_n, args.seed)
    masks = _load_masks(args.masks, x.shape[:2])
    results = experiments.region_ablation(proto, fe, head, x, masks, reference_value=args.reference)
    payload = {"scores": [{"id": mid, "score": s} for mid, s in results]}
    with open(args.out + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    base = results[0][1]
    summary = " ".join(f"{mid}={s:.4f}" for mid, s in results[1:])
    print(f"ablation baseline={base:.4f} {summary} -> {args.out}.json")


def _cmd_adversarial(args):
    bundle = _load_bundle(args)
    dataset = _load_dataset(args.data)
    fe, head = split_model(bundle)
    prototypes = {}
    for c in np.unique(dataset.labels):
        support = select_support_set(dataset, int(c), args.support_n, args.support_seed)
        prototypes[int(c)] = engine.compute_prototype(fe, head, support)
    benign, adv = experiments.score_distributions(
        bundle, prototypes, dataset, args.n, args.seed, args.epsilon,
        feature_extractor=fe, class_head=head,
    )
    curve = experiments.detector_roc(benign, adv)
    export.save_scores_csv(benign, adv, args.out + "_scores.csv")
    export.save_roc_csv(curve, args.out + "_roc.csv")
    export.save_roc_json(curve, args.out + "_roc.json")
    print(
        f"adversarial eps={args.epsilon} n={args.n}: mean_benign={benign.mean():.4f} "
        f"mean_adversarial={adv.mean():.4f} auc={curve.auc:.4f} -> {args.out}_*.csv/.json"
    )


def _cmd_roc(args):
    benign, adv = export.load_scores_csv(args.scores)
    curve = experiments.detector_roc(benign, adv)
    export.save_roc_csv(curve, args.out + ".csv")
    export.save_roc_json(curve, args.out + ".json")
    print(f"roc auc={curve.auc:.6f} points={len(curve.points)} -> {args.out}.csv/.json")


def _cmd_serve(args):
    state = AppState(workers=args.workers)
    for entry in args.register_model or []:
        mid, paths = entry.split("=", 1)
        manifest, blob = paths.split(",", 1)
        state.add_model(load_model(manifest, blob), mid,
                        meta={"manifest_path": manifest, "blob_path": blob})
    for entry in args.register_data or []:
        did, spec = entry.split("=", 1)
        state.datasets[did] = _load_dataset(spec)
    print(f"serving on http://{args.host}:{args.port} "
          f"(models: {len(state.models)}, datasets: {len(state.datasets)})")
    serve(state, host=args.host, port=args.port)


def _add_model_args(p):
    p.add_argument("--manifest", required=True, help="PSX manifest path")
    p.add_argument("--model", required=True, help="PSX blob path")


def _add_support_args(p, default_n):
    p.add_argument("--support-n", type=int, default=default_n)
    p.add_argument("--seed", type=int, default=0, help="support selection seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoshot")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save it as PSX")
    p.add_argument("--arch", default="compact")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", default="adam")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("attribute", help="occlusion attribution map for one query")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--query-index", type=int, required=True)
    _add_support_args(p, 10)
    p.add_argument("--patch", type=int, default=1)
    p.add_argument("--reference", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=_cmd_attribute)

    p = sub.add_parser("sweep", help="rotation sweep with scores per class")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--query-index", type=int, required=True)
    p.add_argument("--classes", default="0,5,6,9")
    _add_support_args(p, 100)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("ablate", help="score drops for masked regions")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--query-index", type=int, required=True)
    _add_support_args(p, 10)
    p.add_argument("--masks", required=True, help="JSON file of named masks")
    p.add_argument("--reference", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("adversarial", help="benign vs FGSM score distributions")
    _add_model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0, help="sample selection seed")
    p.add_argument("--support-n", type=int, default=100)
    p.add_argument("--support-seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_adversarial)

    p = sub.add_parser("roc", help="ROC/AUC from a benign,adversarial score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_roc)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--register-model", action="append", metavar="ID=MANIFEST,BLOB")
    p.add_argument("--register-data", action="append", metavar="ID=PATH")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
