"""Exports: CSV/JSON serializations and PNG heatmaps.

Heatmap palette (the contract shared with any front end): after scaling a
value v by the color bound, t = min(|v| / bound, 1):

    v > 0:  (255, round(255 * (1 - t)), round(255 * (1 - t)))   white -> red
    v < 0:  (round(255 * (1 - t)), round(255 * (1 - t)), 255)   white -> blue
    v = 0:  (255, 255, 255)

so 0 is white and +/- bound are the saturated endpoints.
"""

from __future__ import annotations

import csv
import json

import numpy as np
from PIL import Image

from .engine import AttributionMap, normalize_for_display
from .experiments import RocCurve, SweepTrace


def _values(map_or_values) -> np.ndarray:
    if isinstance(map_or_values, AttributionMap):
        return np.asarray(map_or_values.values, dtype=np.float64)
    return np.asarray(map_or_values, dtype=np.float64)


def save_map_csv(map_or_values, path) -> None:
    """Row-major float grid, one image row per CSV row."""
    values = _values(map_or_values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def load_map_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def map_to_dict(amap: AttributionMap) -> dict:
    scaled, bound = normalize_for_display(amap.values)
    return {
        "values": np.asarray(amap.values, dtype=np.float64).tolist(),
        "z_ref": amap.z_ref,
        "patch_size": amap.patch_size,
        "reference_value": amap.reference_value,
        "class_index": amap.class_index,
        "method": amap.method,
        "color_bound": bound,
    }


def save_map_json(amap: AttributionMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(map_to_dict(amap), fh, indent=2)
        fh.write("\n")


def heatmap_rgb(map_or_values, bound=None) -> np.ndarray:
    """uint8 (H, W, 3) raster under the documented diverging palette."""
    values = _values(map_or_values)
    if bound is None:
        _, bound = normalize_for_display(values)
    if bound <= 0:
        raise ValueError("color bound must be > 0")
    t = np.minimum(np.abs(values) / bound, 1.0)
    fade = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    rgb = np.empty(values.shape + (3,), dtype=np.uint8)
    pos = values >= 0
    rgb[..., 0] = np.where(pos, 255, fade)
    rgb[..., 1] = fade
    rgb[..., 2] = np.where(pos, fade, 255)
    return rgb


def save_heatmap_png(map_or_values, path, bound=None, scale=10) -> None:
    rgb = heatmap_rgb(map_or_values, bound)
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def grayscale_png(image, path, scale=10) -> None:
    """Render a [0,1] single-channel image for side-by-side inspection."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., 0]
    gray = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if scale > 1:
        gray = np.repeat(np.repeat(gray, scale, axis=0), scale, axis=1)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def sweep_to_dict(trace: SweepTrace) -> dict:
    return {
        "parameter": trace.parameter.tolist(),
        "classes": list(trace.classes),
        "protoshot": trace.protoshot.tolist(),
        "exmatchina": trace.exmatchina.tolist(),
        "predicted": trace.predicted.tolist(),
    }


def save_sweep_json(trace: SweepTrace, path) -> None:
    with open(path, "w") as fh:
        json.dump(sweep_to_dict(trace), fh, indent=2)
        fh.write("\n")


def save_sweep_csv(trace: SweepTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["parameter", "predicted"]
        header += [f"protoshot_{c}" for c in trace.classes]
        header += [f"exmatchina_{c}" for c in trace.classes]
        writer.writerow(header)
        for i in range(len(trace)):
            row = [float(trace.parameter[i]), int(trace.predicted[i])]
            row += [float(v) for v in trace.protoshot[i]]
            row += [float(v) for v in trace.exmatchina[i]]
            writer.writerow(row)


def roc_to_dict(curve: RocCurve) -> dict:
    return {
        "points": curve.points.tolist(),
        "auc": curve.auc,
        "thresholds": [float(t) for t in curve.thresholds],
    }


def save_roc_json(curve: RocCurve, path) -> None:
    d = roc_to_dict(curve)
    # JSON has no Infinity literal; emit the threshold endpoints as strings
    d["thresholds"] = [str(t) if not np.isfinite(t) else t for t in d["thresholds"]]
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2)
        fh.write("\n")


def save_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in curve.points:
            writer.writerow([float(fpr), float(tpr)])


def save_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history, start=1):
            writer.writerow([i, float(loss)])


def save_scores_csv(benign, adversarial, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["benign", "adversarial"])
        for b, a in zip(benign, adversarial):
            writer.writerow([float(b), float(a)])


def load_scores_csv(path):
    benign, adv = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["benign", "adversarial"]:
            raise ValueError(f"{path}: expected header benign,adversarial")
        for row in reader:
            if row:
                benign.append(float(row[0]))
                adv.append(float(row[1]))
    return np.asarray(benign), np.asarray(adv)
