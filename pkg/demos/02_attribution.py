"""
Occlusion attribution: which pixels make a six a six?
=====================================================

Builds a class prototype from a seeded support set, scores a query digit
against it, then slides an occlusion patch over the query. Each cell of
the attribution map is z = z_ref - score(query with that patch blanked):
positive cells support the class, negative cells argue against it.

Scoring the same query against a wrong-class prototype shows the contrast
the method is built for.
"""

import os

import numpy as np

from protoshot import (
    attribution_map,
    compute_prototype,
    normalize_for_display,
    protoshot_score,
    select_support_set,
    split_model,
)
from protoshot.export import grayscale_png, save_heatmap_png, save_map_csv

from _common import OUT, digit_data, trained_model

SUPPORT_N = 25
SUPPORT_SEED = 11
TRUE_CLASS = 6
CONTRAST_CLASS = 5

train_set, test_set = digit_data()
bundle = trained_model(train_set)
extractor, head = split_model(bundle)
print(f"feature layer width K = {extractor.width}")

# The query is the first held-out six.
query_idx = int(test_set.class_indices(TRUE_CLASS)[0])
query = test_set.images[query_idx]
grayscale_png(query, os.path.join(OUT, "query.png"))

for c in (TRUE_CLASS, CONTRAST_CLASS):
    support = select_support_set(train_set, c, SUPPORT_N, SUPPORT_SEED)
    proto = compute_prototype(extractor, head, support)
    record = protoshot_score(proto, extractor, head, query)
    print(f"class {c}: score {record.score:+.4f} "
          f"(components sum {record.components.sum():+.4f})")

    amap = attribution_map(proto, extractor, head, query, patch_size=3)
    _, bound = normalize_for_display(amap)
    print(f"  z_ref {amap.z_ref:+.4f}, color bound {bound:.4f} "
          f"(99.9th percentile of |z|)")

    base = os.path.join(OUT, f"attribution_class{c}")
    save_map_csv(amap, base + ".csv")
    save_heatmap_png(amap, base + ".png", bound=bound)
    print(f"  saved {base}.png / .csv")

# Per-pixel maps (patch_size=1) are sharper but noisier; the strongest
# single pixel for the true class sits on the stroke.
support = select_support_set(train_set, TRUE_CLASS, SUPPORT_N, SUPPORT_SEED)
proto = compute_prototype(extractor, head, support)
amap1 = attribution_map(proto, extractor, head, query, patch_size=1)
i, j = np.unravel_index(np.argmax(amap1.values), amap1.values.shape)
print(f"strongest pixel for class {TRUE_CLASS}: ({i}, {j}), "
      f"z = {amap1.values[i, j]:+.4f}, query ink there = {query[i, j, 0]:.2f}")
