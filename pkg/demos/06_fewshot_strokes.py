"""
Few-shot mode: novel character classes with no trained classifier
=================================================================

The stroke characters here were never part of any training run, so there
are no classifier weights for them. Few-shot scoring handles that with a
synthetic all-ones head: prototypes are plain feature means and the score
is an unweighted cosine. Two feature sources are compared:

  1. the digit CNN's feature layer (trained on digits, transferred), and
  2. an untrained headless embedder, split_model supplying the ones head.

The demo closes with stroke-level ablation: blank one named stroke of a
character and see which stroke the prototype score actually hangs on.
"""

import os

import numpy as np

from protoshot import (
    compute_prototype,
    read_pgm_dir,
    select_support_set,
    split_model,
)
from protoshot.architectures import fewshot_embedder, init_weights
from protoshot.engine import score_batch
from protoshot.experiments import region_ablation
from protoshot.model import ClassHead
from protoshot.synth import character_stroke_masks, make_stroke_pgm_dir

from _common import OUT, trained_model

SHOTS = 5
SUPPORT_SEED = 11

# --- novel data ------------------------------------------------------------
# 12 jittered instances per character, written as 105x105 PGM files and
# read back with area-resize to the 28x28 the networks expect.
stroke_dir = os.path.join(OUT, "strokes")
if not os.path.isdir(os.path.join(stroke_dir, "char_a")):
    make_stroke_pgm_dir(stroke_dir, n_per_class=12, seed=77)
chars = read_pgm_dir(stroke_dir, resize_to=28)
n_classes = len(chars.class_names)
print(f"{len(chars)} instances of {n_classes} novel classes: {chars.class_names}")


def fewshot_accuracy(extractor, head, tag):
    """5-shot prototype classification accuracy over the held-out instances."""
    supports = {c: select_support_set(chars, c, SHOTS, SUPPORT_SEED)
                for c in range(n_classes)}
    protos = {c: compute_prototype(extractor, head, supports[c])
              for c in range(n_classes)}
    held_out = np.setdiff1d(np.arange(len(chars)),
                            np.concatenate([s.indices for s in supports.values()]))
    queries = chars.images[held_out]
    scores = np.stack([score_batch(protos[c], extractor, head, queries)
                       for c in range(n_classes)], axis=1)
    pred = np.argmax(scores, axis=1)
    acc = float(np.mean(pred == chars.labels[held_out]))
    print(f"{tag}: {acc:.3f} accuracy on {len(queries)} queries "
          f"({SHOTS}-shot, {n_classes}-way)")
    return protos


# 1. Transferred features: the digit CNN's feature layer with a hand-built
#    ones head sized for the novel classes.
bundle = trained_model()
extractor, _ = split_model(bundle)
ones_head = ClassHead(weights=np.ones((extractor.width, n_classes), np.float32),
                      biases=np.zeros(n_classes, np.float32), synthetic=True)
protos = fewshot_accuracy(extractor, ones_head, "digit-CNN features")

# 2. Untrained embedder: headless, so split_model synthesizes the head.
embedder = init_weights(fewshot_embedder(), seed=21)
emb_extractor, emb_head = split_model(embedder)
print(f"embedder head synthetic: {emb_head.synthetic}, "
      f"weights all one: {bool(np.all(emb_head.weights == 1.0))}")
fewshot_accuracy(emb_extractor, emb_head, "untrained embedder")

# --- which stroke carries the class? ----------------------------------------
name = chars.class_names[0]
query = chars.images[int(chars.class_indices(0)[0])]
masks = character_stroke_masks(name, size=28)
rows = region_ablation(protos[0], extractor, ones_head, query, masks)
(_, baseline) = rows[0]
print(f"\nablating strokes of a {name} (baseline {baseline:+.4f}):")
for stroke, score in rows[1:]:
    print(f"  without {stroke:<6} score {score:+.4f} (drop {baseline - score:+.4f})")
