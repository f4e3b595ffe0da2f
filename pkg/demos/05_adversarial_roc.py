"""
Adversarial detection: prototype scores drop under FGSM
=======================================================

Perturbs held-out digits with the fast gradient sign method and compares
each image's prototype score (against its own class) before and after.
The perturbation is pixel-bounded (epsilon = 0.15) yet collapses the
scores, so a simple threshold on the score separates benign from
adversarial inputs, summarized by the ROC curve's area.
"""

import os

import numpy as np

from protoshot import compute_prototype, select_support_set, split_model
from protoshot.experiments import detector_roc, fgsm_generate, score_distributions
from protoshot.export import grayscale_png, save_roc_csv, save_scores_csv
from protoshot.model import predict

from _common import OUT, digit_data, trained_model

SUPPORT_N = 25
SUPPORT_SEED = 11
EPSILON = 0.15
N_SAMPLES = 200

train_set, test_set = digit_data()
bundle = trained_model(train_set)
extractor, head = split_model(bundle)

# One prototype per class, all from the same seeded support draw.
protos = {c: compute_prototype(extractor, head,
                               select_support_set(train_set, c, SUPPORT_N, SUPPORT_SEED))
          for c in range(10)}

# A single example first: attack one six and watch the prediction break.
idx = int(test_set.class_indices(6)[0])
x = test_set.images[idx]
x_adv = fgsm_generate(bundle, x, true_label=6, epsilon=EPSILON)
before, _ = predict(bundle, x)
after, _ = predict(bundle, x_adv)
print(f"single six: predicted {before} before, {after} after FGSM "
      f"(max pixel change {np.abs(x_adv - x).max():.3f})")
grayscale_png(x, os.path.join(OUT, "benign.png"))
grayscale_png(x_adv, os.path.join(OUT, "adversarial.png"))

# Population view: in-class prototype scores for n seeded samples and
# their attacked copies.
benign, adversarial = score_distributions(bundle, protos, test_set,
                                          n=N_SAMPLES, seed=7, epsilon=EPSILON,
                                          feature_extractor=extractor,
                                          class_head=head)
print(f"\nmean score: benign {benign.mean():+.4f}, "
      f"adversarial {adversarial.mean():+.4f}")
print(f"score overlap: {np.mean(adversarial >= benign.min()):.1%} of attacked "
      f"images score above the weakest benign one")

curve = detector_roc(benign, adversarial)
print(f"detector AUC: {curve.auc:.4f} "
      f"({len(curve.points)} ROC points from {len(curve.thresholds)} thresholds)")

save_scores_csv(benign, adversarial, os.path.join(OUT, "scores.csv"))
save_roc_csv(curve, os.path.join(OUT, "roc.csv"))
print(f"saved {os.path.join(OUT, 'scores.csv')} and roc.csv")
