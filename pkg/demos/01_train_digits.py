"""
Train a small digit CNN from scratch
====================================

Renders a synthetic MNIST-style dataset to IDX files, trains the compact
CNN with ADAM, and saves the result as a PSX manifest + blob pair. Every
number printed here is reproducible bit for bit: rerunning with the same
seeds gives identical weights.
"""

import os

from protoshot import TrainConfig, count_parameters, read_idx, save_model, train
from protoshot.architectures import compact_digit_cnn, digit_cnn, init_weights
from protoshot.export import save_loss_csv
from protoshot.synth import make_digit_idx
from protoshot.training import evaluate_accuracy

from _common import CONFIG, DATA_DIR, DATA_SEED, INIT_SEED, MODEL_BLOB, MODEL_JSON, OUT

os.makedirs(OUT, exist_ok=True)

# --- dataset ---------------------------------------------------------------
# 2000 train / 1000 test images written as standard big-endian IDX files,
# then read back through the same reader the CLI and service use.
paths = make_digit_idx(DATA_DIR, n_train=2000, n_test=1000, seed=DATA_SEED)
train_set = read_idx(paths["train_images"], paths["train_labels"])
test_set = read_idx(paths["test_images"], paths["test_labels"])
print(f"train: {train_set.images.shape}, test: {test_set.images.shape}")

# --- architecture ----------------------------------------------------------
# The compact architecture trains in seconds; the full digit CNN is the
# classic conv/conv/pool stack with 1,199,882 parameters.
total, trainable, frozen = count_parameters(digit_cnn())
print(f"reference digit CNN: {total:,} parameters ({frozen} non-trainable)")
bundle = init_weights(compact_digit_cnn(), seed=INIT_SEED)
total, _, _ = count_parameters(bundle)
print(f"compact demo CNN:    {total:,} parameters")

# --- training --------------------------------------------------------------
print(f"training: {CONFIG.optimizer}, lr={CONFIG.learning_rate}, "
      f"{CONFIG.epochs} epochs, batch {CONFIG.batch_size}, seed {CONFIG.seed}")
bundle, history = train(bundle, train_set, CONFIG,
                        progress=lambda d, t: print(f"  epoch {d}/{t}"))
print(f"loss: {history[0]:.4f} -> {history[-1]:.4f}")
print(f"held-out accuracy: {evaluate_accuracy(bundle, test_set):.3f}")

# --- artifacts -------------------------------------------------------------
save_model(bundle, MODEL_JSON, MODEL_BLOB)
save_loss_csv(history, os.path.join(OUT, "loss.csv"))
print(f"saved {MODEL_JSON}")
print(f"saved {MODEL_BLOB}")
print(f"saved {os.path.join(OUT, 'loss.csv')}")
