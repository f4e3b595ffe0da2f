"""Shared setup for the demo scripts.

Renders the synthetic digit dataset and trains the demo CNN once, caching
both under demos/out/ so the later demos start instantly.
"""

import os

from protoshot import TrainConfig, load_model, read_idx, save_model, train
from protoshot.architectures import compact_digit_cnn, init_weights
from protoshot.synth import make_digit_idx
from protoshot.training import evaluate_accuracy

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "out")
DATA_DIR = os.path.join(OUT, "digits")
MODEL_JSON = os.path.join(OUT, "digits-model.json")
MODEL_BLOB = os.path.join(OUT, "digits-model.psx")

DATA_SEED = 42
INIT_SEED = 3
CONFIG = TrainConfig(optimizer="adam", learning_rate=1e-3, batch_size=32,
                     epochs=10, seed=5)


def digit_data():
    """(train, test) LabeledDatasets, rendered to IDX files on first use."""
    os.makedirs(OUT, exist_ok=True)
    train_images = os.path.join(DATA_DIR, "train-images-idx3-ubyte")
    if not os.path.exists(train_images):
        print("rendering digit dataset (one-time) ...")
        make_digit_idx(DATA_DIR, n_train=2000, n_test=1000, seed=DATA_SEED)
    train_set = read_idx(train_images,
                         os.path.join(DATA_DIR, "train-labels-idx1-ubyte"))
    test_set = read_idx(os.path.join(DATA_DIR, "test-images-idx3-ubyte"),
                        os.path.join(DATA_DIR, "test-labels-idx1-ubyte"))
    return train_set, test_set


def trained_model(train_set=None):
    """The demo CNN, trained once then reloaded from its PSX pair."""
    if os.path.exists(MODEL_JSON):
        return load_model(MODEL_JSON, MODEL_BLOB)
    if train_set is None:
        train_set, _ = digit_data()
    print("training demo model (one-time, ~15 s) ...")
    bundle = init_weights(compact_digit_cnn(), seed=INIT_SEED)
    bundle, history = train(bundle, train_set, CONFIG,
                            progress=lambda done, total: print(f"  epoch {done}/{total}"))
    print(f"final epoch loss {history[-1]:.4f}")
    save_model(bundle, MODEL_JSON, MODEL_BLOB)
    return bundle


if __name__ == "__main__":
    tr, te = digit_data()
    bundle = trained_model(tr)
    print(f"held-out accuracy: {evaluate_accuracy(bundle, te):.3f}")
