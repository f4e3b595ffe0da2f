import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoshot.data import SupportSet
from protoshot.engine import compute_prototype, protoshot_score, score_batch
from protoshot.errors import ShapeMismatchError, ValidationError
from protoshot.experiments import (
    detector_roc,
    fgsm_batch,
    fgsm_generate,
    region_ablation,
    rotate_image,
    rotation_sweep,
    score_distributions,
)
from protoshot.layers import LayerSpec, WeightRef
from protoshot.model import ModelBundle, predict
from protoshot.rng import Rng


class IdentityExtractor:
    def features(self, images, dtype=np.float32):
        arr = np.asarray(images, dtype=dtype)
        return arr.reshape(arr.shape[0], -1)


class OnesHead:
    def __init__(self, width):
        self.width = width

    def class_weights(self, c):
        return np.ones(self.width, dtype=np.float32)


# ---------------------------------------------------------------------------
# rotation


def test_rotate_zero_is_identity_copy():
    x = Rng(1).uniform_array((8, 8, 1)).astype(np.float32)
    out = rotate_image(x, 0.0)
    assert np.array_equal(out, x)
    assert out is not x
    assert np.array_equal(rotate_image(x, 360.0), x)


def test_rotate_90_even_grid_is_exact_permutation():
    x = Rng(2).uniform_array((10, 10, 1)).astype(np.float32)
    got = rotate_image(x, 90.0)
    want = np.rot90(x, k=1, axes=(0, 1))
    assert np.allclose(got, want, atol=1e-6)


def test_rotate_270_even_grid():
    x = Rng(3).uniform_array((6, 6, 1)).astype(np.float32)
    assert np.allclose(rotate_image(x, 270.0), np.rot90(x, k=3, axes=(0, 1)), atol=1e-6)


def test_rotate_180_twice_recovers_image():
    x = Rng(4).uniform_array((9, 9, 1)).astype(np.float32)
    back = rotate_image(rotate_image(x, 180.0), 180.0)
    assert np.max(np.abs(back - x)) < 1e-5


def test_rotate_fills_outside_with_zero():
    x = np.ones((8, 8, 1), dtype=np.float32)
    out = rotate_image(x, 45.0)
    # the corners leave the disc of the image and must read 0
    assert out[0, 0, 0] == 0.0
    assert out[-1, -1, 0] == 0.0


def test_rotate_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        rotate_image(np.zeros((4, 5, 1)), 10.0)
    with pytest.raises(ShapeMismatchError):
        rotate_image(np.zeros((4, 4, 3)), 10.0)
    with pytest.raises(ShapeMismatchError):
        rotate_image(np.zeros((4, 4)), 10.0)


# ---------------------------------------------------------------------------
# rotation sweep


@pytest.fixture(scope="module")
def sweep(fixture_bundle, prototypes_0569, supports_0569, query_six, fixture_split):
    fe, head = fixture_split
    return rotation_sweep(
        fixture_bundle,
        prototypes_0569,
        supports_0569,
        query_six,
        step_degrees=1.0,
        feature_extractor=fe,
        class_head=head,
    )


def test_sweep_cardinality_and_layout(sweep):
    assert len(sweep) == 360
    assert sweep.classes == (0, 5, 6, 9)
    assert sweep.protoshot.shape == (360, 4)
    assert sweep.exmatchina.shape == (360, 4)
    assert np.all(sweep.parameter == np.arange(360.0))
    assert np.all((-1.0 - 1e-9 <= sweep.protoshot) & (sweep.protoshot <= 1.0 + 1e-9))
    assert np.all((-1.0 - 1e-9 <= sweep.exmatchina) & (sweep.exmatchina <= 1.0 + 1e-9))


def test_sweep_angle_zero_matches_direct_scores(
    sweep, prototypes_0569, query_six, fixture_split, fixture_bundle
):
    fe, head = fixture_split
    for col, c in enumerate(sweep.classes):
        direct = score_batch(prototypes_0569[c], fe, head, query_six[None])[0]
        assert sweep.protoshot[0, col] == pytest.approx(float(direct), abs=1e-6)
    assert sweep.predicted[0] == predict(fixture_bundle, query_six)[0]


def test_sweep_identifies_six_at_zero(sweep):
    assert sweep.protoshot_argmax()[0] == 6
    assert sweep.predicted[0] == 6


def test_sweep_coarse_step_cardinality(
    fixture_bundle, prototypes_0569, supports_0569, query_six, fixture_split
):
    fe, head = fixture_split
    trace = rotation_sweep(
        fixture_bundle, prototypes_0569, supports_0569, query_six,
        step_degrees=45.0, feature_extractor=fe, class_head=head,
    )
    assert len(trace) == 8
    assert np.all(trace.parameter == np.arange(0.0, 360.0, 45.0))


def test_sweep_rejects_mismatched_class_cover(
    fixture_bundle, prototypes_0569, supports_0569, query_six
):
    partial = {c: s for c, s in supports_0569.items() if c != 9}
    with pytest.raises(ValidationError):
        rotation_sweep(fixture_bundle, prototypes_0569, partial, query_six)


def test_sweep_agreement_rates_in_range(sweep):
    ps, ex = sweep.agreement_rates()
    assert 0.0 <= ps <= 1.0 and 0.0 <= ex <= 1.0


# ---------------------------------------------------------------------------
# region ablation


def _ablation_setup():
    rng = Rng(21)
    ext = IdentityExtractor()
    head = OnesHead(16)
    support = SupportSet(
        class_index=0,
        images=(rng.uniform_array((3, 4, 4, 1)) + 0.1).astype(np.float32),
        indices=np.arange(3),
        seed=0,
    )
    proto = compute_prototype(ext, head, support)
    x = (rng.uniform_array((4, 4, 1)) + 0.1).astype(np.float32)
    return ext, head, proto, x


def test_ablation_baseline_first_and_exact():
    ext, head, proto, x = _ablation_setup()
    rows = region_ablation(proto, ext, head, x, [])
    assert rows[0][0] == "baseline"
    want = protoshot_score(proto, ext, head, x).score
    assert rows[0][1] == pytest.approx(want, abs=1e-7)


def test_ablation_empty_mask_equals_baseline():
    ext, head, proto, x = _ablation_setup()
    rows = region_ablation(proto, ext, head, x, [("noop", np.zeros((4, 4), dtype=bool))])
    assert rows[1][0] == "noop"
    assert rows[1][1] == rows[0][1]


def test_ablation_full_mask_scores_blank_image():
    ext, head, proto, x = _ablation_setup()
    rows = region_ablation(proto, ext, head, x, [("all", np.ones((4, 4), dtype=bool))])
    blank = protoshot_score(proto, ext, head, np.zeros_like(x)).score
    assert rows[1][1] == pytest.approx(blank, abs=1e-7)


def test_ablation_respects_reference_value():
    ext, head, proto, x = _ablation_setup()
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 1:3] = True
    rows = region_ablation(proto, ext, head, x, [("m", mask)], reference_value=0.5)
    pert = x.copy()
    pert[mask] = 0.5
    want = protoshot_score(proto, ext, head, pert).score
    assert rows[1][1] == pytest.approx(want, abs=1e-7)


def test_ablation_rejects_bad_mask_shape():
    ext, head, proto, x = _ablation_setup()
    with pytest.raises(ShapeMismatchError):
        region_ablation(proto, ext, head, x, [("bad", np.zeros((3, 3), dtype=bool))])


# ---------------------------------------------------------------------------
# FGSM


def _linear_softmax_bundle(rng):
    kernel = (rng.uniform_array((4, 3)) - 0.5).astype(np.float32)
    return ModelBundle(
        layers=(
            LayerSpec(name="flat", kind="flatten"),
            LayerSpec(
                name="logits",
                kind="dense",
                units=3,
                weights=(
                    WeightRef("kernel", "logits/kernel", (4, 3)),
                    WeightRef("bias", "logits/bias", (3,)),
                ),
            ),
            LayerSpec(name="probs", kind="softmax"),
        ),
        weights={
            "logits/kernel": kernel,
            "logits/bias": np.zeros(3, dtype=np.float32),
        },
        input_shape=(2, 2, 1),
        feature_layer="flat",
        class_labels=("a", "b", "c"),
    ), kernel


def test_fgsm_zero_epsilon_is_copy(fixture_bundle, query_six):
    out = fgsm_generate(fixture_bundle, query_six, 6, epsilon=0.0)
    assert np.array_equal(out, query_six)
    assert out is not query_six


def test_fgsm_stays_in_unit_range_and_bounded_step(fixture_bundle, query_six):
    out = fgsm_generate(fixture_bundle, query_six, 6, epsilon=0.15)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.max(np.abs(out.astype(np.float64) - query_six)) <= 0.15 + 1e-6


def test_fgsm_linear_model_closed_form():
    rng = Rng(6)
    bundle, kernel = _linear_softmax_bundle(rng)
    x = rng.uniform_array((2, 2, 1)).astype(np.float32)
    y = 1
    logits = x.reshape(-1).astype(np.float64) @ kernel.astype(np.float64)
    e = np.exp(logits - logits.max())
    probs = e / e.sum()
    probs[y] -= 1.0
    grad = (kernel.astype(np.float64) @ probs).reshape(2, 2, 1)
    want = np.clip(x + 0.1 * np.sign(grad), 0.0, 1.0)
    got = fgsm_generate(bundle, x, y, epsilon=0.1, dtype=np.float64)
    assert np.allclose(got, want, atol=1e-7)


def test_fgsm_zero_gradient_pixels_unmoved():
    rng = Rng(8)
    bundle, kernel = _linear_softmax_bundle(rng)
    kernel = kernel.copy()
    kernel[2, :] = 0.0  # third input pixel cannot influence any logit
    bundle = bundle.with_weights({**bundle.weights, "logits/kernel": kernel})
    x = rng.uniform_array((2, 2, 1)).astype(np.float32)
    out = fgsm_generate(bundle, x, 0, epsilon=0.3)
    assert out.reshape(-1)[2] == x.reshape(-1)[2]


def test_fgsm_batch_matches_single(fixture_bundle, test_data):
    xs = test_data.images[:6]
    ys = test_data.labels[:6]
    batch = fgsm_batch(fixture_bundle, xs, ys, epsilon=0.15, dtype=np.float64)
    for i in range(6):
        single = fgsm_generate(fixture_bundle, xs[i], int(ys[i]), epsilon=0.15,
                               dtype=np.float64)
        assert np.array_equal(batch[i], single)


def test_fgsm_rejects_negative_epsilon(fixture_bundle, query_six):
    with pytest.raises(ValidationError):
        fgsm_generate(fixture_bundle, query_six, 6, epsilon=-0.1)
    with pytest.raises(ValidationError):
        fgsm_batch(fixture_bundle, query_six[None], [6], epsilon=-0.1)


# ---------------------------------------------------------------------------
# detector ROC


def _roc_oracle(benign, adv):
    # P(adversarial score < benign score) + 0.5 P(tie), by enumeration
    wins = ties = 0
    for b in benign:
        for a in adv:
            if a < b:
                wins += 1
            elif a == b:
                ties += 1
    return (wins + 0.5 * ties) / (len(benign) * len(adv))


def test_roc_perfect_separation():
    roc = detector_roc([0.9, 0.8, 0.7], [0.3, 0.2, 0.1])
    assert roc.auc == pytest.approx(1.0, abs=1e-12)


def test_roc_identical_lists():
    roc = detector_roc([0.5, 0.4, 0.3], [0.5, 0.4, 0.3])
    assert roc.auc == pytest.approx(0.5, abs=1e-9)


def test_roc_hand_case():
    benign = [0.9, 0.8]
    adv = [0.85, 0.1]
    roc = detector_roc(benign, adv)
    assert roc.auc == pytest.approx(0.75, abs=1e-12)
    assert roc.auc == pytest.approx(_roc_oracle(benign, adv), abs=1e-12)


def test_roc_matches_enumeration_oracle_random():
    rng = Rng(31)
    benign = rng.uniform_array(40)
    adv = rng.uniform_array(35) * 0.8
    roc = detector_roc(benign, adv)
    assert roc.auc == pytest.approx(_roc_oracle(benign, adv), abs=1e-12)


def test_roc_points_monotone_and_anchored():
    rng = Rng(32)
    roc = detector_roc(rng.uniform_array(20), rng.uniform_array(25))
    pts = roc.points
    assert np.all(np.diff(pts[:, 0]) >= 0)
    assert np.all(np.diff(pts[:, 1]) >= 0)
    assert tuple(pts[0]) == (0.0, 0.0)
    assert tuple(pts[-1]) == (1.0, 1.0)
    assert 0.0 <= roc.auc <= 1.0


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_roc_invariant_under_monotone_transform(seed):
    rng = Rng(seed)
    benign = rng.uniform_array(15) * 2 - 1
    adv = rng.uniform_array(15) * 2 - 1
    base = detector_roc(benign, adv).auc
    warped = detector_roc(np.tanh(3 * benign), np.tanh(3 * adv)).auc
    assert warped == pytest.approx(base, abs=1e-12)


def test_roc_rejects_empty_lists():
    with pytest.raises(ValidationError):
        detector_roc([], [0.1])
    with pytest.raises(ValidationError):
        detector_roc([0.1], [])


# ---------------------------------------------------------------------------
# score distributions


@pytest.fixture(scope="module")
def all_class_prototypes(fixture_split, train_data):
    from protoshot.data import select_support_set

    fe, head = fixture_split
    protos = {}
    for c in range(10):
        s = select_support_set(train_data, c, 20, seed=11)
        protos[c] = compute_prototype(fe, head, s)
    return protos


def test_score_distributions_shapes_and_determinism(
    fixture_bundle, all_class_prototypes, test_data, fixture_split
):
    fe, head = fixture_split
    b1, a1 = score_distributions(
        fixture_bundle, all_class_prototypes, test_data, n=25, seed=9,
        epsilon=0.15, feature_extractor=fe, class_head=head,
    )
    b2, a2 = score_distributions(
        fixture_bundle, all_class_prototypes, test_data, n=25, seed=9,
        epsilon=0.15, feature_extractor=fe, class_head=head,
    )
    assert b1.shape == (25,) and a1.shape == (25,)
    assert np.array_equal(b1, b2) and np.array_equal(a1, a2)


def test_score_distributions_zero_epsilon_identical(
    fixture_bundle, all_class_prototypes, test_data, fixture_split
):
    fe, head = fixture_split
    b, a = score_distributions(
        fixture_bundle, all_class_prototypes, test_data, n=15, seed=2,
        epsilon=0.0, feature_extractor=fe, class_head=head,
    )
    assert np.array_equal(b, a)


def test_score_distributions_validates_inputs(
    fixture_bundle, all_class_prototypes, test_data, fixture_split
):
    fe, head = fixture_split
    missing = {c: p for c, p in all_class_prototypes.items() if c != 4}
    with pytest.raises(ValidationError):
        score_distributions(fixture_bundle, missing, test_data, n=5, seed=1,
                            feature_extractor=fe, class_head=head)
    with pytest.raises(ValidationError):
        score_distributions(fixture_bundle, all_class_prototypes, test_data,
                            n=len(test_data) + 1, seed=1,
                            feature_extractor=fe, class_head=head)
