"""Loss tests frozen against hand-evaluated constants."""

import numpy as np
import pytest

import mtvl.tensor as T
from mtvl import losses
from mtvl.encoders import ModelState, ImageEncoderConfig, TextEncoderConfig


def scalar(x):
    return float(x.data)


def tiny_state():
    return ModelState(
        image_config=ImageEncoderConfig(),
        text_config=TextEncoderConfig(vocab_size=8),
        n_classes=3, n_attributes=4, seed=0, dtype=np.float64)


# ------------------------------------------------------------ loss_class

def test_class_perfect_prediction_near_zero():
    p = T.Tensor(np.array([[1.0, 0.0, 0.0]]))
    out = scalar(losses.loss_class(p, np.array([[1.0, 0.0, 0.0]])))
    assert out == pytest.approx(0.0, abs=1e-10)


def test_class_uniform_four_way():
    p = T.Tensor(np.full((1, 4), 0.25))
    out = scalar(losses.loss_class(p, np.eye(4)[[1]]))
    assert out == pytest.approx(np.log(4), rel=1e-12)


def test_class_point_seven_five():
    p = T.Tensor(np.array([[0.75, 0.25]]))
    out = scalar(losses.loss_class(p, np.array([[1.0, 0.0]])))
    assert out == pytest.approx(-np.log(0.75), rel=1e-12)


def test_class_batch_mean():
    p = T.Tensor(np.array([[0.75, 0.25], [0.5, 0.5]]))
    tgt = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = scalar(losses.loss_class(p, tgt))
    assert out == pytest.approx((-np.log(0.75) - np.log(0.5)) / 2, rel=1e-12)


# ------------------------------------------------------------ loss_attr

def test_attr_matching_labels_zero():
    p = T.Tensor(np.array([1.0, 0.0, 1.0]))
    out = scalar(losses.loss_attr(p, np.array([1, 0, 1])))
    assert out == pytest.approx(0.0, abs=1e-10)


def test_attr_all_half():
    p = T.Tensor(np.full(5, 0.5))
    out = scalar(losses.loss_attr(p, np.array([1, 0, 1, 0, 1])))
    assert out == pytest.approx(np.log(2), rel=1e-12)


def test_attr_hand_value():
    p = T.Tensor(np.array([0.9, 0.2]))
    out = scalar(losses.loss_attr(p, np.array([1, 0])))
    expected = (-np.log(0.9) - np.log(0.8)) / 2
    assert out == pytest.approx(expected, rel=1e-12)
    assert out == pytest.approx(0.1643, abs=5e-5)


def test_attr_seen_mask_drops_columns():
    p = T.Tensor(np.array([0.9, 0.0001]))  # second column is terrible
    full = scalar(losses.loss_attr(p, np.array([1, 1])))
    masked = scalar(losses.loss_attr(p, np.array([1, 1]), seen_mask=np.array([1, 0])))
    assert masked == pytest.approx(-np.log(0.9), rel=1e-12)
    assert masked < full


def test_attr_seen_mask_all_zero_rejected():
    p = T.Tensor(np.array([0.5]))
    with pytest.raises(ValueError):
        losses.loss_attr(p, np.array([1]), seen_mask=np.array([0]))


# ------------------------------------------------------------ loss_loc

def test_loc_perfect_on_present():
    p = T.Tensor(np.array([[1.0], [0.0]]))          # [N=2, A=1]
    masks = np.array([[1], [0]])
    out = scalar(losses.loss_loc(p, np.array([1]), masks))
    assert out == pytest.approx(0.0, abs=1e-10)


def test_loc_absent_attributes_ignored():
    rng = np.random.default_rng(0)
    p = T.Tensor(rng.uniform(0.01, 0.99, size=(4, 3)))
    masks = rng.integers(0, 2, size=(4, 3))
    alpha = np.array([0, 0, 0])
    assert scalar(losses.loss_loc(p, alpha, masks)) == 0.0


def test_loc_hand_value_with_verbatim_normalizer():
    # N=2, one present attribute, uniform probabilities -> ln 2 / |A|
    p = T.Tensor(np.full((2, 1), 0.5))
    out = scalar(losses.loss_loc(p, np.array([1]), np.array([[1], [0]])))
    assert out == pytest.approx(np.log(2), rel=1e-12)

    # widen |A| with absent attributes: outer normalizer stays |A|
    p3 = T.Tensor(np.full((2, 3), 0.5))
    alpha = np.array([1, 0, 0])
    masks = np.array([[1, 0, 0], [0, 0, 0]])
    out3 = scalar(losses.loss_loc(p3, alpha, masks))
    assert out3 == pytest.approx(np.log(2) / 3, rel=1e-12)


def test_loc_normalize_by_present_flag():
    p3 = T.Tensor(np.full((2, 3), 0.5))
    alpha = np.array([1, 0, 0])
    masks = np.array([[1, 0, 0], [0, 0, 0]])
    out = scalar(losses.loss_loc(p3, alpha, masks, normalize_by_present=True))
    assert out == pytest.approx(np.log(2), rel=1e-12)


def test_loc_invariant_to_absent_columns():
    rng = np.random.default_rng(1)
    base = rng.uniform(0.01, 0.99, size=(4, 2))
    alpha = np.array([1, 0])
    masks = np.array([[1, 0], [0, 0], [1, 0], [0, 0]])
    a = scalar(losses.loss_loc(T.Tensor(base.copy()), alpha, masks))
    noisy = base.copy()
    noisy[:, 1] = rng.uniform(0.01, 0.99, size=4)
    b = scalar(losses.loss_loc(T.Tensor(noisy), alpha, masks))
    assert a == b


# ------------------------------------------------------------ head losses

def test_proj_zero_head_gives_log_c():
    state = tiny_state()
    state.params["head.class.w"].data[:] = 0.0
    state.params["head.class.b"].data[:] = 0.0
    emb = T.Tensor(np.ones((1, state.params["head.class.w"].shape[0])))
    out = scalar(losses.loss_proj(emb, state, np.eye(3)[[0]]))
    assert out == pytest.approx(np.log(3), rel=1e-10)


def test_proj_gradient_reaches_embedding_and_head():
    state = tiny_state()
    d = state.params["head.class.w"].shape[0]
    emb = T.Tensor(np.random.default_rng(0).standard_normal((1, d)),
                   requires_grad=True)
    out = losses.loss_proj(emb, state, np.eye(3)[[1]])
    T.backward(out)
    assert emb.grad is not None and np.abs(emb.grad).max() > 0
    assert np.abs(state.params["head.class.w"].grad).max() > 0


def test_attr_proj_zero_head_gives_log2():
    state = tiny_state()
    state.params["head.attr.w"].data[:] = 0.0
    state.params["head.attr.b"].data[:] = 0.0
    emb = T.Tensor(np.ones((1, state.params["head.attr.w"].shape[0])))
    out = scalar(losses.loss_attr_proj(emb, state, np.ones((1, 4))))
    assert out == pytest.approx(np.log(2), rel=1e-10)


# ------------------------------------------------------------ hybrid

def comps(vals):
    return {k: T.Tensor(np.asarray(v, dtype=np.float64))
            for k, v in vals.items()}


def test_hybrid_unit_weights():
    c = comps({"class": 1.0, "proj": 2.0, "attr": 3.0, "loc": 4.0})
    out = scalar(losses.hybrid_loss(c, losses.LossWeights()))
    assert out == pytest.approx(10.0, rel=1e-12)


def test_hybrid_attr_weight_ten():
    c = comps({"class": 1.0, "proj": 1.0, "attr": 1.0, "loc": 1.0})
    w = losses.LossWeights(lambda_attr=10.0)
    assert scalar(losses.hybrid_loss(c, w)) == pytest.approx(13.0, rel=1e-12)


def test_hybrid_all_zero_weights():
    c = comps({"class": 1.0, "proj": 1.0, "attr": 1.0, "loc": 1.0})
    w = losses.LossWeights(0, 0, 0, 0, 0)
    assert scalar(losses.hybrid_loss(c, w)) == 0.0


def test_hybrid_linear_in_each_weight():
    c = comps({"class": 0.7, "proj": 1.3, "attr": 0.2, "loc": 2.0})
    base = scalar(losses.hybrid_loss(c, losses.LossWeights()))
    bumped = scalar(losses.hybrid_loss(c, losses.LossWeights(lambda_loc=3.0)))
    assert bumped - base == pytest.approx(2.0 * 2.0, rel=1e-12)


def test_hybrid_nonfinite_component_named():
    c = comps({"class": 1.0, "loc": np.nan})
    with pytest.raises(losses.NonFiniteLoss) as ei:
        losses.hybrid_loss(c, losses.LossWeights())
    assert "loc" in str(ei.value)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        losses.LossWeights(lambda_class=-0.1)


def test_loc_weight_zero_kills_patch_head_gradient():
    """With lambda_loc = 0 the patch projection receives exactly zero grad."""
    state = tiny_state()
    rng = np.random.default_rng(2)
    d_img = state.params["proj.h_img.w"].shape[0]
    n = state.image_config.n_patches
    reps = T.Tensor(rng.standard_normal((1, n + 1, d_img)))
    from mtvl.encoders import embed_patches, embed_image
    from mtvl import alignment
    e_patches = embed_patches(state, reps)
    e_img = embed_image(state, reps)
    pos = T.Tensor(rng.standard_normal((4, e_img.shape[-1])))
    temp = T.Tensor(np.array(10.0))
    p_patch = alignment.patch_attribute_probabilities(e_patches, pos, temp)
    p_attr = alignment.attribute_probabilities_pos_only(e_img, pos, temp)
    c = {
        "attr": losses.loss_attr(p_attr, np.ones((1, 4))),
        "loc": losses.loss_loc(p_patch, np.ones((1, 4)),
                               np.ones((1, n, 4))),
    }
    total = losses.hybrid_loss(c, losses.LossWeights(lambda_loc=0.0))
    T.backward(total)
    h_grad = state.params["proj.h_img.w"].grad
    assert h_grad is None or np.all(h_grad == 0.0)
