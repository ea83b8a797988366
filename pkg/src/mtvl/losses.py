"""The four task losses and their weighted hybrid combination.

Every batch loss is a mean over samples in fixed order; probabilities are
floored at 1e-12 before any log.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

PROB_FLOOR = 1e-12


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class LossWeights:
    lambda_class: float = 1.0
    lambda_proj: float = 1.0
    lambda_attr: float = 1.0
    lambda_loc: float = 1.0
    lambda_alpha: float = 0.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


def _as_array(x, like=None):
    return np.asarray(x, dtype=np.float64 if like is None else like)


def _batched(t):
    return t if len(t.shape) > 1 else T.reshape(t, (1,) + t.shape)


def _log(p):
    return T.log(T.clamp_min(p, PROB_FLOOR))


def loss_class(class_probs, targets):
    """Cross-entropy of simplex rows against one-hot targets (batch mean)."""
    p = _batched(class_probs)
    tgt = np.atleast_2d(np.asarray(targets, dtype=p.dtype))
    ce = T.sum_(T.mul(T.Tensor(-tgt), _log(p)), axis=-1)
    return T.mean(ce)


def _binary_ce(p, labels):
    labels = np.asarray(labels, dtype=p.dtype)
    pos = T.mul(T.Tensor(-labels), _log(p))
    neg = T.mul(T.Tensor(-(1.0 - labels)), _log(T.sub(T.Tensor(np.ones_like(labels)), p)))
    return T.add(pos, neg)


def loss_attr(attr_probs, labels, seen_mask=None):
    """Mean binary CE over attributes (and the batch).

    With a seen mask, unseen attribute columns are dropped from both the
    sum and the normalizer.
    """
    p = _batched(attr_probs)
    labels = np.atleast_2d(np.asarray(labels, dtype=p.dtype))
    ce = _binary_ce(p, labels)
    if seen_mask is not None:
        m = np.asarray(seen_mask, dtype=p.dtype)
        n_seen = float(m.sum())
        if n_seen == 0:
            raise ValueError("seen mask excludes every attribute")
        ce = T.mul(ce, T.Tensor(m))
        per_sample = T.scalar_mul(T.sum_(ce, axis=-1), 1.0 / n_seen)
    else:
        per_sample = T.mean(ce, axis=-1)
    return T.mean(per_sample)


def loss_loc(patch_probs, alpha, masks, seen_mask=None, normalize_by_present=False):
    """Patch-level BCE over present attributes.

    patch_probs: [B, N, |A|]; alpha: [B, |A|]; masks: [B, N, |A|].
    The outer normalizer is |A| as printed in the formula;
    normalize_by_present=True switches to the count of present attributes.
    """
    p = patch_probs if len(patch_probs.shape) == 3 else T.reshape(
        patch_probs, (1,) + patch_probs.shape)
    alpha = np.atleast_2d(np.asarray(alpha, dtype=p.dtype))
    masks = np.asarray(masks, dtype=p.dtype)
    if masks.ndim == 2:
        masks = masks[None]
    n_patches = p.shape[1]
    n_attr = p.shape[2]
    ce = _binary_ce(p, masks)  # [B, N, A]
    weight = alpha.copy()
    if seen_mask is not None:
        weight = weight * np.asarray(seen_mask, dtype=p.dtype)
    per_attr = T.mean(ce, axis=1)  # [B, A]
    weighted = T.mul(per_attr, T.Tensor(weight))
    if normalize_by_present:
        denom = np.maximum(weight.sum(axis=-1, keepdims=True), 1.0)
        per_sample = T.sum_(T.div(weighted, T.Tensor(denom)), axis=-1)
    else:
        per_sample = T.scalar_mul(T.sum_(weighted, axis=-1), 1.0 / n_attr)
    return T.mean(per_sample)


def loss_proj(image_emb, state, targets):
    """CE of the classification projection head applied to the image embedding."""
    logits = T.matmul(_batched(image_emb), state.params["head.class.w"]) + state.params["head.class.b"]
    return loss_class(T.softmax(logits, axis=-1), targets)


def loss_attr_proj(image_emb, state, labels, seen_mask=None):
    """Multi-label BCE of the attribute projection head (the discarded extra loss)."""
    logits = T.matmul(_batched(image_emb), state.params["head.attr.w"]) + state.params["head.attr.b"]
    return loss_attr(T.sigmoid(logits), labels, seen_mask=seen_mask)


def hybrid_loss(components, weights):
    """Weighted sum of named component losses.

    components: dict with keys among class/proj/attr/loc/alpha mapping to
    scalar Tensors; missing keys contribute nothing. A non-finite component
    aborts with its name.
    """
    lam = {
        "class": weights.lambda_class,
        "proj": weights.lambda_proj,
        "attr": weights.lambda_attr,
        "loc": weights.lambda_loc,
        "alpha": weights.lambda_alpha,
    }
    total = None
    for name, comp in components.items():
        if not np.isfinite(comp.data):
            raise NonFiniteLoss(f"loss component '{name}' is non-finite")
        term = T.scalar_mul(comp, lam[name])
        total = term if total is None else T.add(total, term)
    if total is None:
        raise ValueError("hybrid_loss needs at least one component")
    return total
