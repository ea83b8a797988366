"""Cosine-similarity scoring and the three probability heads.

All heads share one learnable temperature: a log-scale parameter whose
effective value exp(log_scale) is clamped at 100, with zero gradient while
clamped.
"""

import numpy as np

from . import tensor as T

TEMPERATURE_CLAMP = 100.0
TEMPERATURE_INIT = float(np.log(1.0 / 0.07))


def effective_temperature(log_scale):
    """min(exp(log_scale), 100) as a graph node (stop-gradient at the cap)."""
    return T.clamp_max(T.exp(log_scale), TEMPERATURE_CLAMP)


def cosine_similarity(a, b):
    """Cosine of two d-vectors; norms floored at 1e-12, never NaN."""
    num = T.sum_(T.mul(a, b))
    return T.div(num, T.mul(T.l2norm(a, keepdims=False), T.l2norm(b, keepdims=False)))


def cosine_matrix(x, y):
    """Row-wise cosine table: x [..., m, d], y [n, d] -> [..., m, n]."""
    xn = T.div(x, T.l2norm(x, axis=-1, keepdims=True))
    yn = T.div(y, T.l2norm(y, axis=-1, keepdims=True))
    return T.matmul(xn, T.transpose(yn))


def class_probabilities(image_emb, class_embs, temperature):
    """Softmax over temperature-scaled image/class cosines: [..., |C|] simplex."""
    scores = cosine_matrix(image_emb, class_embs)
    return T.softmax(T.mul(scores, temperature), axis=-1)


def predict_class(class_probs):
    """Argmax per row; ties break to the lowest index."""
    probs = class_probs.data if isinstance(class_probs, T.Tensor) else np.asarray(class_probs)
    return np.argmax(probs, axis=-1)


def attribute_probabilities(image_emb, pos_embs, neg_embs, temperature):
    """Positive coordinate of the 2-way softmax over each pos/neg score pair.

    Algebraically sigmoid(scale * (s_pos - s_neg)), which is the stable form.
    """
    s_pos = cosine_matrix(image_emb, pos_embs)
    s_neg = cosine_matrix(image_emb, neg_embs)
    return T.sigmoid(T.mul(T.sub(s_pos, s_neg), temperature))


def attribute_probabilities_pos_only(image_emb, pos_embs, temperature):
    """Positive-prompt-only variant: sigmoid of the scaled positive score."""
    return T.sigmoid(T.mul(cosine_matrix(image_emb, pos_embs), temperature))


def patch_attribute_probabilities(patch_embs, pos_embs, temperature):
    """sigmoid(scale * cos(patch, attribute)): [..., N, |A|] in (0,1)."""
    return T.sigmoid(T.mul(cosine_matrix(patch_embs, pos_embs), temperature))
