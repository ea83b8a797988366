"""Evaluation metrics: top-1 accuracy, AP-based detection and localization
mAPs, the PCA/elbow projection and the zero-shot localization baseline.

AP variant: information-retrieval AP (mean of precision at each positive
rank), no interpolation, ties broken by ascending original index.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np


class UndefinedMetric(ValueError):
    pass


def top1_accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise UndefinedMetric("top1_accuracy on empty input")
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return float((predictions == labels).mean())


def average_precision(scores, labels):
    """AP of a binary ranking; requires at least one positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("average_precision with zero positives")
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranked = labels[order].astype(bool)
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(scores) + 1)
    return float((hits[ranked] / ranks[ranked]).sum() / n_pos)


def detection_map(attr_probs, alpha, attr_subset=None):
    """Mean AP over attributes with >=1 positive image.

    attr_probs, alpha: [M, |A|]. Returns (map, per_attribute list with NaN
    where undefined).
    """
    attr_probs = np.asarray(attr_probs, dtype=np.float64)
    alpha = np.asarray(alpha)
    n_attr = attr_probs.shape[1]
    indices = range(n_attr) if attr_subset is None else attr_subset
    per_attr = np.full(n_attr, np.nan)
    aps = []
    for a in indices:
        if alpha[:, a].sum() == 0:
            continue
        ap = average_precision(attr_probs[:, a], alpha[:, a])
        per_attr[a] = ap
        aps.append(ap)
    if not aps:
        raise UndefinedMetric("no attribute has a positive label")
    return float(np.mean(aps)), per_attr


def localization_map(patch_probs, alpha, masks, attr_subset=None):
    """Mean AP over (image, present-attribute) pairs with >=1 positive patch.

    patch_probs, masks: [M, N, |A|]; alpha: [M, |A|].
    """
    patch_probs = np.asarray(patch_probs, dtype=np.float64)
    alpha = np.asarray(alpha)
    masks = np.asarray(masks)
    subset = set(range(alpha.shape[1])) if attr_subset is None else set(attr_subset)
    aps = []
    for i in range(alpha.shape[0]):
        for a in np.flatnonzero(alpha[i]):
            if a not in subset or masks[i, :, a].sum() == 0:
                continue
            aps.append(average_precision(patch_probs[i, :, a], masks[i, :, a]))
    if not aps:
        raise UndefinedMetric("no (image, present-attribute) pair has a positive patch")
    return float(np.mean(aps))


# ------------------------------------------------------------------- PCA

@dataclass
class PcaProjector:
    mean: np.ndarray
    eigenvectors: np.ndarray  # [d, k] orthonormal columns
    eigenvalues: np.ndarray   # all d, descending
    k: int

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.eigenvectors


def elbow_select(eigenvalues):
    """Index (1-based) of maximal perpendicular distance to the chord from
    (1, first) to (d, last); ties and all-equal spectra give the smallest k."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if len(lam) < 3:
        raise ValueError("elbow_select needs at least 3 eigenvalues")
    d = len(lam)
    if np.allclose(lam, lam[0]):
        return 1
    dx, dy = d - 1.0, lam[-1] - lam[0]
    i = np.arange(d, dtype=np.float64)
    cross = np.abs(i * dy - (lam - lam[0]) * dx)
    dist = cross / np.hypot(dx, dy)
    return int(np.argmax(dist)) + 1


def pca_fit(samples, k=None):
    """Mean-centered covariance eigendecomposition; k from the elbow rule
    unless overridden; k is clamped to the covariance rank with a warning."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("pca_fit needs at least 2 samples")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    if k is None:
        k = elbow_select(vals) if len(vals) >= 3 else 1
    tol = max(vals[0], 0.0) * 1e-10 + 1e-12
    rank = int((vals > tol).sum())
    if rank < k:
        warnings.warn(f"covariance rank {rank} < requested k {k}; reducing k")
        k = max(rank, 1)
    return PcaProjector(mean=mean, eigenvectors=vecs[:, :k], eigenvalues=vals, k=k)


def zero_shot_localization_baseline(patch_reps, attr_embs, patch_projector, text_projector,
                                    scale=1.0):
    """Patch/attribute match probabilities for unaligned towers.

    Both sides are PCA-projected to a shared k-dimensional space; cosine
    similarities there are sigmoid-activated. patch_reps: [..., d_image],
    attr_embs: [|A|, d_model] -> probabilities [..., |A|].
    """
    if patch_projector.k != text_projector.k:
        raise ValueError(
            f"projector dimensions differ: {patch_projector.k} vs {text_projector.k}")
    p = patch_projector.project(patch_reps)
    t = text_projector.project(attr_embs)
    pn = p / np.maximum(np.linalg.norm(p, axis=-1, keepdims=True), 1e-12)
    tn = t / np.maximum(np.linalg.norm(t, axis=-1, keepdims=True), 1e-12)
    cos = pn @ tn.T
    return 1.0 / (1.0 + np.exp(-scale * cos))


# ------------------------------------------------------------------- report

@dataclass
class EvalReport:
    top1: float
    detection_map: float
    localization_map: float
    per_attribute_ap: list = field(default_factory=list)
    seen_unseen: dict | None = None

    def to_json(self, path=None):
        payload = json.dumps(asdict(self), indent=2, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(payload + "\n")
        return payload

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(**d)

    def to_text(self, path=None):
        lines = [
            f"top1={self.top1:.6f}",
            f"detection_map={self.detection_map:.6f}",
            f"localization_map={self.localization_map:.6f}",
        ]
        if self.seen_unseen:
            for key, val in self.seen_unseen.items():
                lines.append(f"{key}={val:.6f}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def per_attribute_csv(self, path, names=None, positives=None):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attribute_id", "name", "ap", "positives"])
            for a, ap in enumerate(self.per_attribute_ap):
                writer.writerow([
                    a,
                    names[a] if names else f"attr{a}",
                    "" if np.isnan(ap) else f"{ap:.6f}",
                    positives[a] if positives is not None else "",
                ])
