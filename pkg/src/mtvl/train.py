"""Training loop, freeze policies and evaluation protocol."""

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import alignment, losses, metrics, optim
from . import tensor as T
from .checkpoint import save_state
from .data import augment as augment_sample
from .data import corrupt_masks, split_seen_unseen
from .encoders import (ImageEncoderConfig, ModelState, TextEncoderConfig,
                       Tokenizer, embed_image, embed_patches, encode_images,
                       encode_texts)

LOG_SCALE_CAP = float(np.log(alignment.TEMPERATURE_CLAMP))


@dataclass
class FreezePolicy:
    image_backbone: str = "full"        # full | last_layer_only
    text_backbone: str = "full"

    def __post_init__(self):
        for v in (self.image_backbone, self.text_backbone):
            if v not in ("full", "last_layer_only"):
                raise ValueError(f"unknown freeze policy value '{v}'")


def apply_freeze(policy, state):
    """Exact set of trainable parameter names under a policy.

    last_layer_only keeps the final transformer block and final norm of a
    tower; projections, heads and the temperature train under every policy.
    """
    trainable = set()
    for tower, mode, depth in (
        ("image", policy.image_backbone, state.image_config.depth),
        ("text", policy.text_backbone, state.text_config.depth),
    ):
        for name in state.params:
            if not name.startswith(tower + "."):
                continue
            if mode == "full":
                trainable.add(name)
            elif name.startswith(f"{tower}.layers.{depth - 1}.") or \
                    name.startswith(f"{tower}.ln_f."):
                trainable.add(name)
    for name in state.params:
        if name.startswith(("proj.", "head.", "temperature.")):
            trainable.add(name)
    return trainable


@dataclass
class TrainConfig:
    epochs: int = 100
    accumulation_samples: int = 200
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-6
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    freeze: FreezePolicy = field(default_factory=FreezePolicy)
    seed: int = 0
    eval_every: int = 0                 # epochs between test-split evals; 0 = end only
    augment: bool = True
    prompt_mode: str = "pos_neg"        # pos_neg | pos_only
    seen_ratio: float = 1.0
    seen_split_seed: int = 0
    loc_source: str = "exact"           # exact | none | corrupted
    corrupt_dilation: int = 1
    corrupt_flip_rate: float = 0.05
    mask_loc_normalize_by_present: bool = False
    graph_mode: str = "batched"         # batched | per_sample
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    text_depth: int = 2
    d_text: int = 64
    max_length: int = 16

    def __post_init__(self):
        if self.accumulation_samples < 1:
            raise ValueError("accumulation_samples must be >= 1")
        if self.prompt_mode not in ("pos_neg", "pos_only"):
            raise ValueError(f"unknown prompt_mode '{self.prompt_mode}'")
        if self.loc_source not in ("exact", "none", "corrupted"):
            raise ValueError(f"unknown loc_source '{self.loc_source}'")
        if self.graph_mode not in ("batched", "per_sample"):
            raise ValueError(f"unknown graph_mode '{self.graph_mode}'")


def desk_config(**overrides):
    """Calibrated defaults that train in minutes on one core and reach the
    headline metrics on the default synthetic spec (paper-scale values are
    the dataclass defaults)."""
    cfg = TrainConfig(
        epochs=50, accumulation_samples=8, learning_rate=1e-3,
        weights=losses.LossWeights(lambda_attr=4.0, lambda_loc=2.0),
        image=ImageEncoderConfig(d_image=64, d_model=64),
        d_text=64)
    return replace(cfg, **overrides)


class PromptBank:
    """Tokenized class and attribute prompts for one dataset."""

    def __init__(self, dataset, max_length=16):
        corpus = dataset.prompt_corpus()
        self.tokenizer = Tokenizer(corpus)
        clashes = self.tokenizer.collisions(corpus)
        if clashes:
            raise ValueError(f"prompt corpus is not injective under tokenization: {clashes}")
        self.class_tokens = [
            self.tokenizer.encode(dataset.class_prompt(c))
            for c in range(len(dataset.class_names))]
        self.pos_tokens, self.neg_tokens = [], []
        for a in range(len(dataset.attribute_names)):
            pos, neg = dataset.attribute_prompts(a)
            self.pos_tokens.append(self.tokenizer.encode(pos))
            self.neg_tokens.append(self.tokenizer.encode(neg))
        self.max_length = max_length


def build_state(config, dataset, prompts=None):
    prompts = prompts or PromptBank(dataset, config.max_length)
    text_cfg = TextEncoderConfig(
        vocab_size=prompts.tokenizer.vocab_size,
        max_length=config.max_length,
        depth=config.text_depth,
        d_text=config.d_text,
        d_model=config.image.d_model,
        heads=config.image.heads,
    )
    state = ModelState(
        config.image, text_cfg,
        n_classes=len(dataset.class_names),
        n_attributes=len(dataset.attribute_names),
        seed=config.seed,
    )
    return state, prompts


def encode_prompts(state, prompts, need_neg=True):
    """One text-tower pass over every prompt; returns (class, pos, neg) embeddings."""
    n_c = len(prompts.class_tokens)
    n_a = len(prompts.pos_tokens)
    all_tokens = prompts.class_tokens + prompts.pos_tokens + (
        prompts.neg_tokens if need_neg else [])
    embs = encode_texts(state, all_tokens)
    class_embs = T.slice_(embs, slice(0, n_c))
    pos_embs = T.slice_(embs, slice(n_c, n_c + n_a))
    neg_embs = T.slice_(embs, slice(n_c + n_a, n_c + 2 * n_a)) if need_neg else None
    return class_embs, pos_embs, neg_embs


def _one_hot(class_ids, n_classes):
    out = np.zeros((len(class_ids), n_classes), dtype=np.float32)
    out[np.arange(len(class_ids)), class_ids] = 1.0
    return out


def _loc_masks(samples, config, spec, step_seed):
    masks = np.stack([s.masks for s in samples])
    if config.loc_source == "corrupted":
        masks = np.stack([
            corrupt_masks(m, spec, dilation=config.corrupt_dilation,
                          erosion=0, flip_rate=config.corrupt_flip_rate,
                          seed=step_seed + i)
            for i, m in enumerate(masks)])
    return masks


def batch_components(state, prompts, samples, config, seen_mask=None, step_seed=0, spec=None):
    """Forward every head on a sample batch and return the component losses."""
    pixels = np.stack([s.pixels for s in samples])
    class_ids = [s.class_id for s in samples]
    alpha = np.stack([s.alpha for s in samples])
    targets = _one_hot(class_ids, state.n_classes)

    need_neg = config.prompt_mode == "pos_neg"
    class_embs, pos_embs, neg_embs = encode_prompts(state, prompts, need_neg)
    reps = encode_images(state, pixels)
    e_img = embed_image(state, reps)
    e_patches = embed_patches(state, reps)
    temp = alignment.effective_temperature(state.params["temperature.log_scale"])

    p_class = alignment.class_probabilities(e_img, class_embs, temp)
    if need_neg:
        p_attr = alignment.attribute_probabilities(e_img, pos_embs, neg_embs, temp)
    else:
        p_attr = alignment.attribute_probabilities_pos_only(e_img, pos_embs, temp)
    p_patch = alignment.patch_attribute_probabilities(e_patches, pos_embs, temp)

    components = {
        "class": losses.loss_class(p_class, targets),
        "proj": losses.loss_proj(e_img, state, targets),
        "attr": losses.loss_attr(p_attr, alpha, seen_mask=seen_mask),
    }
    if config.loc_source == "none":
        components["loc"] = T.Tensor(np.zeros((), dtype=state.dtype))
    else:
        masks = _loc_masks(samples, config, spec, step_seed)
        components["loc"] = losses.loss_loc(
            p_patch, alpha, masks, seen_mask=seen_mask,
            normalize_by_present=config.mask_loc_normalize_by_present)
    if config.weights.lambda_alpha > 0:
        components["alpha"] = losses.loss_attr_proj(e_img, state, alpha, seen_mask=seen_mask)
    return components, temp


def sample_loss_fn(state, prompts, sample, config, seen_mask=None, step_seed=0, spec=None):
    """Closure building one sample's full hybrid loss (per-sample graph mode)."""

    def fn():
        components, _ = batch_components(
            state, prompts, [sample], config, seen_mask=seen_mask,
            step_seed=step_seed, spec=spec)
        return losses.hybrid_loss(components, config.weights)

    return fn


LOG_FIELDS = ["step", "loss_total", "loss_class", "loss_proj", "loss_attr",
              "loss_loc", "loss_alpha", "temperature"]


def write_train_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for row in rows:
            writer.writerow([row["step"]] + [f"{row[k]:.9g}" for k in LOG_FIELDS[1:]])


def train(config, dataset, out_dir=None, log_hook=None, eval_hook=None):
    """Train per the experiment protocol; returns (state, log rows, reports).

    Deterministic per seed: identical config + seed gives bit-identical logs.
    On a non-finite loss the last-good checkpoint is kept and NonFiniteLoss
    propagates.
    """
    spec = dataset.spec
    state, prompts = build_state(config, dataset)
    trainable = apply_freeze(config.freeze, state)
    frozen = set(state.params) - trainable
    for name in frozen:
        # frozen params need no gradient storage
        state.params[name].requires_grad = False
    adam = optim.AdamState(
        learning_rate=config.learning_rate, beta1=config.beta1,
        beta2=config.beta2, epsilon=config.epsilon)

    seen_mask = None
    seen_idx = unseen_idx = None
    if config.seen_ratio < 1.0:
        seen_idx, unseen_idx = split_seen_unseen(
            state.n_attributes, config.seen_ratio, config.seen_split_seed)
        seen_mask = np.zeros(state.n_attributes, dtype=np.float32)
        seen_mask[seen_idx] = 1.0

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))
    rows = []
    reports = []
    step = 0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    best_top1 = -1.0

    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset.train))
        for start in range(0, len(order), config.accumulation_samples):
            chunk = order[start:start + config.accumulation_samples]
            samples = [dataset.train[i] for i in chunk]
            if config.augment:
                samples = [
                    augment_sample(s, spec, seed=int(np.random.SeedSequence(
                        [config.seed, epoch, int(i)]).generate_state(1)[0]))
                    for s, i in zip(samples, chunk)]
            step_seed = int(np.random.SeedSequence([config.seed, 0xC0, step]).generate_state(1)[0])

            try:
                if config.graph_mode == "batched":
                    components, temp = batch_components(
                        state, prompts, samples, config,
                        seen_mask=seen_mask, step_seed=step_seed, spec=spec)
                    total = losses.hybrid_loss(components, config.weights)
                    T.backward(total)
                    comp_vals = {k: float(v.data) for k, v in components.items()}
                    total_val = float(total.data)
                    temp_val = float(np.asarray(temp.data).reshape(-1)[0])
                else:
                    fns = [
                        sample_loss_fn(state, prompts, s, config, seen_mask=seen_mask,
                                       step_seed=step_seed, spec=spec)
                        for s in samples]
                    values = optim.accumulate_gradients(fns, state.params)
                    total_val = float(np.mean(values))
                    comp_vals = {}
                    temp_val = float(np.minimum(
                        np.exp(state.params["temperature.log_scale"].data[0]),
                        alignment.TEMPERATURE_CLAMP))
            except losses.NonFiniteLoss:
                if out_dir:
                    save_state(os.path.join(out_dir, "last.mtvl"), state, adam)
                raise

            T.ensure_grads(state.params[n] for n in trainable)
            optim.adam_step(adam, state.params, frozen=frozen)
            ls = state.params["temperature.log_scale"]
            ls.data = np.minimum(ls.data, LOG_SCALE_CAP)

            step += 1
            row = {
                "step": step,
                "loss_total": total_val,
                "loss_class": comp_vals.get("class", 0.0),
                "loss_proj": comp_vals.get("proj", 0.0),
                "loss_attr": comp_vals.get("attr", 0.0),
                "loss_loc": comp_vals.get("loc", 0.0),
                "loss_alpha": comp_vals.get("alpha", 0.0),
                "temperature": temp_val,
            }
            rows.append(row)
            if log_hook:
                log_hook(row)

        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = evaluate(state, dataset, split="test", prompts=prompts,
                              config=config, seen_idx=seen_idx, unseen_idx=unseen_idx)
            reports.append((epoch + 1, report))
            if eval_hook:
                eval_hook(epoch + 1, report)
            if out_dir:
                save_state(os.path.join(out_dir, "last.mtvl"), state, adam)
                if report.top1 > best_top1:
                    best_top1 = report.top1
                    save_state(os.path.join(out_dir, "best.mtvl"), state, adam)

    if out_dir:
        save_state(os.path.join(out_dir, "last.mtvl"), state, adam)
        write_train_log(os.path.join(out_dir, "train_log.csv"), rows)
    return state, rows, reports


def evaluate(state, dataset, split="test", prompts=None, config=None,
             seen_idx=None, unseen_idx=None, batch=64, zero_shot_pca=False):
    """Full evaluation on one split; never mutates the model."""
    if prompts is None:
        prompts = PromptBank(dataset, state.text_config.max_length)
    if config is None:
        config = TrainConfig(image=state.image_config)
    samples = dataset.test if split == "test" else dataset.train
    n_attr = state.n_attributes

    with T.no_grad():
        class_embs, pos_embs, neg_embs = encode_prompts(
            state, prompts, need_neg=config.prompt_mode == "pos_neg")
        temp = alignment.effective_temperature(state.params["temperature.log_scale"])

        preds, attr_probs, patch_probs, patch_reps = [], [], [], []
        for start in range(0, len(samples), batch):
            chunk = samples[start:start + batch]
            pixels = np.stack([s.pixels for s in chunk])
            reps = encode_images(state, pixels)
            e_img = embed_image(state, reps)
            p_class = alignment.class_probabilities(e_img, class_embs, temp)
            preds.append(alignment.predict_class(p_class))
            if config.prompt_mode == "pos_neg":
                p_attr = alignment.attribute_probabilities(e_img, pos_embs, neg_embs, temp)
            else:
                p_attr = alignment.attribute_probabilities_pos_only(e_img, pos_embs, temp)
            attr_probs.append(p_attr.data)
            if zero_shot_pca:
                patch_reps.append(T.slice_(reps, (slice(None), slice(1, None))).data)
            else:
                e_patches = embed_patches(state, reps)
                patch_probs.append(alignment.patch_attribute_probabilities(
                    e_patches, pos_embs, temp).data)

        if zero_shot_pca:
            all_reps = np.concatenate(patch_reps)          # [M, N, d_image]
            flat = all_reps.reshape(-1, all_reps.shape[-1])
            k_img = metrics.elbow_select(metrics.pca_fit(flat).eigenvalues)
            k_txt = metrics.elbow_select(metrics.pca_fit(pos_embs.data).eigenvalues)
            k = min(k_img, k_txt)
            proj_img = metrics.pca_fit(flat, k=k)
            proj_txt = metrics.pca_fit(pos_embs.data, k=k)
            pp = metrics.zero_shot_localization_baseline(
                all_reps, pos_embs.data, proj_img, proj_txt)
            patch_probs = [pp]

    preds = np.concatenate(preds)
    labels = np.array([s.class_id for s in samples])
    alpha = np.stack([s.alpha for s in samples])
    masks = np.stack([s.masks for s in samples])
    attr_probs = np.concatenate(attr_probs)
    patch_probs = np.concatenate(patch_probs)

    det_map, per_attr = metrics.detection_map(attr_probs, alpha)
    loc_map = metrics.localization_map(patch_probs, alpha, masks)
    seen_unseen = None
    if seen_idx is not None and unseen_idx is not None and len(unseen_idx):
        seen_det, _ = metrics.detection_map(attr_probs, alpha, attr_subset=seen_idx)
        unseen_det, _ = metrics.detection_map(attr_probs, alpha, attr_subset=unseen_idx)
        seen_unseen = {"seen_detection_map": seen_det, "unseen_detection_map": unseen_det}
    return metrics.EvalReport(
        top1=metrics.top1_accuracy(preds, labels),
        detection_map=det_map,
        localization_map=loc_map,
        per_attribute_ap=[float(x) for x in per_attr],
        seen_unseen=seen_unseen,
    )
