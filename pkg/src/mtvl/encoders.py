"""Desk-scale image and text transformer towers sharing an embedding space.

The image tower maps a raster to per-patch representations (CLS at row 0);
the text tower maps token ids to an embedding read at the EOS position.
Three projections bridge to the shared d_model space: g_img on the CLS row,
g_txt on the EOS row, and h_img on the non-CLS patch rows (a separate head,
used only by the localization branch).
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD_ID, SOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
_RESERVED = ["<pad>", "<sos>", "<eos>", "<unk>"]

MASK_NEG = -1e9


class Tokenizer:
    """Lowercase whitespace tokenizer over a fixed prompt corpus."""

    def __init__(self, corpus):
        words = sorted({w for text in corpus for w in text.lower().split()})
        self.vocab = _RESERVED + words
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def vocab_size(self):
        return len(self.vocab)

    def encode(self, text):
        body = [self.index.get(w, UNK_ID) for w in text.lower().split()]
        return [SOS_ID] + body + [EOS_ID]

    def collisions(self, corpus):
        """Prompt pairs that map to the same id sequence (should be none)."""
        seen = {}
        clashes = []
        for text in corpus:
            key = tuple(self.encode(text))
            if key in seen and seen[key] != text:
                clashes.append((seen[key], text))
            seen[key] = text
        return clashes


@dataclass
class ImageEncoderConfig:
    image_height: int = 32
    image_width: int = 32
    channels: int = 3
    patch_height: int = 8
    patch_width: int = 8
    depth: int = 2
    d_image: int = 64
    d_model: int = 32
    heads: int = 4

    def __post_init__(self):
        if self.image_height % self.patch_height or self.image_width % self.patch_width:
            raise ValueError(
                f"image {self.image_height}x{self.image_width} not divisible by "
                f"patch {self.patch_height}x{self.patch_width}"
            )
        if self.d_image % self.heads:
            raise ValueError("d_image must divide evenly across heads")

    @property
    def grid(self):
        return (self.image_height // self.patch_height, self.image_width // self.patch_width)

    @property
    def n_patches(self):
        gh, gw = self.grid
        return gh * gw


@dataclass
class TextEncoderConfig:
    vocab_size: int = 64
    max_length: int = 16
    depth: int = 2
    d_text: int = 64
    d_model: int = 32
    heads: int = 4

    def __post_init__(self):
        if self.d_text % self.heads:
            raise ValueError("d_text must divide evenly across heads")


def patchify(image, config):
    """H×W×C raster -> N×(P_H·P_W·C) rows in row-major patch order."""
    image = np.asarray(image)
    h, w, c = config.image_height, config.image_width, config.channels
    if image.shape != (h, w, c):
        raise T.ShapeError(f"patchify: image shape {image.shape} != configured {(h, w, c)}")
    ph, pw = config.patch_height, config.patch_width
    gh, gw = config.grid
    patches = image.reshape(gh, ph, gw, pw, c).transpose(0, 2, 1, 3, 4)
    return patches.reshape(gh * gw, ph * pw * c)


def _trunc_normal(rng, shape, std=0.02):
    x = rng.standard_normal(shape) * std
    return np.clip(x, -2 * std, 2 * std)


def _init_block(rng, prefix, d, params):
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.attn.{name}"] = _trunc_normal(rng, (d, d))
        if name != "wk":
            # a key bias shifts every score of a query equally; softmax is
            # invariant to it, so the parameter would be dead weight
            params[f"{prefix}.attn.{name}_b"] = np.zeros(d)
    params[f"{prefix}.ln1.g"] = np.ones(d)
    params[f"{prefix}.ln1.b"] = np.zeros(d)
    params[f"{prefix}.ln2.g"] = np.ones(d)
    params[f"{prefix}.ln2.b"] = np.zeros(d)
    params[f"{prefix}.mlp.w1"] = _trunc_normal(rng, (d, 4 * d))
    params[f"{prefix}.mlp.b1"] = np.zeros(4 * d)
    params[f"{prefix}.mlp.w2"] = _trunc_normal(rng, (4 * d, d))
    params[f"{prefix}.mlp.b2"] = np.zeros(d)


class ModelState:
    """Named parameter map for both towers, projections, heads and temperature.

    Names are stable across save/load; g_img and h_img are independent
    parameter sets.
    """

    def __init__(self, image_config, text_config, n_classes, n_attributes,
                 seed=0, dtype=np.float32, temperature_init=np.log(1.0 / 0.07)):
        if image_config.d_model != text_config.d_model:
            raise ValueError("image and text towers must share d_model")
        self.image_config = image_config
        self.text_config = text_config
        self.n_classes = n_classes
        self.n_attributes = n_attributes
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        ic, tc = image_config, text_config
        raw = {}
        raw["image.patch_embed.w"] = _trunc_normal(
            rng, (ic.patch_height * ic.patch_width * ic.channels, ic.d_image))
        raw["image.patch_embed.b"] = np.zeros(ic.d_image)
        raw["image.cls"] = _trunc_normal(rng, (1, 1, ic.d_image))
        raw["image.pos"] = _trunc_normal(rng, (ic.n_patches + 1, ic.d_image))
        for layer in range(ic.depth):
            _init_block(rng, f"image.layers.{layer}", ic.d_image, raw)
        raw["image.ln_f.g"] = np.ones(ic.d_image)
        raw["image.ln_f.b"] = np.zeros(ic.d_image)

        raw["text.tok_embed"] = _trunc_normal(rng, (tc.vocab_size, tc.d_text))
        raw["text.pos"] = _trunc_normal(rng, (tc.max_length, tc.d_text))
        for layer in range(tc.depth):
            _init_block(rng, f"text.layers.{layer}", tc.d_text, raw)
        raw["text.ln_f.g"] = np.ones(tc.d_text)
        raw["text.ln_f.b"] = np.zeros(tc.d_text)

        raw["proj.g_img.w"] = _trunc_normal(rng, (ic.d_image, ic.d_model))
        raw["proj.g_img.b"] = np.zeros(ic.d_model)
        raw["proj.h_img.w"] = _trunc_normal(rng, (ic.d_image, ic.d_model))
        raw["proj.h_img.b"] = np.zeros(ic.d_model)
        raw["proj.g_txt.w"] = _trunc_normal(rng, (tc.d_text, tc.d_model))
        raw["proj.g_txt.b"] = np.zeros(tc.d_model)
        raw["head.class.w"] = _trunc_normal(rng, (ic.d_model, n_classes))
        raw["head.class.b"] = np.zeros(n_classes)
        raw["head.attr.w"] = _trunc_normal(rng, (ic.d_model, n_attributes))
        raw["head.attr.b"] = np.zeros(n_attributes)
        raw["temperature.log_scale"] = np.array([float(temperature_init)])

        self.params = {
            name: Tensor(v.astype(self.dtype), requires_grad=True)
            for name, v in raw.items()
        }

    def __getitem__(self, name):
        return self.params[name]

    def names(self):
        return list(self.params.keys())

    def param_hash(self):
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    def astype(self, dtype):
        """Cast all parameters in place (e.g. to float64 for gradchecks)."""
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        return self

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None


def _attention(x, params, prefix, heads, mask=None):
    b_dims = x.shape[:-2]
    t, d = x.shape[-2], x.shape[-1]
    dh = d // heads
    q = T.matmul(x, params[f"{prefix}.wq"]) + params[f"{prefix}.wq_b"]
    k = T.matmul(x, params[f"{prefix}.wk"])
    v = T.matmul(x, params[f"{prefix}.wv"]) + params[f"{prefix}.wv_b"]

    def split(z):  # [..., T, d] -> [..., heads, T, dh]
        z = T.reshape(z, b_dims + (t, heads, dh))
        ax = list(range(len(b_dims))) + [len(b_dims) + 1, len(b_dims), len(b_dims) + 2]
        return T.transpose(z, ax)

    q, k, v = split(q), split(k), split(v)
    scores = T.scalar_mul(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, v)  # [..., heads, T, dh]
    ax = list(range(len(b_dims))) + [len(b_dims) + 1, len(b_dims), len(b_dims) + 2]
    out = T.reshape(T.transpose(out, ax), b_dims + (t, d))
    return T.matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.wo_b"]


def _block(x, params, prefix, heads, mask=None):
    h = T.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = x + _attention(h, params, f"{prefix}.attn", heads, mask)
    h = T.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = T.gelu(T.matmul(h, params[f"{prefix}.mlp.w1"]) + params[f"{prefix}.mlp.b1"])
    h = T.matmul(h, params[f"{prefix}.mlp.w2"]) + params[f"{prefix}.mlp.b2"]
    return x + h


def encode_images(state, images, zero_positional=False):
    """images: [B, H, W, C] array -> patch representations [B, N+1, d_image]."""
    ic = state.image_config
    images = np.asarray(images, dtype=state.dtype)
    if images.ndim == 3:
        images = images[None]
    b = images.shape[0]
    patches = np.stack([patchify(img, ic) for img in images])  # [B, N, ppc]
    p = state.params
    x = T.matmul(Tensor(patches), p["image.patch_embed.w"]) + p["image.patch_embed.b"]
    cls = p["image.cls"] + Tensor(np.zeros((b, 1, ic.d_image), dtype=state.dtype))
    x = T.concat([cls, x], axis=1)
    if not zero_positional:
        x = x + p["image.pos"]
    for layer in range(ic.depth):
        x = _block(x, p, f"image.layers.{layer}", ic.heads)
    return T.layer_norm(x, p["image.ln_f.g"], p["image.ln_f.b"])


def encode_image(state, image):
    """Single-image convenience wrapper: -> [N+1, d_image]."""
    return T.slice_(encode_images(state, np.asarray(image)[None]), 0)


def embed_image(state, reps):
    """g_img on the CLS row: [..., N+1, d_image] -> [..., d_model]."""
    cls_row = T.slice_(reps, (Ellipsis, 0, slice(None)))
    return T.matmul(_ensure_2d(cls_row), state.params["proj.g_img.w"]) + state.params["proj.g_img.b"]


def embed_patches(state, reps):
    """h_img on the non-CLS rows: [..., N+1, d_image] -> [..., N, d_model]."""
    ic = state.image_config
    if reps.shape[-2] == ic.n_patches + 1:
        rows = T.slice_(reps, (Ellipsis, slice(1, None), slice(None)))
    elif reps.shape[-2] == ic.n_patches:
        rows = reps
    else:
        raise T.ShapeError(f"embed_patches: got {reps.shape[-2]} rows, expected N or N+1")
    return T.matmul(rows, state.params["proj.h_img.w"]) + state.params["proj.h_img.b"]


def _ensure_2d(x):
    if len(x.shape) == 1:
        return T.reshape(x, (1,) + x.shape)
    return x


def pad_token_batch(token_lists, max_length):
    """Pad id lists with PAD to a rectangular [P, L] batch; returns ids, eos index."""
    for ids in token_lists:
        if len(ids) > max_length:
            raise ValueError(f"sequence of {len(ids)} tokens exceeds max_length {max_length}")
    length = max(len(ids) for ids in token_lists)
    ids = np.full((len(token_lists), length), PAD_ID, dtype=np.int64)
    eos = np.zeros(len(token_lists), dtype=np.int64)
    for i, seq in enumerate(token_lists):
        ids[i, : len(seq)] = seq
        eos[i] = len(seq) - 1
    return ids, eos


def encode_texts(state, token_lists):
    """Tokenized prompts -> embeddings [P, d_model] read at each EOS position.

    Attention is causal and PAD keys are masked, so content after EOS can
    never influence the embedding.
    """
    tc = state.text_config
    ids, eos = pad_token_batch(token_lists, tc.max_length)
    p = state.params
    b, length = ids.shape
    x = T.embedding(p["text.tok_embed"], ids)
    x = x + T.slice_(p["text.pos"], slice(0, length))
    causal = np.triu(np.full((length, length), MASK_NEG, dtype=state.dtype), k=1)
    pad = np.where(ids == PAD_ID, MASK_NEG, 0.0).astype(state.dtype)
    mask = Tensor(causal[None, None] + pad[:, None, None, :])
    for layer in range(tc.depth):
        x = _block(x, p, f"text.layers.{layer}", tc.heads, mask)
    x = T.layer_norm(x, p["text.ln_f.g"], p["text.ln_f.b"])
    t_eos = T.gather_rows(x, eos)
    return T.matmul(t_eos, p["proj.g_txt.w"]) + p["proj.g_txt.b"]


def encode_text(state, token_ids):
    """Single-prompt convenience wrapper: -> [d_model]."""
    if len(token_ids) < 2:
        raise ValueError("token sequence needs at least SOS and EOS")
    return T.slice_(encode_texts(state, [list(token_ids)]), 0)
