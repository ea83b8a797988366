"""Synthetic fine-grained dataset with exact patch-level ground truth,
CUB-style annotation ingestion, mask construction, corruption and
augmentation.

Attributes are (color, body part) pairs rendered as colored rectangles in
fixed part zones; each class is a distinct color signature over the parts,
so classification, detection and localization are all learnable from pixels
with known ground truth.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .heatmap import bilinear_resize

PART_NAMES = ["head", "wings", "tail", "belly", "back", "breast", "crown", "legs"]
COLOR_NAMES = ["red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"]
COLOR_VALUES = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.1, 0.2, 0.9),
    "yellow": (0.9, 0.9, 0.1),
    "purple": (0.6, 0.1, 0.8),
    "orange": (0.95, 0.55, 0.1),
    "cyan": (0.1, 0.85, 0.85),
    "white": (0.95, 0.95, 0.95),
}


@dataclass
class DatasetSpec:
    n_classes: int = 8
    n_attributes: int = 16
    attributes_per_class: int = 4
    image_height: int = 32
    image_width: int = 32
    channels: int = 3
    patch_height: int = 8
    patch_width: int = 8
    occlusion_prob: float = 0.1
    n_train: int = 512
    n_test: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.image_height % self.patch_height or self.image_width % self.patch_width:
            raise ValueError("patch grid must divide the image")
        if self.n_attributes % self.attributes_per_class:
            raise ValueError("n_attributes must be a multiple of attributes_per_class")
        n_parts = self.attributes_per_class
        n_props = self.n_attributes // n_parts
        if n_props ** n_parts < self.n_classes:
            raise ValueError(
                f"only {n_props ** n_parts} distinct signatures available for "
                f"{self.n_classes} classes")
        if n_parts > len(PART_NAMES) or n_props > len(COLOR_NAMES):
            raise ValueError("spec exceeds the built-in part/color vocabularies")

    @property
    def grid(self):
        return (self.image_height // self.patch_height,
                self.image_width // self.patch_width)

    @property
    def n_patches(self):
        gh, gw = self.grid
        return gh * gw

    @property
    def n_parts(self):
        return self.attributes_per_class

    @property
    def n_properties(self):
        return self.n_attributes // self.attributes_per_class


@dataclass
class PartAnnotation:
    part: int
    x: float
    y: float
    visible: bool


@dataclass
class RegionLabel:
    attribute: int
    box: tuple | None = None        # (x0, y0, x1, y1) pixels, end-exclusive
    dense_map: np.ndarray | None = None  # H×W binary


@dataclass
class ImageSample:
    pixels: np.ndarray          # [H, W, C] float32 in [0,1]
    class_id: int
    alpha: np.ndarray           # [|A|] uint8
    confidence: np.ndarray      # [|A|] in {1..4}
    masks: np.ndarray           # [N, |A|] uint8
    split: str = "train"
    part_points: list = field(default_factory=list)
    image_absent: np.ndarray | None = None


@dataclass
class Dataset:
    spec: DatasetSpec
    train: list
    test: list
    class_names: list
    attribute_names: list
    part_names: list
    attr_part_map: np.ndarray   # [|A|] part index per attribute

    def class_prompt(self, c):
        return f"an image of {self.class_names[c]}"

    def attribute_prompts(self, a):
        name = self.attribute_names[a]
        return name, "no " + name

    def prompt_corpus(self):
        corpus = [self.class_prompt(c) for c in range(len(self.class_names))]
        for a in range(len(self.attribute_names)):
            corpus.extend(self.attribute_prompts(a))
        return corpus


def _part_zones(spec):
    """Fixed rectangular zone (y0, y1, x0, x1) per part, tiling the image."""
    n = spec.n_parts
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    zones = []
    for p in range(n):
        r, c = divmod(p, cols)
        y0 = r * spec.image_height // rows
        y1 = (r + 1) * spec.image_height // rows
        x0 = c * spec.image_width // cols
        x1 = (c + 1) * spec.image_width // cols
        zones.append((y0, y1, x0, x1))
    return zones


def _signatures(spec):
    """Distinct per-class property choices, one property per part.

    Signatures are kept well separated (any two classes agree on at most
    one part) so a single occluded part never makes two classes
    indistinguishable. If the space is too tight for that margin it is
    relaxed one step at a time rather than failing.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC1A55]))
    for max_agree in range(1, spec.n_parts):
        sigs = []
        for _ in range(10000):
            sig = tuple(rng.integers(0, spec.n_properties, size=spec.n_parts))
            if all(sum(a == b for a, b in zip(sig, s)) <= max_agree for s in sigs):
                sigs.append(sig)
                if len(sigs) == spec.n_classes:
                    return sigs
    raise ValueError("could not draw distinct class signatures")


def _rects_overlap(a, b):
    return not (a[1] <= b[0] or b[1] <= a[0] or a[3] <= b[2] or b[3] <= a[2])


def _render_sample(spec, sigs, index, split_id):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, split_id, index]))
    h, w, c = spec.image_height, spec.image_width, spec.channels
    class_id = index % spec.n_classes
    sig = sigs[class_id]
    zones = _part_zones(spec)
    n_props = spec.n_properties

    base = rng.uniform(0.15, 0.35)
    pixels = np.clip(base + rng.normal(0.0, 0.03, size=(h, w, c)), 0.0, 1.0)

    alpha = np.zeros(spec.n_attributes, dtype=np.uint8)
    conf = np.full(spec.n_attributes, 4, dtype=np.uint8)
    masks = np.zeros((spec.n_patches, spec.n_attributes), dtype=np.uint8)
    part_points = []
    rects = []

    gh, gw = spec.grid
    for part, prop in enumerate(sig):
        attr = part * n_props + prop
        occluded = rng.random() < spec.occlusion_prob
        zy0, zy1, zx0, zx1 = zones[part]
        zh, zw = zy1 - zy0, zx1 - zx0
        rh = int(rng.integers(max(3, int(0.4 * zh)), max(4, int(0.75 * zh)) + 1))
        rw = int(rng.integers(max(3, int(0.4 * zw)), max(4, int(0.75 * zw)) + 1))
        ry = int(rng.integers(zy0 + 1, max(zy0 + 2, zy1 - rh)))
        rx = int(rng.integers(zx0 + 1, max(zx0 + 2, zx1 - rw)))
        if occluded:
            part_points.append(PartAnnotation(part, 0.0, 0.0, False))
            continue
        color = np.array(COLOR_VALUES[COLOR_NAMES[prop]])
        block = color + rng.normal(0.0, 0.02, size=(rh, rw, c))
        pixels[ry:ry + rh, rx:rx + rw] = np.clip(block, 0.0, 1.0)
        rects.append((ry, ry + rh, rx, rx + rw))
        alpha[attr] = 1
        # exact mask: every patch the rendered block intersects
        for gy in range(ry // spec.patch_height, (ry + rh - 1) // spec.patch_height + 1):
            for gx in range(rx // spec.patch_width, (rx + rw - 1) // spec.patch_width + 1):
                masks[gy * gw + gx, attr] = 1
        part_points.append(PartAnnotation(part, rx + rw / 2.0, ry + rh / 2.0, True))

    # grayscale distractor blobs outside attribute regions
    for _ in range(rng.integers(1, 3)):
        dh_ = int(rng.integers(3, 7))
        dw_ = int(rng.integers(3, 7))
        for _try in range(8):
            dy = int(rng.integers(0, h - dh_))
            dx = int(rng.integers(0, w - dw_))
            cand = (dy, dy + dh_, dx, dx + dw_)
            if not any(_rects_overlap(cand, r) for r in rects):
                val = rng.uniform(0.4, 0.6)
                pixels[dy:dy + dh_, dx:dx + dw_] = np.clip(
                    val + rng.normal(0.0, 0.02, size=(dh_, dw_, c)), 0.0, 1.0)
                break

    return ImageSample(
        pixels=pixels.astype(np.float32),
        class_id=class_id,
        alpha=alpha,
        confidence=conf,
        masks=masks,
        split="train" if split_id == 1 else "test",
        part_points=part_points,
        image_absent=np.zeros(spec.n_attributes, dtype=np.uint8),
    )


def generate_dataset(spec):
    """Deterministic synthetic train/test sets; pure per (spec, index)."""
    sigs = _signatures(spec)
    train = [_render_sample(spec, sigs, i, 1) for i in range(spec.n_train)]
    test = [_render_sample(spec, sigs, i, 2) for i in range(spec.n_test)]
    n_props = spec.n_properties
    attr_names = []
    attr_part = np.zeros(spec.n_attributes, dtype=np.int64)
    for part in range(spec.n_parts):
        for prop in range(n_props):
            attr_names.append(f"{COLOR_NAMES[prop]} {PART_NAMES[part]}")
            attr_part[part * n_props + prop] = part
    return Dataset(
        spec=spec,
        train=train,
        test=test,
        class_names=[f"species{k}" for k in range(spec.n_classes)],
        attribute_names=attr_names,
        part_names=PART_NAMES[: spec.n_parts],
        attr_part_map=attr_part,
    )


# ------------------------------------------------------------ label tooling

def filter_by_confidence(alpha, confidence):
    """Keep annotations at confidence 3 or 4; lower ones become negatives."""
    alpha = np.asarray(alpha)
    confidence = np.asarray(confidence)
    if np.any((confidence < 1) | (confidence > 4)):
        raise ValueError("confidence levels must lie in {1, 2, 3, 4}")
    return np.where(confidence >= 3, alpha, 0).astype(alpha.dtype)


def points_to_patch_mask(points, attr_part_map, spec, radius=0):
    """Part-center points -> [N, |A|] mask; Chebyshev radius in patch units."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    gh, gw = spec.grid
    n_attr = len(attr_part_map)
    mask = np.zeros((gh * gw, n_attr), dtype=np.uint8)
    by_part = {}
    for pt in points:
        by_part[pt.part] = pt
    for a in range(n_attr):
        pt = by_part.get(int(attr_part_map[a]))
        if pt is None or not pt.visible:
            continue
        if not (0 <= pt.x < spec.image_width and 0 <= pt.y < spec.image_height):
            raise ValueError(f"part point ({pt.x}, {pt.y}) outside the image")
        gy = int(pt.y) // spec.patch_height
        gx = int(pt.x) // spec.patch_width
        for yy in range(max(0, gy - radius), min(gh, gy + radius + 1)):
            for xx in range(max(0, gx - radius), min(gw, gx + radius + 1)):
                mask[yy * gw + xx, a] = 1
    return mask


def regions_to_patch_mask(region, spec, overlap_threshold=0.5):
    """One region label -> [N] mask row: patch positive iff coverage >= theta."""
    if not (0 < overlap_threshold <= 1):
        raise ValueError("overlap_threshold must lie in (0, 1]")
    h, w = spec.image_height, spec.image_width
    if region.dense_map is not None:
        dense = np.asarray(region.dense_map, dtype=bool)
        if dense.shape != (h, w):
            raise ValueError(f"dense map shape {dense.shape} != image {(h, w)}")
    else:
        x0, y0, x1, y1 = region.box
        dense = np.zeros((h, w), dtype=bool)
        dense[max(0, int(y0)):max(0, int(y1)), max(0, int(x0)):max(0, int(x1))] = True
    gh, gw = spec.grid
    ph, pw = spec.patch_height, spec.patch_width
    frac = dense.reshape(gh, ph, gw, pw).mean(axis=(1, 3))
    return (frac >= overlap_threshold).astype(np.uint8).reshape(gh * gw)


def corrupt_masks(masks, spec, dilation=0, erosion=0, flip_rate=0.0, seed=0):
    """Simulated pseudo-label degradation: grid-level morphology then flips."""
    if not (0 <= flip_rate < 1):
        raise ValueError("flip_rate must lie in [0, 1)")
    gh, gw = spec.grid
    masks = np.asarray(masks, dtype=bool)
    out = np.zeros_like(masks)
    rng = np.random.default_rng(seed)
    for a in range(masks.shape[1]):
        m = masks[:, a].reshape(gh, gw)
        if dilation:
            m = binary_dilation(m, iterations=dilation)
        if erosion:
            m = binary_erosion(m, iterations=erosion)
        out[:, a] = m.reshape(-1)
    if flip_rate > 0:
        flips = rng.random(out.shape) < flip_rate
        out = out ^ flips
    return out.astype(np.uint8)


# ---------------------------------------------------------------- augment

def _overlap_weights(n_cells, cell_size, n_pixels):
    """[n_cells, n_pixels] matrix of pixel-overlap lengths per grid cell.

    Cell i spans [i*cell_size, (i+1)*cell_size) in (possibly fractional)
    pixel coordinates.
    """
    lo = np.arange(n_cells)[:, None] * cell_size
    hi = lo + cell_size
    px = np.arange(n_pixels)[None, :]
    return np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)


def augment(sample, spec, seed, crop_scale=(0.8, 1.0), theta_aug=0.5, flip_prob=0.5):
    """Random crop (kept around the labeled regions) + horizontal flip.

    Masks are transformed consistently: a patch is positive iff at least
    theta_aug of its area maps from originally-positive patch territory.
    """
    rng = np.random.default_rng(seed)
    h, w = spec.image_height, spec.image_width
    ph, pw = spec.patch_height, spec.patch_width
    gh, gw = spec.grid

    territory = sample.masks.reshape(gh, gw, -1)
    pix_terr = np.kron(territory.transpose(2, 0, 1), np.ones((ph, pw))) > 0  # [A, H, W]
    any_pos = pix_terr.any(axis=0)
    if any_pos.any():
        ys, xs = np.nonzero(any_pos)
        by0, by1 = ys.min(), ys.max() + 1
        bx0, bx1 = xs.min(), xs.max() + 1
    else:
        by0, by1, bx0, bx1 = 0, 1, 0, 1

    s = rng.uniform(*crop_scale)
    ch = max(int(round(h * np.sqrt(s))), by1 - by0)
    cw = max(int(round(w * np.sqrt(s))), bx1 - bx0)
    y_lo, y_hi = max(0, by1 - ch), min(by0, h - ch)
    x_lo, x_hi = max(0, bx1 - cw), min(bx0, w - cw)
    cy = int(rng.integers(y_lo, y_hi + 1))
    cx = int(rng.integers(x_lo, x_hi + 1))

    crop = sample.pixels[cy:cy + ch, cx:cx + cw]
    pixels = bilinear_resize(crop, h, w).astype(np.float32)

    sy, sx = ch / h, cw / w  # output pixel -> crop coords
    wy = _overlap_weights(gh, ph * sy, ch)
    wx = _overlap_weights(gw, pw * sx, cw)
    cropped = pix_terr[:, cy:cy + ch, cx:cx + cw].astype(np.float64)
    covered = np.einsum("yh,ahw,xw->ayx", wy, cropped, wx)
    fracs = covered / (ph * sy * pw * sx)
    new_masks = (fracs >= theta_aug).transpose(1, 2, 0).reshape(gh * gw, -1)
    new_masks = (new_masks & (sample.masks.sum(axis=0) > 0)).astype(sample.masks.dtype)

    if rng.random() < flip_prob:
        pixels = pixels[:, ::-1].copy()
        new_masks = new_masks.reshape(gh, gw, -1)[:, ::-1].reshape(gh * gw, -1).copy()

    return ImageSample(
        pixels=pixels,
        class_id=sample.class_id,
        alpha=sample.alpha.copy(),
        confidence=sample.confidence.copy(),
        masks=new_masks,
        split=sample.split,
        part_points=sample.part_points,
        image_absent=None if sample.image_absent is None else sample.image_absent.copy(),
    )


def split_seen_unseen(n_attributes, seen_ratio, seed):
    """Deterministic seen/unseen attribute partition."""
    if not (0 < seen_ratio <= 1):
        raise ValueError("seen_ratio must lie in (0, 1]")
    n_seen = int(round(seen_ratio * n_attributes))
    if n_seen == 0:
        raise ValueError("seen set would be empty")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_attributes)
    return np.sort(perm[:n_seen]), np.sort(perm[n_seen:])


# --------------------------------------------------- CUB-style file layout

def export_dataset(dataset, root):
    """Write the dataset in the plain-text annotation layout plus PNG images."""
    from PIL import Image

    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    spec = dataset.spec
    with open(os.path.join(root, "classes.txt"), "w") as fh:
        for i, name in enumerate(dataset.class_names, start=1):
            fh.write(f"{i} {name}\n")
    with open(os.path.join(root, "attributes.txt"), "w") as fh:
        for i, name in enumerate(dataset.attribute_names, start=1):
            fh.write(f"{i} {name.replace(' ', '::')}\n")
    with open(os.path.join(root, "parts.txt"), "w") as fh:
        for i, name in enumerate(dataset.part_names, start=1):
            fh.write(f"{i} {name}\n")
    with open(os.path.join(root, "attribute_part_map.txt"), "w") as fh:
        for a, p in enumerate(dataset.attr_part_map, start=1):
            fh.write(f"{a} {p + 1}\n")

    images_f = open(os.path.join(root, "images.txt"), "w")
    labels_f = open(os.path.join(root, "image_class_labels.txt"), "w")
    attrs_f = open(os.path.join(root, "image_attribute_labels.txt"), "w")
    parts_f = open(os.path.join(root, "part_locs.txt"), "w")
    split_f = open(os.path.join(root, "train_test_split.txt"), "w")
    img_id = 0
    for split_flag, samples in ((1, dataset.train), (0, dataset.test)):
        for sample in samples:
            img_id += 1
            rel = f"images/{img_id:06d}.png"
            arr = np.rint(sample.pixels * 255).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(os.path.join(root, rel))
            images_f.write(f"{img_id} {rel}\n")
            labels_f.write(f"{img_id} {sample.class_id + 1}\n")
            split_f.write(f"{img_id} {split_flag}\n")
            for a in range(spec.n_attributes):
                attrs_f.write(
                    f"{img_id} {a + 1} {int(sample.alpha[a])} {int(sample.confidence[a])}\n")
            for pt in sample.part_points:
                parts_f.write(
                    f"{img_id} {pt.part + 1} {pt.x:.2f} {pt.y:.2f} {int(pt.visible)}\n")
    for fh in (images_f, labels_f, attrs_f, parts_f, split_f):
        fh.close()


def load_dataset(root, spec, mask_radius=0):
    """Read the plain-text layout back; masks rebuilt from part points."""
    from PIL import Image

    def read_rows(name):
        with open(os.path.join(root, name)) as fh:
            return [line.split() for line in fh if line.strip()]

    class_names = [row[1] for row in read_rows("classes.txt")]
    attr_names = [row[1].replace("::", " ") for row in read_rows("attributes.txt")]
    part_names = [row[1] for row in read_rows("parts.txt")]
    attr_part = np.zeros(len(attr_names), dtype=np.int64)
    for row in read_rows("attribute_part_map.txt"):
        attr_part[int(row[0]) - 1] = int(row[1]) - 1

    images = {int(r[0]): r[1] for r in read_rows("images.txt")}
    labels = {int(r[0]): int(r[1]) - 1 for r in read_rows("image_class_labels.txt")}
    split_flag = {int(r[0]): int(r[1]) for r in read_rows("train_test_split.txt")}
    alphas = {i: np.zeros(len(attr_names), dtype=np.uint8) for i in images}
    confs = {i: np.full(len(attr_names), 4, dtype=np.uint8) for i in images}
    for r in read_rows("image_attribute_labels.txt"):
        img, a = int(r[0]), int(r[1]) - 1
        alphas[img][a] = int(r[2])
        confs[img][a] = int(r[3])
    points = {i: [] for i in images}
    for r in read_rows("part_locs.txt"):
        points[int(r[0])].append(
            PartAnnotation(int(r[1]) - 1, float(r[2]), float(r[3]), bool(int(r[4]))))

    train, test = [], []
    for img_id in sorted(images):
        arr = np.asarray(Image.open(os.path.join(root, images[img_id])), dtype=np.float32) / 255.0
        alpha = filter_by_confidence(alphas[img_id], confs[img_id])
        masks = points_to_patch_mask(points[img_id], attr_part, spec, radius=mask_radius)
        masks = masks * alpha[None, :]
        sample = ImageSample(
            pixels=arr,
            class_id=labels[img_id],
            alpha=alpha,
            confidence=confs[img_id],
            masks=masks.astype(np.uint8),
            split="train" if split_flag[img_id] else "test",
            part_points=points[img_id],
        )
        (train if split_flag[img_id] else test).append(sample)
    return Dataset(
        spec=spec, train=train, test=test, class_names=class_names,
        attribute_names=attr_names, part_names=part_names, attr_part_map=attr_part)


def load_region_labels(path, spec, n_attributes, overlap_threshold=0.5, root=None):
    """Read one image's pseudo-label file into an [N, |A|] mask.

    Lines: "<attr_id> <x0> <y0> <x1> <y1>" for boxes or
    "<attr_id> map:<relative.pgm>" for dense maps.
    """
    from .heatmap import read_pgm

    mask = np.zeros((spec.n_patches, n_attributes), dtype=np.uint8)
    base = root or os.path.dirname(path)
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            a = int(parts[0]) - 1
            if parts[1].startswith("map:"):
                dense, maxval = read_pgm(os.path.join(base, parts[1][4:]))
                region = RegionLabel(a, dense_map=dense > maxval / 2)
            else:
                region = RegionLabel(a, box=tuple(float(v) for v in parts[1:5]))
            mask[:, a] |= regions_to_patch_mask(region, spec, overlap_threshold)
    return mask
