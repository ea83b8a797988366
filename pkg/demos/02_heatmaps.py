"""Render patch-level attribute heatmaps from a trained model.

Trains briefly, then for one test image writes a bilinearly upsampled PGM
heatmap per present attribute, next to a PGM of the image itself and of the
ground-truth patch mask, so predicted localization can be compared by eye.
"""

import argparse
import os

import numpy as np

from mtvl import alignment
from mtvl import tensor as T
from mtvl.data import DatasetSpec, generate_dataset
from mtvl.encoders import embed_patches, encode_images
from mtvl.heatmap import emit_heatmap, write_pgm
from mtvl.train import PromptBank, desk_config, encode_prompts, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--image-index", type=int, default=0)
    parser.add_argument("--out", default="runs/demo02")
    args = parser.parse_args()

    spec = DatasetSpec()
    dataset = generate_dataset(spec)
    config = desk_config(epochs=args.epochs, eval_every=0)
    print(f"training for {config.epochs} epochs...")
    state, _, _ = train(config, dataset)

    sample = dataset.test[args.image_index]
    prompts = PromptBank(dataset, state.text_config.max_length)
    with T.no_grad():
        _, pos_embs, _ = encode_prompts(state, prompts)
        temp = alignment.effective_temperature(state.params["temperature.log_scale"])
        reps = encode_images(state, sample.pixels[None])
        e_patches = embed_patches(state, reps)
        patch_probs = alignment.patch_attribute_probabilities(
            e_patches, pos_embs, temp).data[0]          # [N, A]

    os.makedirs(args.out, exist_ok=True)
    h, w = spec.image_size, spec.image_size
    write_pgm(os.path.join(args.out, "image.pgm"), sample.pixels.mean(axis=0))
    present = np.flatnonzero(sample.alpha)
    print(f"test image {args.image_index}: class {sample.class_id} "
          f"({dataset.class_names[sample.class_id]}), "
          f"{len(present)} present attributes")
    for a in present:
        name = dataset.attribute_names[a].replace(" ", "_")
        emit_heatmap(os.path.join(args.out, f"pred_{name}.pgm"),
                     patch_probs[:, a], spec.grid, h, w)
        truth = sample.masks[:, a].reshape(spec.grid).astype(np.float64)
        emit_heatmap(os.path.join(args.out, f"truth_{name}.pgm"),
                     truth, spec.grid, h, w)
        print(f"  wrote pred_{name}.pgm / truth_{name}.pgm")
    print(f"heatmaps in {os.path.abspath(args.out)} (any PGM viewer works)")


if __name__ == "__main__":
    main()
