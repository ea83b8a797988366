"""Command-line entry points: generate-data, train, eval, ablate, heatmap,
gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import ablate as ablate_mod
from . import metrics
from .checkpoint import CheckpointError, load_state
from .data import DatasetSpec, export_dataset, generate_dataset, load_dataset
from .encoders import ImageEncoderConfig
from .gradcheck import finite_difference_check
from .heatmap import emit_heatmap
from .losses import LossWeights, NonFiniteLoss
from .train import (FreezePolicy, PromptBank, TrainConfig, build_state,
                    desk_config, evaluate, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _load_config_file(path):
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (want key=value): {line!r}")
        key, value = line.split("=", 1)
        try:
            out[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError:
            out[key.strip()] = value.strip()
    return out


_WEIGHT_KEYS = {f.name for f in dataclasses.fields(LossWeights)}
_FREEZE_KEYS = {f.name for f in dataclasses.fields(FreezePolicy)}
_IMAGE_KEYS = {f.name for f in dataclasses.fields(ImageEncoderConfig)}
_SPEC_KEYS = {f.name for f in dataclasses.fields(DatasetSpec)}


def _build_train_config(args, extra):
    cfg_kwargs, weights, freeze, image = {}, {}, {}, {}
    cfg_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for key, value in extra.items():
        if key in _WEIGHT_KEYS:
            weights[key] = value
        elif key in _FREEZE_KEYS:
            freeze[key] = value
        elif key in _IMAGE_KEYS:
            image[key] = value
        elif key in cfg_fields:
            cfg_kwargs[key] = value
        elif key in _SPEC_KEYS:
            continue  # consumed by the dataset spec
        else:
            raise UsageError(f"unknown config key '{key}'")
    cfg = desk_config(**cfg_kwargs) if args.desk else TrainConfig(**cfg_kwargs)
    if weights:
        cfg = dataclasses.replace(cfg, weights=LossWeights(**weights))
    if freeze:
        cfg = dataclasses.replace(cfg, freeze=FreezePolicy(**freeze))
    if image:
        cfg = dataclasses.replace(cfg, image=ImageEncoderConfig(**image))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    for name in ("epochs", "accumulation_samples", "learning_rate"):
        value = getattr(args, name, None)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{name: value})
    return cfg


def _dataset_spec(extra, seed=None):
    kwargs = {k: v for k, v in extra.items() if k in _SPEC_KEYS}
    spec = DatasetSpec(**kwargs)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    return spec


def _get_dataset(args, extra):
    if getattr(args, "data", None):
        spec = _dataset_spec(extra)
        return load_dataset(args.data, spec)
    return generate_dataset(_dataset_spec(extra, seed=getattr(args, "data_seed", 0)))


def _add_common(sub, seed_required):
    sub.add_argument("--config", help="JSON or key=value config file")
    sub.add_argument("--seed", type=int, required=seed_required)
    sub.add_argument("--data", help="dataset directory (omit for in-memory synthetic)")
    sub.add_argument("--data-seed", type=int, default=0, dest="data_seed")
    sub.add_argument("--out", default="runs/out", help="output directory")
    sub.add_argument("--desk", action="store_true", default=True,
                     help="use desk-scale training defaults (default)")
    sub.add_argument("--paper-scale", dest="desk", action="store_false",
                     help="use paper-scale defaults (100 epochs, lr 1e-5, accum 200)")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--accumulation-samples", type=int, dest="accumulation_samples")
    sub.add_argument("--learning-rate", type=float, dest="learning_rate")


def build_parser():
    parser = argparse.ArgumentParser(prog="mtvl")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate-data", help="write a synthetic dataset to disk")
    gen.add_argument("--config", help="JSON or key=value dataset spec")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    _add_common(subs.add_parser("train", help="train a model"), seed_required=True)
    ev = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(ev, seed_required=False)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--zero-shot-pca", action="store_true")

    ab = subs.add_parser("ablate", help="run an experiment grid")
    _add_common(ab, seed_required=True)
    ab.add_argument("--grid", required=True,
                    choices=["loss_toggles", "weights", "seen_ratios",
                             "annotation_sources", "freeze"],
                    help="which named grid to run")
    ab.add_argument("--weight-axis", default="lambda_attr",
                    help="loss weight to sweep for --grid weights")
    ab.add_argument("--seeds", type=int, nargs="+")

    hm = subs.add_parser("heatmap", help="emit attribute heatmaps for test images")
    _add_common(hm, seed_required=False)
    hm.add_argument("--checkpoint", required=True)
    hm.add_argument("--images", type=int, nargs="+", default=[0],
                    help="test-split image indices")
    hm.add_argument("--attributes", type=int, nargs="+",
                    help="attribute ids (default: present attributes)")

    gc = subs.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--config", help="JSON or key=value config file")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--coords-per-param", type=int,
                    help="check sampled single coordinates instead of directions")
    gc.add_argument("--directions-per-param", type=int, default=3,
                    dest="directions_per_param")
    return parser


def _extra(args):
    return _load_config_file(args.config) if getattr(args, "config", None) else {}


def cmd_generate_data(args):
    spec = _dataset_spec(_extra(args), seed=args.seed)
    dataset = generate_dataset(spec)
    export_dataset(dataset, args.out)
    print(f"wrote {len(dataset.train)} train / {len(dataset.test)} test samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    extra = _extra(args)
    cfg = _build_train_config(args, extra)
    dataset = _get_dataset(args, extra)
    state, rows, _ = train(cfg, dataset, out_dir=args.out)
    report = evaluate(state, dataset, config=cfg)
    report.to_json(os.path.join(args.out, "metrics.json"))
    report.to_text(os.path.join(args.out, "metrics.txt"))
    report.per_attribute_csv(os.path.join(args.out, "per_attribute_ap.csv"),
                             names=dataset.attribute_names)
    print(report.to_text().strip())
    return EXIT_OK


def _restore(args, extra):
    cfg = _build_train_config(args, extra)
    dataset = _get_dataset(args, extra)
    state, prompts = build_state(cfg, dataset)
    load_state(args.checkpoint, state)
    return cfg, dataset, state, prompts


def cmd_eval(args):
    extra = _extra(args)
    cfg, dataset, state, prompts = _restore(args, extra)
    report = evaluate(state, dataset, prompts=prompts, config=cfg,
                      zero_shot_pca=args.zero_shot_pca)
    os.makedirs(args.out, exist_ok=True)
    report.to_json(os.path.join(args.out, "metrics.json"))
    report.to_text(os.path.join(args.out, "metrics.txt"))
    print(report.to_text().strip())
    return EXIT_OK


def cmd_ablate(args):
    extra = _extra(args)
    cfg = _build_train_config(args, extra)
    dataset = _get_dataset(args, extra)
    grids = {
        "loss_toggles": ablate_mod.loss_toggle_cells,
        "weights": lambda: ablate_mod.weight_sweep_cells(args.weight_axis),
        "seen_ratios": ablate_mod.seen_ratio_cells,
        "annotation_sources": ablate_mod.annotation_source_cells,
        "freeze": ablate_mod.freeze_grid_cells,
    }
    cells = grids[args.grid]()
    seeds = args.seeds or [args.seed]
    results = ablate_mod.run_ablation(cfg, dataset, cells, seeds=seeds)
    os.makedirs(args.out, exist_ok=True)
    ablate_mod.write_ablation_csv(os.path.join(args.out, "ablation.csv"), results)
    print(ablate_mod.summarize(results))
    return EXIT_OK


def cmd_heatmap(args):
    extra = _extra(args)
    cfg, dataset, state, prompts = _restore(args, extra)
    from . import alignment
    from . import tensor as T
    from .encoders import embed_patches, encode_images
    from .train import encode_prompts

    out_dir = os.path.join(args.out, "heatmaps")
    os.makedirs(out_dir, exist_ok=True)
    spec = dataset.spec
    with T.no_grad():
        _, pos_embs, _ = encode_prompts(state, prompts, need_neg=False)
        temp = alignment.effective_temperature(state.params["temperature.log_scale"])
        for idx in args.images:
            sample = dataset.test[idx]
            reps = encode_images(state, sample.pixels[None])
            probs = alignment.patch_attribute_probabilities(
                embed_patches(state, reps), pos_embs, temp).data[0]
            attrs = args.attributes or list(np.flatnonzero(sample.alpha))
            for a in attrs:
                path = os.path.join(out_dir, f"{idx}_{a}.pgm")
                emit_heatmap(path, probs[:, a], spec.grid,
                             spec.image_height, spec.image_width)
                print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .verify import full_model_gradcheck

    report = full_model_gradcheck(
        seed=args.seed, h=args.step, tol=args.tol,
        max_coords_per_param=args.coords_per_param,
        directions_per_param=args.directions_per_param)
    print(report)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "generate-data": cmd_generate_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "heatmap": cmd_heatmap,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
