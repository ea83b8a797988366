"""Experiment grids: loss toggles, loss-weight sweeps, seen/unseen prompt
ratios, localization annotation sources and freeze policies."""

import csv
import dataclasses
import traceback
from dataclasses import dataclass, field, replace

from .losses import LossWeights
from .train import FreezePolicy, evaluate, train


@dataclass
class AblationCell:
    name: str
    overrides: dict = field(default_factory=dict)
    weights: LossWeights | None = None
    freeze: FreezePolicy | None = None


@dataclass
class AblationResult:
    cell: str
    seed: int
    report: object = None
    error: str | None = None


WEIGHT_FIELDS = ("lambda_class", "lambda_proj", "lambda_attr", "lambda_loc", "lambda_alpha")
WEIGHT_GRID = (0, 1, 2, 5, 10, 15, 20)


def loss_toggle_cells():
    """Loss on/off rows mirroring the additive ablation table."""
    rows = [
        ("class_only", dict(lambda_proj=0, lambda_attr=0, lambda_loc=0)),
        ("class_attr", dict(lambda_proj=0, lambda_loc=0)),
        ("class_attr_loc", dict(lambda_proj=0)),
        ("class_attr_loc_proj", dict()),
        ("all_plus_alpha", dict(lambda_alpha=1)),
    ]
    return [AblationCell(name, weights=LossWeights(**kw)) for name, kw in rows]


def weight_sweep_cells(which, grid=WEIGHT_GRID):
    """One loss weight varies over the grid; the others stay at unit."""
    if which not in WEIGHT_FIELDS:
        raise ValueError(f"unknown loss weight '{which}'")
    cells = []
    for value in grid:
        cells.append(AblationCell(
            f"{which}={value}", weights=LossWeights(**{which: float(value)})))
    return cells


def seen_ratio_cells(ratios=(0.25, 0.5), modes=("pos_neg", "pos_only")):
    return [
        AblationCell(f"ratio{r}_{m}", overrides=dict(seen_ratio=r, prompt_mode=m))
        for r in ratios for m in modes]


def annotation_source_cells():
    return [
        AblationCell("loc_none", weights=LossWeights(lambda_loc=0),
                     overrides=dict(loc_source="none")),
        AblationCell("loc_expert", overrides=dict(loc_source="exact")),
        AblationCell("loc_corrupted", overrides=dict(
            loc_source="corrupted", corrupt_dilation=1, corrupt_flip_rate=0.05)),
    ]


def freeze_grid_cells():
    cells = []
    for img in ("last_layer_only", "full"):
        for txt in ("last_layer_only", "full"):
            cells.append(AblationCell(
                f"img_{img}_txt_{txt}",
                freeze=FreezePolicy(image_backbone=img, text_backbone=txt)))
    return cells


def run_ablation(base_config, dataset, cells, seeds=(0,)):
    """One train+evaluate per (cell, seed); failures are recorded, the grid
    continues."""
    results = []
    for cell in cells:
        for seed in seeds:
            try:
                cfg = replace(base_config, seed=seed, **cell.overrides)
                if cell.weights is not None:
                    cfg = replace(cfg, weights=cell.weights)
                if cell.freeze is not None:
                    cfg = replace(cfg, freeze=cell.freeze)
                state, _, _ = train(cfg, dataset)
                seen_idx = unseen_idx = None
                if cfg.seen_ratio < 1.0:
                    from .data import split_seen_unseen
                    seen_idx, unseen_idx = split_seen_unseen(
                        state.n_attributes, cfg.seen_ratio, cfg.seen_split_seed)
                report = evaluate(state, dataset, config=cfg,
                                  seen_idx=seen_idx, unseen_idx=unseen_idx)
                results.append(AblationResult(cell.name, seed, report=report))
            except Exception:
                results.append(AblationResult(cell.name, seed, error=traceback.format_exc()))
    return results


def write_ablation_csv(path, results):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "seed", "top1", "detection_map", "localization_map",
                         "seen_detection_map", "unseen_detection_map", "error"])
        for res in results:
            if res.error:
                writer.writerow([res.cell, res.seed, "", "", "", "", "", "failed"])
                continue
            su = res.report.seen_unseen or {}
            writer.writerow([
                res.cell, res.seed,
                f"{res.report.top1:.6f}",
                f"{res.report.detection_map:.6f}",
                f"{res.report.localization_map:.6f}",
                f"{su.get('seen_detection_map', float('nan')):.6f}" if su else "",
                f"{su.get('unseen_detection_map', float('nan')):.6f}" if su else "",
                "",
            ])


def summarize(results):
    lines = [f"{'cell':32s} {'seed':>4s} {'top1':>8s} {'det mAP':>8s} {'loc mAP':>8s}"]
    for res in results:
        if res.error:
            lines.append(f"{res.cell:32s} {res.seed:4d}   FAILED")
        else:
            r = res.report
            lines.append(
                f"{res.cell:32s} {res.seed:4d} {r.top1:8.4f} "
                f"{r.detection_map:8.4f} {r.localization_map:8.4f}")
    return "\n".join(lines)
