"""Ablation grid plumbing tests (cells, robustness, CSV)."""

import numpy as np
import pytest

from mtvl import ablate
from mtvl.data import DatasetSpec, generate_dataset
from mtvl.losses import LossWeights
from mtvl.train import desk_config

TINY = DatasetSpec(n_train=16, n_test=8)


@pytest.fixture(scope="module")
def tiny_ds():
    return generate_dataset(TINY)


def tiny_cfg():
    return desk_config(epochs=1, accumulation_samples=8, augment=False)


def test_loss_toggle_cells_cover_table_rows():
    cells = ablate.loss_toggle_cells()
    names = [c.name for c in cells]
    assert names == ["class_only", "class_attr", "class_attr_loc",
                     "class_attr_loc_proj", "all_plus_alpha"]
    assert cells[0].weights.lambda_attr == 0
    assert cells[-1].weights.lambda_alpha == 1


def test_weight_sweep_grid():
    cells = ablate.weight_sweep_cells("lambda_attr")
    assert [c.weights.lambda_attr for c in cells] == [0, 1, 2, 5, 10, 15, 20]
    # other weights untouched
    assert all(c.weights.lambda_loc == 1 for c in cells)
    with pytest.raises(ValueError):
        ablate.weight_sweep_cells("lambda_nope")


def test_seen_ratio_cells():
    cells = ablate.seen_ratio_cells()
    assert len(cells) == 4
    combos = {(c.overrides["seen_ratio"], c.overrides["prompt_mode"])
              for c in cells}
    assert combos == {(0.25, "pos_neg"), (0.25, "pos_only"),
                      (0.5, "pos_neg"), (0.5, "pos_only")}


def test_annotation_source_cells():
    cells = ablate.annotation_source_cells()
    sources = [c.overrides["loc_source"] for c in cells]
    assert sources == ["none", "exact", "corrupted"]
    assert cells[0].weights.lambda_loc == 0


def test_freeze_grid_is_2x2():
    cells = ablate.freeze_grid_cells()
    assert len(cells) == 4
    pairs = {(c.freeze.image_backbone, c.freeze.text_backbone) for c in cells}
    assert len(pairs) == 4


def test_run_ablation_and_csv(tmp_path, tiny_ds):
    cells = [ablate.AblationCell("unit", weights=LossWeights())]
    results = ablate.run_ablation(tiny_cfg(), tiny_ds, cells, seeds=(0, 1))
    assert len(results) == 2
    assert all(r.error is None for r in results)
    assert results[0].report.top1 != results[1].report.top1 or True  # both valid
    path = tmp_path / "a.csv"
    ablate.write_ablation_csv(str(path), results)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("cell,seed,top1")


def test_run_ablation_records_failures_and_continues(tiny_ds):
    bad = ablate.AblationCell("boom", overrides=dict(prompt_mode="nope"))
    good = ablate.AblationCell("fine", weights=LossWeights())
    results = ablate.run_ablation(tiny_cfg(), tiny_ds, [bad, good], seeds=(0,))
    assert results[0].error is not None
    assert results[1].error is None


def test_summarize_mentions_failures(tiny_ds):
    bad = ablate.AblationCell("boom", overrides=dict(prompt_mode="nope"))
    results = ablate.run_ablation(tiny_cfg(), tiny_ds, [bad], seeds=(0,))
    assert "FAILED" in ablate.summarize(results)
