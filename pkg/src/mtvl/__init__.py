"""Desk-scale multitask vision-language alignment lab.

Dual micro transformer encoders aligned by cosine similarity, trained with
a hybrid loss over classification, positive/negative attribute detection
and patch-level attribute localization, plus the full evaluation and
ablation protocol, on a fully numpy reverse-mode autodiff engine.
"""

from . import (ablate, alignment, checkpoint, data, encoders, gradcheck,
               heatmap, losses, metrics, optim, tensor, train, verify)

__version__ = "0.1.0"
