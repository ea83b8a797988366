"""End-to-end gradient verification of the full hybrid loss at 64-bit."""

import numpy as np

from .data import DatasetSpec, generate_dataset
from .gradcheck import finite_difference_check
from .losses import hybrid_loss
from .train import TrainConfig, batch_components, build_state


def micro_setup(seed=0, n_samples=2, dtype=np.float64):
    """Desk-scale model + a couple of synthetic samples, cast to dtype."""
    spec = DatasetSpec(n_train=max(n_samples, 2), n_test=2, seed=seed)
    dataset = generate_dataset(spec)
    config = TrainConfig(seed=seed, augment=False)
    state, prompts = build_state(config, dataset)
    state.astype(dtype)
    samples = dataset.train[:n_samples]
    return state, prompts, samples, config, spec


def full_model_gradcheck(seed=0, h=1e-5, tol=1e-4, max_coords_per_param=None,
                         directions_per_param=3, n_samples=2):
    """Finite-difference check of the full multitask loss through every
    parameter of the desk-scale model (random directional probes)."""
    state, prompts, samples, config, spec = micro_setup(seed=seed, n_samples=n_samples)

    def f():
        components, _ = batch_components(
            state, prompts, samples, config, step_seed=0, spec=spec)
        return hybrid_loss(components, config.weights)

    return finite_difference_check(
        f, state.params, h=h, tol=tol,
        max_coords_per_param=max_coords_per_param,
        directions_per_param=0 if max_coords_per_param else directions_per_param,
        seed=seed)
