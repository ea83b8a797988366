"""Adam optimizer with bias correction and gradient accumulation helpers."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


class MissingGradient(RuntimeError):
    pass


@dataclass
class AdamState:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-6
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state, params, frozen=()):
    """One Adam update over a name->Tensor map.

    Frozen names are untouched; every other param must carry a grad.
    Grads are cleared after the step.
    """
    frozen = set(frozen)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name in frozen:
            continue
        if p.grad is None:
            raise MissingGradient(f"parameter '{name}' has no gradient")
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data = p.data - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    for name, p in params.items():
        if name not in frozen:
            p.grad = None


def accumulate_gradients(loss_fns, params):
    """Per-sample gradient accumulation equivalent to one mean-loss backward.

    Each entry of loss_fns builds and returns one sample's scalar loss; the
    per-sample losses are scaled by 1/k before backward so the seed entering
    each subgraph matches the mean-loss construction bit for bit. Per-sample
    grads are summed in reverse arrival order, mirroring the engine's
    reverse-insertion leaf accumulation.
    """
    k = len(loss_fns)
    per_sample = []
    values = []
    for fn in loss_fns:
        loss = T.scalar_mul(fn(), 1.0 / k)
        T.backward(loss)
        grads = {}
        for name, p in params.items():
            if p.requires_grad:
                grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
                p.grad = None
        per_sample.append(grads)
        values.append(float(loss.data) * k)
    for grads in reversed(per_sample):
        for name, g in grads.items():
            p = params[name]
            if p.grad is None:
                p.grad = g.copy()
            else:
                p.grad += g
    return values
