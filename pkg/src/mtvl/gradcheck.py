"""Central finite-difference verification of analytic gradients.

Run at 64-bit only; finite differences are unreliable at 32-bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)
    checked_coords: int = 0

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel error {self.max_rel_error:.3e} "
            f"(tol {self.tol:.1e}, {self.checked_coords} coords)"
        )


def _rel_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_difference_check(f, params, h=1e-5, tol=1e-6, max_coords_per_param=None,
                            directions_per_param=0, seed=0):
    """Compare analytic gradients of scalar f() against central differences.

    params: name -> Tensor (float64, requires_grad). f must be a
    deterministic closure over them. When max_coords_per_param is set, a
    seeded random subset of coordinates is checked per parameter; otherwise
    all coordinates are. directions_per_param > 0 switches to random unit
    directional probes (per parameter) instead of single coordinates, which
    keeps the finite-difference signal well above roundoff on large models
    whose individual coordinates can carry vanishing gradients.
    Report-only: never raises on mismatch.
    """
    rng = np.random.default_rng(seed)
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck requires float64 params, '{name}' is {p.dtype}")
        p.grad = None

    loss = f()
    T.backward(loss)
    analytic = {}
    for name, p in params.items():
        analytic[name] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        p.grad = None

    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    if directions_per_param:
        for name, p in params.items():
            worst = 0.0
            base = p.data.copy()
            for _ in range(directions_per_param):
                v = rng.standard_normal(p.data.shape)
                v /= np.linalg.norm(v.reshape(-1))
                p.data = base + h * v
                with T.no_grad():
                    fp = float(f().data)
                p.data = base - h * v
                with T.no_grad():
                    fm = float(f().data)
                p.data = base
                numeric = (fp - fm) / (2.0 * h)
                a = float((analytic[name] * v).sum())
                worst = max(worst, _rel_error(a, numeric))
                report.checked_coords += 1
            report.per_param[name] = worst
            report.max_rel_error = max(report.max_rel_error, worst)
        return report

    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            coords = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            coords = range(n_coords)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            with T.no_grad():
                fp = float(f().data)
            flat[i] = orig - h
            with T.no_grad():
                fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_error(a_flat[i], numeric))
            report.checked_coords += 1
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
