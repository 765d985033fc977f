"""Finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from . import rng


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list = field(default_factory=list)
    checked: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-8):
    """``|a - n| / max(|a|, |n|, floor)``, elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _coords(size, max_coords, key):
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    return rng.choice(key, size, max_coords)


def numeric_gradient(scalar_fn, x, eps=1e-5, coords=None):
    """Central differences of ``scalar_fn`` w.r.t. the entries of ``x`` (modified in place, then restored)."""
    flat = x.reshape(-1)
    coords = np.arange(flat.size) if coords is None else coords
    out = np.zeros(len(coords))
    for n, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + eps
        fp = scalar_fn()
        flat[i] = orig - eps
        fm = scalar_fn()
        flat[i] = orig
        out[n] = (fp - fm) / (2 * eps)
    return out


def grad_check(fn, inputs, backward, tolerance=1e-4, eps=1e-5, seed=0,
               max_coords=None, floor=1e-8):
    """Compare ``backward`` against central differences of ``fn``.

    ``fn(*inputs)`` returns an array ``y``; ``backward(g, *inputs)`` returns
    one gradient per input (``None`` for inputs to skip). The op is reduced
    to a scalar with a fixed random upstream ``g``: ``L = sum(g * y)``.
    Inputs must be float64.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    y = np.asarray(fn(*inputs))
    upstream = rng.normal(rng.derive(seed, "upstream"), y.shape) if y.shape else np.float64(1.0)
    analytic = backward(upstream, *inputs)
    if not isinstance(analytic, (tuple, list)):
        analytic = (analytic,)

    def loss():
        return float(np.sum(upstream * fn(*inputs)))

    worst, per_input, checked = 0.0, [], 0
    for idx, (x, g) in enumerate(zip(inputs, analytic)):
        if g is None:
            per_input.append(None)
            continue
        coords = _coords(x.size, max_coords, rng.derive(seed, "coords", idx))
        num = numeric_gradient(loss, x, eps, coords)
        err = relative_error(np.asarray(g, dtype=np.float64).reshape(-1)[coords], num, floor)
        e = float(err.max()) if err.size else 0.0
        per_input.append(e)
        worst = max(worst, e)
        checked += len(coords)
    return GradCheckReport(worst, per_input, checked, tolerance)
