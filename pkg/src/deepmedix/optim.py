"""Losses and parameter-update rules over ParamSets.

Update rules are pure: they return new ParamSets and never modify their
inputs. Slots missing from a gradient dict are carried over untouched, which
is how frozen slots (and batch-norm running statistics) pass through.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

CLIP = 1e-7


def _clip(p):
    return np.clip(p, CLIP, 1.0 - CLIP)


def bce_loss(y, yhat):
    """Mean binary cross-entropy with probabilities clipped to ``[1e-7, 1 - 1e-7]``."""
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"label shape {y.shape} != prediction shape {yhat.shape}")
    p = _clip(yhat)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def bce_grad(y, yhat):
    """Gradient of :func:`bce_loss` w.r.t. ``yhat`` (zero where clipping is active)."""
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    p = _clip(yhat)
    g = (-(y / p) + (1 - y) / (1 - p)) / y.size
    return np.where(p == yhat, g, 0.0)


def cce_loss(y, yhat):
    """Mean categorical cross-entropy over rows of one-hot ``y``."""
    y, yhat = np.asarray(y), np.asarray(yhat)
    if y.shape != yhat.shape:
        raise ShapeError(f"label shape {y.shape} != prediction shape {yhat.shape}")
    if y.ndim == 1:
        y, yhat = y[None], yhat[None]
    logp = np.log(_clip(yhat.astype(np.float64)))
    return float(-(y * logp).sum() / y.shape[0])


def cce_grad(y, yhat):
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    n = y.shape[0] if y.ndim == 2 else 1
    p = _clip(yhat)
    return np.where(p == yhat, -y / p / n, 0.0)


def softmax_cce_grad(y, probs):
    """Gradient of mean CCE w.r.t. the logits feeding a softmax: ``(probs - y) / N``."""
    return (probs - y) / probs.shape[0]


def _check_shapes(w, grad):
    for k, g in grad.items():
        if k not in w:
            raise ShapeError(f"gradient for unknown slot {k!r}")
        if np.shape(g) != np.shape(w[k]):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(w[k])} for {k!r}")


def sgd_step(w, grad, lr):
    _check_shapes(w, grad)
    return {k: (v - lr * grad[k]).astype(v.dtype, copy=False) if k in grad else v
            for k, v in w.items()}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, w, **kw):
        return cls({k: np.zeros_like(a) for k, a in w.items()},
                   {k: np.zeros_like(a) for k, a in w.items()}, 0, **kw)


def adam_step(state: AdamState, w, grad):
    """One Adam update with bias-corrected moments; returns ``(new_state, new_w)``."""
    _check_shapes(w, grad)
    if state.t < 0:
        raise ValueError("Adam step counter must be non-negative")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    m, v, new_w = dict(state.m), dict(state.v), dict(w)
    for k, g in grad.items():
        m[k] = b1 * m[k] + (1 - b1) * g
        v[k] = b2 * v[k] + (1 - b2) * g * g
        mhat, vhat = m[k] / c1, v[k] / c2
        new_w[k] = (w[k] - state.alpha * mhat / (np.sqrt(vhat) + state.epsilon)).astype(w[k].dtype, copy=False)
    return AdamState(m, v, t, state.alpha, b1, b2, state.epsilon), new_w


@dataclass
class SvrgState:
    snapshot: dict
    full_grad: dict
    inner_steps: int = 0


def svrg_prepare(objective, w, indices, key=0):
    """Snapshot ``w`` and its full-batch gradient over ``indices`` (one pass)."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("SVRG needs a non-empty local dataset")
    _, g, _ = objective.loss_and_grad(w, indices, key=key)
    return SvrgState({k: v.copy() for k, v in w.items()}, g, 0)


def svrg_step(state: SvrgState, objective, w, batch, lr, key=0):
    """``w - lr * (grad_batch(w) - grad_batch(snapshot) + full_grad)``.

    The correction ``full_grad - grad_batch(snapshot)`` is formed first so a
    full-dataset batch reproduces plain gradient descent exactly. Returns
    ``(new_w, batch_loss, stat_updates)``.
    """
    loss, g, stats = objective.loss_and_grad(w, batch, key=key)
    _, g_snap, _ = objective.loss_and_grad(state.snapshot, batch, key=key)
    direction = {k: g[k] + (state.full_grad[k] - g_snap[k]) for k in g}
    state.inner_steps += 1
    return sgd_step(w, direction, lr), loss, stats


def reduce_lr(lr, factor=3.0):
    if factor <= 1:
        raise ValueError(f"reduction factor must exceed 1, got {factor}")
    return lr / factor
