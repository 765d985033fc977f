"""Static cost model and the input-space pullback metric ``G(x) = J(x)^T J(x)``."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .graph import INPUT

FLOP_CONVENTION = ("multiply-add = 2 FLOPs; conv 2*K^2*C_in*H_out*W_out*C_out (C_in -> 1 for depthwise); "
                   "dense 2*d_in*d_out + d_out; batch-norm 4/element; relu and add 1/element; "
                   "pooling HW per channel (avg) or HW-1 (max); softmax 3k-1; dropout/flatten/concat 0")


@dataclass
class CostRow:
    name: str
    kind: str
    output_shape: tuple
    flops: int
    params: int


@dataclass
class CostReport:
    rows: list
    input_shape: tuple
    convention: str = FLOP_CONVENTION

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["name", "kind", "output_shape", "flops", "params"])
        for r in self.rows:
            w.writerow([r.name, r.kind, "x".join(map(str, r.output_shape)), r.flops, r.params])
        w.writerow(["TOTAL", "", "", self.total_flops, self.total_params])
        return buf.getvalue()

    def to_text(self):
        lines = [f"{'layer':<34} {'kind':<16} {'output':>14} {'FLOPs':>14} {'params':>10}"]
        for r in self.rows:
            shape = "x".join(map(str, r.output_shape))
            lines.append(f"{r.name:<34} {r.kind:<16} {shape:>14} {r.flops:>14,} {r.params:>10,}")
        lines.append(f"{'TOTAL':<34} {'':<16} {'':>14} {self.total_flops:>14,} {self.total_params:>10,}")
        lines.append(f"= {self.total_flops / 1e9:.4f} GFLOPs per sample ({self.convention})")
        return "\n".join(lines)


def count_flops(model, input_shape=None):
    """Per-sample forward cost of every node of ``model``."""
    shapes = model.shapes(input_shape)
    rows = []
    for n in model.nodes:
        out = shapes[n.name]
        flops = n.layer.flops([shapes[i] for i in n.inputs], out)
        nparams = sum(int(np.prod(s.shape)) for s in n.layer.slots().values() if s.trainable)
        rows.append(CostRow(n.name, n.layer.kind, out, int(flops), nparams))
    return CostReport(rows, shapes[INPUT])


def jacobian(model, params, x):
    """``k x n`` Jacobian of the model output at a single sample ``x`` (eval mode).

    Row ``i`` is the gradient of output ``i`` w.r.t. the flattened input,
    obtained with one backward pass per output.
    """
    x = np.asarray(x)
    trace = model.run(params, x[None], training=False)
    y = trace.values[model.output]
    k = y.shape[-1]
    rows = []
    for i in range(k):
        seed = np.zeros_like(y)
        seed[0, i] = 1.0
        _, gx = model.backward(params, trace, {model.output: seed})
        if gx is None:
            gx = np.zeros_like(x[None])
        rows.append(gx.reshape(-1))
    J = np.stack(rows)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite Jacobian")
    return J


@dataclass
class PullbackMetric:
    base_point: np.ndarray
    G: np.ndarray
    jacobian: np.ndarray = field(repr=False, default=None)

    def form(self, u, v):
        return metric_form(self.G, u, v)


def pullback_metric(model, params, x):
    J = jacobian(model, params, x)
    return PullbackMetric(np.asarray(x), J.T @ J, J)


def metric_form(G, u, v):
    """``u^T G v``."""
    u, v = np.ravel(u), np.ravel(v)
    n = G.shape[0]
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"vectors must have length {n}")
    return float(u @ G @ v)


def top_eigenvalues(G, count=1, tol=1e-8, max_iter=10_000, seed=0):
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation.

    Returns ``(values, vectors)`` with vectors as columns.
    """
    from . import rng

    n = G.shape[0]
    A = np.array(G, dtype=np.float64)
    values, vectors = [], []
    for j in range(min(count, n)):
        v = rng.normal(rng.derive(seed, "power", j), n)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = A @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam = 0.0
                break
            w /= norm
            new_lam = float(w @ A @ w)
            converged = abs(new_lam - lam) <= tol * max(1.0, abs(new_lam))
            v, lam = w, new_lam
            if converged:
                break
        values.append(lam)
        vectors.append(v)
        A = A - lam * np.outer(v, v)
    return np.array(values), np.stack(vectors, axis=1)


def pullback_spectrum(model, params, x, count=5):
    """Leading eigenvalues of ``G(x)`` without forming the ``n x n`` matrix.

    ``J^T J`` and ``J J^T`` share their non-zero eigenvalues, and the latter
    is only ``k x k``.
    """
    J = jacobian(model, params, x)
    vals, _ = top_eigenvalues(J @ J.T, count)
    return {"dimension": int(J.shape[1]), "rank_bound": int(J.shape[0]),
            "top_eigenvalues": vals.tolist(), "trace": float(np.sum(J * J))}
