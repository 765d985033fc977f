"""Graph-node layers wrapping the primitive ops.

A layer declares its parameter slots, infers per-sample output shapes, runs
forward/backward on batches and reports its per-sample FLOP cost. FLOPs use
the multiply-add = 2 convention.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import BatchNormState, ConvSpec, DropoutSpec


@dataclass(frozen=True)
class Slot:
    shape: tuple
    init: str  # "he_uniform" | "zeros" | "ones"
    fan_in: int = 1
    trainable: bool = True


def _numel(shape):
    return int(np.prod(shape, dtype=np.int64))


class Layer:
    kind = "layer"
    n_inputs = 1

    def slots(self):
        return {}

    def output_shape(self, in_shapes):
        return in_shapes[0]

    def forward(self, xs, p, training, key):
        """Return ``(y, aux)``; ``aux`` is handed back to :meth:`backward`."""
        raise NotImplementedError

    def backward(self, gy, xs, y, aux, p, training):
        """Return ``(input_grads, param_grads)``."""
        raise NotImplementedError

    def flops(self, in_shapes, out_shape):
        return 0

    def describe(self):
        return {"kind": self.kind}


class Conv(Layer):
    """Standard, pointwise or depthwise convolution (optional bias)."""

    def __init__(self, spec: ConvSpec, bias=False):
        self.spec = spec
        self.bias = bias
        self.kind = "depthwise_conv" if spec.mode == "depthwise" else "conv"

    def slots(self):
        s = self.spec
        fan_in = s.kernel_size ** 2 * (1 if s.mode == "depthwise" else s.in_channels)
        out = {"kernel": Slot(s.kernel_shape, "he_uniform", fan_in)}
        if self.bias:
            out["bias"] = Slot((s.out_channels,), "zeros")
        return out

    def output_shape(self, in_shapes):
        h, w, c = in_shapes[0]
        if c != self.spec.in_channels:
            raise ShapeError(f"conv expects {self.spec.in_channels} channels, got {c}")
        ho, wo = self.spec.output_hw(h, w)
        return (ho, wo, self.spec.out_channels)

    def forward(self, xs, p, training, key):
        return ops.conv2d(xs[0], self.spec, p["kernel"], p.get("bias")), None

    def backward(self, gy, xs, y, aux, p, training):
        gx, gk, gb = ops.conv2d_backward(gy, xs[0], self.spec, p["kernel"], self.bias)
        grads = {"kernel": gk}
        if self.bias:
            grads["bias"] = gb
        return [gx], grads

    def flops(self, in_shapes, out_shape):
        s = self.spec
        ho, wo, n = out_shape
        per_out = 2 * s.kernel_size ** 2 * (1 if s.mode == "depthwise" else s.in_channels)
        return per_out * ho * wo * n + (ho * wo * n if self.bias else 0)

    def describe(self):
        s = self.spec
        return {"kind": self.kind, "kernel_size": s.kernel_size, "stride": s.stride,
                "in_channels": s.in_channels, "out_channels": s.out_channels,
                "padding": s.padding, "mode": s.mode}


class Dense(Layer):
    kind = "dense"

    def __init__(self, d_in, d_out):
        self.d_in, self.d_out = d_in, d_out

    def slots(self):
        return {"weight": Slot((self.d_in, self.d_out), "he_uniform", self.d_in),
                "bias": Slot((self.d_out,), "zeros")}

    def output_shape(self, in_shapes):
        if in_shapes[0] != (self.d_in,):
            raise ShapeError(f"dense expects ({self.d_in},), got {in_shapes[0]}")
        return (self.d_out,)

    def forward(self, xs, p, training, key):
        return ops.dense(xs[0], p["weight"], p["bias"]), None

    def backward(self, gy, xs, y, aux, p, training):
        gx, gw, gb = ops.dense_backward(gy, xs[0], p["weight"])
        return [gx], {"weight": gw, "bias": gb}

    def flops(self, in_shapes, out_shape):
        return 2 * self.d_in * self.d_out + self.d_out

    def describe(self):
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out}


class ReLU(Layer):
    kind = "relu"

    def forward(self, xs, p, training, key):
        return ops.relu(xs[0]), None

    def backward(self, gy, xs, y, aux, p, training):
        return [ops.relu_backward(gy, xs[0])], {}

    def flops(self, in_shapes, out_shape):
        return _numel(out_shape)


class BatchNorm(Layer):
    """Batch normalization; running statistics live in non-trainable slots."""

    kind = "batch_norm"

    def __init__(self, channels, epsilon=1e-5, momentum=0.9):
        self.channels, self.epsilon, self.momentum = channels, epsilon, momentum

    def slots(self):
        c = (self.channels,)
        return {"gamma": Slot(c, "ones"), "beta": Slot(c, "zeros"),
                "running_mean": Slot(c, "zeros", trainable=False),
                "running_var": Slot(c, "ones", trainable=False)}

    def output_shape(self, in_shapes):
        if in_shapes[0][-1] != self.channels:
            raise ShapeError(f"batch-norm expects {self.channels} channels, got {in_shapes[0][-1]}")
        return in_shapes[0]

    def _state(self, p):
        return BatchNormState(p["gamma"], p["beta"], p["running_mean"], p["running_var"],
                              self.epsilon, self.momentum)

    def forward(self, xs, p, training, key):
        y, state = ops.batch_norm(xs[0], self._state(p), training)
        aux = {"running_mean": state.running_mean, "running_var": state.running_var} if training else None
        return y, aux

    def backward(self, gy, xs, y, aux, p, training):
        gx, gg, gb = ops.batch_norm_backward(gy, xs[0], self._state(p), training)
        return [gx], {"gamma": gg, "beta": gb}

    def flops(self, in_shapes, out_shape):
        return 4 * _numel(out_shape)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        DropoutSpec(rate)
        self.rate = rate

    def forward(self, xs, p, training, key):
        return ops.dropout(xs[0], DropoutSpec(self.rate, training, key))

    def backward(self, gy, xs, y, aux, p, training):
        return [ops.dropout_backward(gy, aux)], {}

    def describe(self):
        return {"kind": self.kind, "rate": self.rate}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shapes):
        return (in_shapes[0][-1],)

    def forward(self, xs, p, training, key):
        return ops.global_avg_pool(xs[0]), None

    def backward(self, gy, xs, y, aux, p, training):
        return [ops.global_avg_pool_backward(gy, xs[0])], {}

    def flops(self, in_shapes, out_shape):
        h, w, c = in_shapes[0]
        return h * w * c  # (HW-1) adds + 1 multiply per channel


class GlobalMaxPool(Layer):
    kind = "global_max_pool"

    def output_shape(self, in_shapes):
        return (in_shapes[0][-1],)

    def forward(self, xs, p, training, key):
        return ops.global_max_pool(xs[0]), None

    def backward(self, gy, xs, y, aux, p, training):
        return [ops.global_max_pool_backward(gy, xs[0])], {}

    def flops(self, in_shapes, out_shape):
        h, w, c = in_shapes[0]
        return (h * w - 1) * c


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shapes):
        return (_numel(in_shapes[0]),)

    def forward(self, xs, p, training, key):
        x = xs[0]
        return x.reshape(x.shape[0], -1), None

    def backward(self, gy, xs, y, aux, p, training):
        return [gy.reshape(xs[0].shape)], {}


class Add(Layer):
    kind = "add"
    n_inputs = 2

    def output_shape(self, in_shapes):
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"cannot add shapes {in_shapes[0]} and {in_shapes[1]}")
        return in_shapes[0]

    def forward(self, xs, p, training, key):
        return xs[0] + xs[1], None

    def backward(self, gy, xs, y, aux, p, training):
        return [gy, gy], {}

    def flops(self, in_shapes, out_shape):
        return _numel(out_shape)


class Concat(Layer):
    kind = "concat"
    n_inputs = 2

    def output_shape(self, in_shapes):
        a, b = in_shapes
        if len(a) != 1 or len(b) != 1:
            raise ShapeError(f"concat needs rank-1 inputs, got {a} and {b}")
        return (a[0] + b[0],)

    def forward(self, xs, p, training, key):
        return ops.concat(xs[0], xs[1]), None

    def backward(self, gy, xs, y, aux, p, training):
        ga, gb = ops.concat_backward(gy, xs[0].shape[-1])
        return [ga, gb], {}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, xs, p, training, key):
        return ops.softmax(xs[0]), None

    def backward(self, gy, xs, y, aux, p, training):
        return [ops.softmax_backward(gy, y)], {}

    def flops(self, in_shapes, out_shape):
        k = _numel(out_shape)
        return 3 * k - 1  # k exp, k-1 adds, k divides
