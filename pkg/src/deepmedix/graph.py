"""Directed acyclic layer graphs with whole-graph forward and backward passes.

A :class:`ModelGraph` holds layer nodes in topological order. Parameters are
not stored on the graph: they live in a ParamSet (an ordered ``dict`` mapping
``"node/slot"`` to an array) that is passed to every call, which keeps the
graph itself immutable and makes parameter exchange a plain value copy.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ShapeError
from .layers import Layer, Softmax
from .ops import check_finite

INPUT = "input"


@dataclass(frozen=True)
class Node:
    name: str
    layer: Layer
    inputs: tuple


@dataclass
class Trace:
    """Per-node forward values and auxiliary data from one forward pass."""

    values: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)
    training: bool = False

    def stat_updates(self, model):
        """Running-statistic values produced in training mode, keyed like the ParamSet."""
        out = {}
        for name, aux in self.aux.items():
            if isinstance(aux, dict) and model.node(name).layer.kind == "batch_norm":
                for slot, value in aux.items():
                    out[f"{name}/{slot}"] = value
        return out


class GraphBuilder:
    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.nodes = []
        self._names = {INPUT}

    def add(self, name, layer, *inputs):
        if name in self._names:
            raise ValueError(f"duplicate node name {name!r}")
        if len(inputs) != layer.n_inputs:
            raise ValueError(f"{layer.kind} takes {layer.n_inputs} inputs, got {len(inputs)}")
        for i in inputs:
            if i not in self._names:
                raise ValueError(f"unknown input node {i!r} for {name!r}")
        self.nodes.append(Node(name, layer, tuple(inputs)))
        self._names.add(name)
        return name

    def build(self, output=None):
        return ModelGraph(self.input_shape, self.nodes, output or self.nodes[-1].name)


class ModelGraph:
    def __init__(self, input_shape, nodes, output):
        self.input_shape = tuple(input_shape)
        self.nodes = list(nodes)
        self.output = output
        self._by_name = {n.name: n for n in self.nodes}
        if output not in self._by_name:
            raise ValueError(f"output node {output!r} not in graph")
        self.slots = {}
        self._node_slots = {}
        for n in self.nodes:
            for slot, spec in n.layer.slots().items():
                self.slots[f"{n.name}/{slot}"] = spec
                self._node_slots.setdefault(n.name, []).append((slot, f"{n.name}/{slot}"))

    def node(self, name):
        return self._by_name[name]

    @property
    def trainable(self):
        return [k for k, s in self.slots.items() if s.trainable]

    def census(self, prefix=""):
        """Count of layer kinds among nodes whose name starts with ``prefix``."""
        return Counter(n.layer.kind for n in self.nodes if n.name.startswith(prefix))

    def count_params(self, prefix=""):
        return sum(int(np.prod(s.shape, dtype=np.int64)) for k, s in self.slots.items()
                   if s.trainable and k.startswith(prefix))

    def init_params(self, seed=0, dtype=np.float64):
        """He-uniform weights, zero biases/beta, unit gamma; bit-identical per seed."""
        params = {}
        for name, s in self.slots.items():
            if s.init == "he_uniform":
                limit = np.sqrt(6.0 / s.fan_in)
                u = rng.uniform(rng.derive(seed, "init", name), s.shape)
                params[name] = ((2.0 * u - 1.0) * limit).astype(dtype)
            elif s.init == "zeros":
                params[name] = np.zeros(s.shape, dtype)
            elif s.init == "ones":
                params[name] = np.ones(s.shape, dtype)
            else:
                raise ValueError(f"unknown init scheme {s.init!r}")
        return params

    def shapes(self, input_shape=None):
        """Per-sample output shape of every node."""
        shape = tuple(input_shape or self.input_shape)
        if any(d is None for d in shape):
            raise ShapeError(f"input shape {shape} is not fully static")
        out = {INPUT: shape}
        for n in self.nodes:
            out[n.name] = tuple(n.layer.output_shape([out[i] for i in n.inputs]))
        return out

    def _local(self, params, node):
        return {slot: params[full] for slot, full in self._node_slots.get(node.name, ())}

    def run(self, params, x, training=False, key=0, stop=None):
        """Forward pass over a batch, returning a :class:`Trace`.

        Dropout masks for node ``n`` come from the stream ``derive(key, n)``.
        """
        x = np.asarray(x)
        expected = self.input_shape
        if x.ndim != len(expected) + 1 or any(e is not None and e != d for e, d in zip(expected, x.shape[1:])):
            raise ShapeError(f"batch shape {x.shape} does not match input {expected}")
        trace = Trace({INPUT: x}, {}, training)
        for n in self.nodes:
            xs = [trace.values[i] for i in n.inputs]
            y, aux = n.layer.forward(xs, self._local(params, n), training, rng.derive(key, n.name))
            check_finite(y, f"node {n.name!r}")
            trace.values[n.name] = y
            if aux is not None:
                trace.aux[n.name] = aux
            if n.name == stop:
                break
        return trace

    def forward(self, params, x, training=False, key=0):
        return self.run(params, x, training, key).values[self.output]

    def backward(self, params, trace, seeds):
        """Reverse-mode pass from ``seeds`` (``{node: upstream gradient}``).

        Returns ``(param_grads, input_grad)``; ``input_grad`` is ``None`` if
        no gradient reaches the input.
        """
        grads = {k: v for k, v in seeds.items()}
        pgrads = {}
        for n in reversed(self.nodes):
            gy = grads.pop(n.name, None)
            if gy is None:
                continue
            xs = [trace.values[i] for i in n.inputs]
            gxs, gp = n.layer.backward(gy, xs, trace.values[n.name], trace.aux.get(n.name),
                                       self._local(params, n), trace.training)
            for slot, g in gp.items():
                pgrads[f"{n.name}/{slot}"] = g
            for i, g in zip(n.inputs, gxs):
                grads[i] = g if i not in grads else grads[i] + g
        ordered = {k: pgrads[k] for k in self.slots if k in pgrads}
        return ordered, grads.get(INPUT)

    def logits_node(self):
        out = self.node(self.output)
        if not isinstance(out.layer, Softmax):
            raise ValueError("loss requires a graph ending in a softmax node")
        return out.inputs[0]

    def loss_and_grad(self, params, x, labels, training=True, key=0):
        """Mean categorical cross-entropy and its gradients.

        The gradient enters the graph at the softmax input through the fused
        expression ``(probs - onehot) / B``. Returns
        ``(loss, grads, stat_updates)`` where ``stat_updates`` carries the new
        batch-norm running statistics (empty in eval mode).
        """
        from .optim import cce_loss

        labels = np.asarray(labels)
        logits_name = self.logits_node()
        trace = self.run(params, x, training, key)
        probs = trace.values[self.output]
        k = probs.shape[-1]
        if labels.shape != (probs.shape[0],):
            raise ShapeError(f"labels shape {labels.shape} != ({probs.shape[0]},)")
        if np.any(labels < 0) or np.any(labels >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        onehot = np.eye(k, dtype=probs.dtype)[labels]
        loss = cce_loss(onehot, probs)
        seed = (probs - onehot) / probs.dtype.type(probs.shape[0])
        grads, _ = self.backward(params, trace, {logits_name: seed})
        return loss, grads, trace.stat_updates(self)

    def compose(self, head, prefix_self="base", prefix_head="head"):
        """``head ∘ self``: the head's input is wired to this graph's output."""
        def rename(name, prefix):
            return f"{prefix}.{name}"

        nodes = [Node(rename(n.name, prefix_self), n.layer,
                      tuple(INPUT if i == INPUT else rename(i, prefix_self) for i in n.inputs))
                 for n in self.nodes]
        base_out = rename(self.output, prefix_self)
        nodes += [Node(rename(n.name, prefix_head), n.layer,
                       tuple(base_out if i == INPUT else rename(i, prefix_head) for i in n.inputs))
                  for n in head.nodes]
        return ModelGraph(self.input_shape, nodes, rename(head.output, prefix_head))
