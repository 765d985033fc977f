"""Training objectives over an indexed dataset.

Optimizers, the training harness and federated clients all talk to an
objective through one call, ``loss_and_grad(params, indices, training, key)``
returning ``(loss, grads, stat_updates)``.
"""

import numpy as np

from . import rng


class ModelObjective:
    """Mean cross-entropy of a :class:`~deepmedix.graph.ModelGraph` on ``images[indices]``."""

    def __init__(self, model, images, labels):
        if len(images) != len(labels):
            raise ValueError("images and labels differ in length")
        self.model = model
        self.images = images
        self.labels = np.asarray(labels)

    @property
    def num_samples(self):
        return len(self.labels)

    def loss_and_grad(self, params, indices, training=True, key=0):
        indices = np.asarray(indices)
        dtype = next(iter(params.values())).dtype
        x = self.images[indices].astype(dtype, copy=False)
        return self.model.loss_and_grad(params, x, self.labels[indices], training, key)


def epoch_batches(indices, batch_size, seed, stream, epoch):
    """Shuffled minibatches of ``indices`` for one epoch of stream ``stream``.

    Each batch comes with its own dropout key. Centralized training is
    stream 0; federated client ``k`` is stream ``k``, with ``epoch`` counting
    local epochs across rounds, so a single-client federation replays the
    centralized sequence exactly.
    """
    indices = np.asarray(indices)
    order = indices[rng.permutation(rng.derive(seed, "shuffle", stream, epoch), len(indices))]
    for b, start in enumerate(range(0, len(order), batch_size)):
        yield order[start:start + batch_size], rng.derive(seed, "step", stream, epoch, b)
