"""Federated averaging over simulated hospitals: IID shards vs label-skewed shards.

Each round every client runs one local epoch of SGD (lr 0.1) from the global
weights, and the server averages the results weighted by client sample count.
With one class per client (label skew) the averaged model stalls. Under a minute on one core.
"""

import numpy as np
from threadpoolctl import threadpool_limits

from deepmedix import data as dio
from deepmedix.architecture import BackboneSpec, build_variant
from deepmedix.federated import FederatedConfig, run_federated
from deepmedix.harness import accuracy
from deepmedix.objective import ModelObjective



def make(n, seed):
    spec = dio.SyntheticSpec(num_samples=n, image_size=(32, 32), num_classes=2, blob_sigma=(2.5, 4.0), seed=seed)
    x, y = dio.generate_synthetic(spec)
    return x.astype(np.float32), y


(x, y), (x_val, y_val) = make(800, 1), make(200, 2)
model = build_variant("DeepMediX", BackboneSpec(0.25, (32, 32, 3)), 2)
w0 = model.init_params(0, np.float32)
objective = ModelObjective(model, x, y)

for partitioner in ("iid", "label_skew"):
    config = FederatedConfig(clients=4, rounds=8, local_epochs=1, lr=0.1, batch_size=25,
                             partitioner=partitioner, shards_per_client=1)
    print(f"-- {partitioner}")
    with threadpool_limits(1):
        run_federated(config, objective, w0, eval_fn=lambda p: accuracy(model, p, x_val, y_val),
                      on_round=lambda r: print(f"round {r.round:2d}  clients {r.selected_ids}  "
                                               f"loss {r.train_loss:.4f}  val acc {r.val_accuracy:.3f}"))
