"""Single-process federated averaging with SGD or SVRG local updates.

Only ParamSets, sample counts and scalar losses cross the client/server
boundary: :class:`ClientUpdate` and :class:`ServerState` never hold data.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import params as ps
from . import rng
from .errors import ConfigError
from .objective import epoch_batches
from .optim import sgd_step, svrg_prepare, svrg_step


@dataclass
class FederatedConfig:
    clients: int = 4
    fraction: float = 1.0
    local_epochs: int = 1
    lr: float = 0.1
    method: str = "sgd"
    rounds: int = 10
    batch_size: int = 32
    seed: int = 0
    local_mode: str = "epochs"
    aggregation: str = "model"
    partitioner: str = "iid"
    shards_per_client: int = 2

    def __post_init__(self):
        if self.clients < 1:
            raise ConfigError("need at least one client")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"participation fraction must be in (0, 1], got {self.fraction}")
        if self.local_epochs < 0 or self.rounds < 0:
            raise ConfigError("local_epochs and rounds must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.method not in ("sgd", "svrg"):
            raise ConfigError(f"unknown local method {self.method!r}")
        if self.local_mode not in ("epochs", "steps"):
            raise ConfigError(f"unknown local mode {self.local_mode!r}")
        if self.aggregation not in ("model", "delta"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.partitioner not in ("iid", "label_skew"):
            raise ConfigError(f"unknown partitioner {self.partitioner!r}")

    @property
    def clients_per_round(self):
        return max(1, math.ceil(self.clients * self.fraction - 1e-12))


@dataclass
class ClientState:
    client_id: int
    partition: np.ndarray

    def __post_init__(self):
        self.partition = np.asarray(self.partition)
        if self.partition.size == 0:
            raise ValueError(f"client {self.client_id} has an empty partition")

    @property
    def n_k(self):
        return len(self.partition)


@dataclass
class ClientUpdate:
    client_id: int
    params: dict
    n_k: int
    train_loss: float = float("nan")


@dataclass
class ServerState:
    params: dict
    round: int = 0


@dataclass
class RoundReport:
    round: int
    selected_ids: list
    train_loss: float
    val_accuracy: float = float("nan")
    wall_ms: float = 0.0


@dataclass
class FederatedResult:
    server: ServerState
    history: list = field(default_factory=list)

    @property
    def params(self):
        return self.server.params


def _split_sizes(n, k):
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def partition_iid(n, k, seed=0):
    """Random disjoint partitions of ``range(n)`` whose sizes differ by at most one."""
    if n < k:
        raise ValueError(f"cannot split {n} samples over {k} clients")
    perm = rng.permutation(rng.derive(seed, "partition_iid"), n)
    out, start = [], 0
    for size in _split_sizes(n, k):
        out.append(np.sort(perm[start:start + size]))
        start += size
    return out


def partition_label_skew(labels, k, shards_per_client=2, seed=0):
    """Sort by label, cut into ``k * shards_per_client`` shards, deal shards to clients."""
    labels = np.asarray(labels)
    n_shards = k * shards_per_client
    if len(labels) < n_shards:
        raise ValueError(f"{len(labels)} samples cannot form {n_shards} shards")
    by_label = np.argsort(labels, kind="stable")
    shards, start = [], 0
    for size in _split_sizes(len(labels), n_shards):
        shards.append(by_label[start:start + size])
        start += size
    order = rng.permutation(rng.derive(seed, "partition_shards"), n_shards)
    return [np.sort(np.concatenate([shards[s] for s in order[i * shards_per_client:(i + 1) * shards_per_client]]))
            for i in range(k)]


def make_clients(partitions):
    return [ClientState(i, p) for i, p in enumerate(partitions)]


def select_clients(config: FederatedConfig, round_index):
    key = rng.derive(config.seed, "select", round_index)
    return [int(i) for i in rng.choice(key, config.clients, config.clients_per_round)]


def broadcast(server: ServerState, selected):
    """Independent copies of the global ParamSet, one per selected client id."""
    if len(selected) == 0:
        raise ValueError("broadcast needs at least one selected client")
    return {cid: ps.copy(server.params) for cid in selected}


def local_update(client: ClientState, w, objective, config: FederatedConfig, round_index=0):
    """Run the client's local optimization from ``w``; returns a :class:`ClientUpdate`.

    In ``epochs`` mode ``local_epochs`` full passes are made; in ``steps``
    mode ``local_epochs`` counts minibatch steps. SVRG snapshots ``w`` and
    its full local gradient once per round.
    """
    e_count = config.local_epochs
    if e_count == 0:
        return ClientUpdate(client.client_id, ps.copy(w), client.n_k)
    seed, cid = config.seed, client.client_id
    svrg = None
    if config.method == "svrg":
        svrg = svrg_prepare(objective, w, client.partition, key=rng.derive(seed, "svrg", cid, round_index))

    losses, seen = [], 0
    epoch = round_index * e_count
    while True:
        for batch, key in epoch_batches(client.partition, config.batch_size, seed, cid, epoch):
            if svrg is None:
                loss, grads, stats = objective.loss_and_grad(w, batch, key=key)
                w = sgd_step(w, grads, config.lr)
            else:
                w, loss, stats = svrg_step(svrg, objective, w, batch, config.lr, key=key)
            w = ps.merge(w, stats)
            losses.append(loss * len(batch))
            seen += len(batch)
            if config.local_mode == "steps" and len(losses) >= e_count:
                break
        epoch += 1
        if config.local_mode == "steps":
            if len(losses) >= e_count:
                break
        elif epoch >= (round_index + 1) * e_count:
            break
    return ClientUpdate(cid, w, client.n_k, float(sum(losses) / seen))


def _ordered(updates):
    if not updates:
        raise ValueError("aggregation needs at least one update")
    if isinstance(updates[0], ClientUpdate):
        updates = sorted(updates, key=lambda u: u.client_id)
        return [(u.params, u.n_k) for u in updates]
    return list(updates)


def _weighted_sum(pairs, denom):
    keys = pairs[0][0].keys()
    for w, _ in pairs:
        if w.keys() != keys:
            raise ValueError("updates have different parameter slots")
    out = {}
    for k in keys:
        ref = pairs[0][0][k]
        acc = np.zeros(ref.shape, dtype=np.float64)
        for w, n in pairs:
            if w[k].shape != ref.shape:
                raise ValueError(f"shape mismatch for slot {k!r}")
            acc += (n / denom) * w[k]
        out[k] = acc.astype(ref.dtype)
    return out


def aggregate(updates):
    """Sample-weighted mean ``sum(n_k w_k) / sum(n_k)``, summed in ascending client id."""
    pairs = _ordered(updates)
    total = sum(n for _, n in pairs)
    if total <= 0:
        raise ValueError("total sample count must be positive")
    return _weighted_sum(pairs, total)


def aggregate_delta(base, updates, total=None):
    """``base + (1/N) sum(n_k * delta_k)``.

    ``total`` is N; it defaults to the sum over the given updates. Passing the
    sample count of *all* clients under partial participation shrinks the step
    by the participation ratio.
    """
    pairs = _ordered(updates)
    total = sum(n for _, n in pairs) if total is None else total
    delta = _weighted_sum(pairs, total)
    return {k: (base[k] + delta[k]).astype(base[k].dtype) for k in base}


def run_round(server: ServerState, clients, objective, config: FederatedConfig, eval_fn=None):
    """One round: select, broadcast, local updates, aggregate, increment the round."""
    t0 = time.perf_counter()
    selected = select_clients(config, server.round)
    copies = broadcast(server, selected)
    by_id = {c.client_id: c for c in clients}
    updates = [local_update(by_id[cid], copies[cid], objective, config, server.round) for cid in selected]
    if config.aggregation == "model":
        new = aggregate(updates)
    else:
        deltas = [ClientUpdate(u.client_id, {k: u.params[k] - server.params[k] for k in u.params}, u.n_k)
                  for u in updates]
        new = aggregate_delta(server.params, deltas, total=sum(c.n_k for c in clients))
    n_sel = sum(u.n_k for u in updates)
    train_loss = sum(u.train_loss * u.n_k for u in updates) / n_sel
    next_server = ServerState(new, server.round + 1)
    val = eval_fn(new) if eval_fn is not None else float("nan")
    report = RoundReport(server.round + 1, selected, float(train_loss), float(val),
                         (time.perf_counter() - t0) * 1000.0)
    return next_server, report


def run_federated(config: FederatedConfig, objective, initial_params, eval_fn=None, partitions=None,
                  on_round=None):
    """Run ``config.rounds`` rounds from ``initial_params``; returns a :class:`FederatedResult`."""
    if partitions is None:
        if config.partitioner == "iid":
            partitions = partition_iid(objective.num_samples, config.clients, config.seed)
        else:
            partitions = partition_label_skew(objective.labels, config.clients,
                                              config.shards_per_client, config.seed)
    if len(partitions) != config.clients:
        raise ConfigError("number of partitions does not match the client count")
    clients = make_clients(partitions)
    server = ServerState(ps.copy(initial_params), 0)
    history = []
    for _ in range(config.rounds):
        server, report = run_round(server, clients, objective, config, eval_fn)
        history.append(report)
        if on_round is not None:
            on_round(report)
    return FederatedResult(server, history)


ROUND_FIELDS = ("round", "selected_ids", "train_loss", "val_accuracy", "wall_ms")


def write_rounds_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ROUND_FIELDS)
        for r in history:
            w.writerow([r.round, ";".join(map(str, r.selected_ids)), repr(r.train_loss),
                        repr(r.val_accuracy), f"{r.wall_ms:.3f}"])
