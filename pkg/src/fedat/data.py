"""Synthetic Gaussian-blob classification data split across clients by label shards."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Batch


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    train: Batch
    test: Batch

    @property
    def n_k(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class FederatedDataset:
    clients: tuple[ClientShard, ...]
    num_classes: int
    feature_dim: int
    seed: int = 0

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def client(self, client_id: int) -> ClientShard:
        return self.clients[client_id]

    def train_union(self) -> Batch:
        return Batch(np.concatenate([c.train.x for c in self.clients]),
                     np.concatenate([c.train.y for c in self.clients]))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.num_classes}:{self.feature_dim}:{self.num_clients}".encode())
        for c in self.clients:
            for arr in (c.train.x, c.train.y, c.test.x, c.test.y):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _client_sizes(samples_per_client, num_clients, size_skew, classes_per_client, rng):
    if size_skew <= 0:
        return np.full(num_clients, samples_per_client, dtype=np.int64)
    # lognormal skew around the nominal size; at least 5 samples per class shard
    raw = samples_per_client * np.exp(size_skew * rng.standard_normal(num_clients))
    return np.maximum(np.rint(raw).astype(np.int64), 5 * classes_per_client)


def generate(num_classes: int = 10, feature_dim: int = 32, samples_per_client: int = 200,
             num_clients: int = 100, classes_per_client: int = 2, seed: int = 0,
             scale: float = 3.0, size_skew: float = 0.0) -> FederatedDataset:
    """Draw class-conditional blobs and hand out label shards.

    Shards are laid out in label order (``num_clients * classes_per_client`` of them,
    spread as evenly as possible over the classes). Client slot ``j`` owns shards
    ``j, j + K, j + 2K, ...`` which always lie in distinct classes, so every client
    sees exactly ``classes_per_client`` labels. Slots are shuffled onto client ids.
    Each shard is split 80/20 into train/test.
    """
    if not 1 <= classes_per_client <= num_classes:
        raise PartitionError(
            f"classes_per_client must be in [1, {num_classes}], got {classes_per_client}")
    if num_clients < 1 or feature_dim < 1:
        raise PartitionError("need at least one client and one feature")
    if samples_per_client < 5 * classes_per_client:
        raise PartitionError(
            f"{samples_per_client} samples cannot fill {classes_per_client} label shards "
            "with a nonempty 80/20 split")

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((num_classes, feature_dim))
    means = scale * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    sizes = _client_sizes(samples_per_client, num_clients, size_skew, classes_per_client, rng)
    slot_of_client = rng.permutation(num_clients)

    total_shards = num_clients * classes_per_client
    clients = []
    for client_id in range(num_clients):
        slot = int(slot_of_client[client_id])
        n = int(sizes[client_id])
        per_shard = np.full(classes_per_client, n // classes_per_client)
        per_shard[: n % classes_per_client] += 1  # leftovers round-robin
        xs_tr, ys_tr, xs_te, ys_te = [], [], [], []
        for i in range(classes_per_client):
            shard = slot + i * num_clients
            label = shard * num_classes // total_shards
            m = int(per_shard[i])
            x = means[label] + rng.standard_normal((m, feature_dim))
            n_train = (4 * m) // 5
            xs_tr.append(x[:n_train])
            xs_te.append(x[n_train:])
            ys_tr.append(np.full(n_train, label))
            ys_te.append(np.full(m - n_train, label))
        train = Batch(np.concatenate(xs_tr), np.concatenate(ys_tr))
        test = Batch(np.concatenate(xs_te), np.concatenate(ys_te))
        order = rng.permutation(len(train))
        clients.append(ClientShard(client_id, train.take(order), test))
    return FederatedDataset(tuple(clients), num_classes, feature_dim, seed)


def global_test_set(ds: FederatedDataset) -> Batch:
    return Batch(np.concatenate([c.test.x for c in ds.clients]),
                 np.concatenate([c.test.y for c in ds.clients]))


def save_dataset(ds: FederatedDataset, path) -> None:
    """JSON export; float repr round-trips exactly so reloads are bitwise equal."""
    doc = {
        "header": {"num_classes": ds.num_classes, "feature_dim": ds.feature_dim,
                   "seed": ds.seed, "num_clients": ds.num_clients},
        "clients": [
            {"client_id": c.client_id,
             "train_x": c.train.x.tolist(), "train_y": c.train.y.tolist(),
             "test_x": c.test.x.tolist(), "test_y": c.test.y.tolist()}
            for c in ds.clients
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_dataset(path) -> FederatedDataset:
    doc = json.loads(Path(path).read_text())
    head = doc["header"]
    d = head["feature_dim"]

    def batch(x, y):
        return Batch(np.asarray(x, dtype=np.float64).reshape(-1, d), np.asarray(y))

    clients = tuple(
        ClientShard(c["client_id"], batch(c["train_x"], c["train_y"]),
                    batch(c["test_x"], c["test_y"]))
        for c in doc["clients"]
    )
    return FederatedDataset(clients, head["num_classes"], d, head["seed"])
