"""Flat-parameter models, the proximal local objective and the client solver.

Two architectures are supported and are told apart by the layer manifest of a
:class:`ParamVector`:

* multinomial logistic regression, shapes ``((d, C), (C,))``
* one-hidden-layer tanh MLP, shapes ``((d, H), (H,), (H, C), (C,))``
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATIONARY = -1.0
"""Returned by :func:`gamma_inexactness` when the starting gradient vanishes."""


class ShapeMismatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shapes", shapes)
        expected = sum(math.prod(s) for s in shapes)
        if expected != values.size:
            raise ShapeMismatchError(
                f"manifest {shapes} holds {expected} values, got {values.size}"
            )
        if not np.isfinite(values).all():
            raise NonFiniteError("parameter vector contains NaN or Inf")

    def __len__(self) -> int:
        return self.values.size

    def layers(self) -> list[np.ndarray]:
        out, start = [], 0
        for shape in self.shapes:
            n = math.prod(shape)
            out.append(self.values[start:start + n].reshape(shape))
            start += n
        return out

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.shapes)

    def check_compatible(self, other: "ParamVector") -> None:
        if self.shapes != other.shapes:
            raise ShapeMismatchError(f"expected shapes {self.shapes}, got {other.shapes}")

    @classmethod
    def from_layers(cls, layers) -> "ParamVector":
        layers = [np.asarray(a, dtype=np.float64) for a in layers]
        values = np.concatenate([a.reshape(-1) for a in layers]) if layers else np.zeros(0)
        return cls(values, tuple(a.shape for a in layers))


@dataclass(frozen=True)
class Batch:
    """Labelled examples: ``x`` is ``(n, d)`` float64, ``y`` is ``(n,)`` int."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ShapeMismatchError(f"x {x.shape} and y {y.shape} do not form a batch")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class LocalObjective:
    """h(w) = F(w) + lam/2 * ||w - anchor||^2."""

    lam: float
    anchor: ParamVector

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 0.01
    local_epochs: int = 3
    batch_size: int = 10
    optimizer: str = "adam"  # or "sgd" for plain gradient descent
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("adam hyperparameters out of range")


# -- architectures ---------------------------------------------------------

def architecture(params: ParamVector) -> str:
    if len(params.shapes) == 2:
        return "logistic"
    if len(params.shapes) == 4:
        return "mlp"
    raise ShapeMismatchError(f"no architecture has layer manifest {params.shapes}")


def init_params(kind: str, in_dim: int, num_classes: int, hidden: int = 32,
                seed: int = 0) -> ParamVector:
    """Logistic models start at zero; MLPs get scaled Gaussian weights."""
    if kind == "logistic":
        return ParamVector.from_layers([np.zeros((in_dim, num_classes)), np.zeros(num_classes)])
    if kind == "mlp":
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), (in_dim, hidden))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, num_classes))
        return ParamVector.from_layers([w1, np.zeros(hidden), w2, np.zeros(num_classes)])
    raise ValueError(f"unknown model kind {kind!r}")


def _check_batch(params: ParamVector, batch: Batch) -> None:
    in_dim = params.shapes[0][0]
    if batch.x.shape[1] != in_dim:
        raise ShapeMismatchError(
            f"expected feature dimension {in_dim}, got {batch.x.shape[1]}"
        )
    if len(batch) == 0:
        raise ValueError("empty batch")


def logits(params: ParamVector, x: np.ndarray) -> np.ndarray:
    layers = params.layers()
    if architecture(params) == "logistic":
        w, b = layers
        return x @ w + b
    w1, b1, w2, b2 = layers
    return np.tanh(x @ w1 + b1) @ w2 + b2


def predict(params: ParamVector, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(params, x), axis=1)


def _softmax_xent(z: np.ndarray, y: np.ndarray, with_loss: bool = True):
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    rows = np.arange(y.shape[0])
    loss = float(np.log(s[:, 0]).sum() - z[rows, y].sum()) / y.shape[0] if with_loss else 0.0
    dz = ez / s
    dz[rows, y] -= 1.0
    dz /= y.shape[0]
    return loss, dz


def _loss_grad_flat(w: np.ndarray, shapes, x: np.ndarray, y: np.ndarray, with_loss=True):
    if len(shapes) == 2:
        (d, c), _ = shapes
        W = w[:d * c].reshape(d, c)
        loss, dz = _softmax_xent(x @ W + w[d * c:], y, with_loss)
        return loss, np.concatenate([(x.T @ dz).reshape(-1), dz.sum(axis=0)])
    (d, h), _, (_, c), _ = shapes
    o1, o2, o3 = d * h, d * h + h, d * h + h + h * c
    W1, b1, W2, b2 = w[:o1].reshape(d, h), w[o1:o2], w[o2:o3].reshape(h, c), w[o3:]
    a = np.tanh(x @ W1 + b1)
    loss, dz = _softmax_xent(a @ W2 + b2, y, with_loss)
    da = (dz @ W2.T) * (1.0 - a * a)
    return loss, np.concatenate([
        (x.T @ da).reshape(-1), da.sum(axis=0), (a.T @ dz).reshape(-1), dz.sum(axis=0),
    ])


def loss_and_grad(params: ParamVector, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``batch`` and its gradient as a flat array."""
    _check_batch(params, batch)
    architecture(params)  # rejects unknown manifests
    return _loss_grad_flat(params.values, params.shapes, batch.x, batch.y)


def forward_loss(params: ParamVector, batch: Batch) -> float:
    _check_batch(params, batch)
    loss, _ = _softmax_xent(logits(params, batch.x), batch.y)
    return loss


def proximal_loss(params: ParamVector, objective: LocalObjective, batch: Batch) -> float:
    params.check_compatible(objective.anchor)
    d = params.values - objective.anchor.values
    return forward_loss(params, batch) + 0.5 * objective.lam * float(d @ d)


def _prox_grad(params: ParamVector, objective: LocalObjective, batch: Batch) -> np.ndarray:
    _, g = loss_and_grad(params, batch)
    if objective.lam:
        g = g + objective.lam * (params.values - objective.anchor.values)
    return g


def proximal_gradient(params: ParamVector, objective: LocalObjective,
                      batch: Batch) -> ParamVector:
    """Gradient of F on ``batch`` plus ``lam * (params - anchor)``."""
    params.check_compatible(objective.anchor)
    return params.with_values(_prox_grad(params, objective, batch))


def minibatch_schedule(n: int, batch_size: int, epochs: int, seed: int) -> list[list[np.ndarray]]:
    """Index sets per epoch; membership is seeded, indices inside a batch are sorted."""
    rng = np.random.default_rng(seed)
    schedule = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        schedule.append([np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)])
    return schedule


def local_train(start: ParamVector, objective: LocalObjective, data: Batch,
                cfg: SolverConfig, seed: int) -> ParamVector:
    if len(data) == 0:
        raise ValueError("client dataset is empty")
    start.check_compatible(objective.anchor)
    _check_batch(start, data)
    w = start.values.copy()
    anchor = objective.anchor.values
    lam = objective.lam
    lr = cfg.learning_rate
    adam = cfg.optimizer == "adam"
    if adam:
        m = np.zeros_like(w)
        v = np.zeros_like(w)
    x, y, shapes = data.x, data.y, start.shapes
    step = 0
    for epoch, batches in enumerate(minibatch_schedule(len(data), cfg.batch_size,
                                                       cfg.local_epochs, seed)):
        for idx in batches:
            # a non-finite loss always shows up as a non-finite gradient
            _, g = _loss_grad_flat(w, shapes, x[idx], y[idx], with_loss=False)
            if lam:
                g = g + lam * (w - anchor)
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite loss or gradient at epoch {epoch}, step {step}",
                                     epoch, step)
            step += 1
            if adam:
                m *= cfg.beta1
                m += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * (g * g)
                step_size = lr / (1 - cfg.beta1 ** step)
                w = w - step_size * m / (np.sqrt(v / (1 - cfg.beta2 ** step)) + cfg.eps)
            else:
                w = w - lr * g
    return start.with_values(w)


def gamma_inexactness(before: ParamVector, after: ParamVector, objective: LocalObjective,
                      data: Batch) -> float:
    """||grad h(after)|| / ||grad h(before)|| on the full client dataset.

    Diagnostic only. Returns :data:`STATIONARY` when the denominator is below 1e-12.
    """
    before.check_compatible(after)
    denom = float(np.linalg.norm(_prox_grad(before, objective, data)))
    if denom < 1e-12:
        return STATIONARY
    return float(np.linalg.norm(_prox_grad(after, objective, data))) / denom
