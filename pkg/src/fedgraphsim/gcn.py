"""Two-layer graph convolutional network with manual numpy backprop.

The local learner: soft labels come from
softmax_rows(A_hat @ relu(A_hat @ X @ W0 + b0) @ W1 + b1) with A_hat the
GCN-normalized adjacency of the client subgraph. One training epoch is one
full-batch gradient step on the mean cross-entropy over the train mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .partition import ClientData

LOG_CLAMP = 1e-12
PARAM_FIELDS = ("w0", "b0", "w1", "b1")


@dataclass(eq=False)
class ModelParams:
    w0: np.ndarray
    b0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.w0.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w0.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, f).copy() for f in PARAM_FIELDS))

    def shapes(self) -> tuple:
        return tuple(getattr(self, f).shape for f in PARAM_FIELDS)


# Gradients share the parameter container (same shapes, entrywise layout).
Gradients = ModelParams


def init_params(
    feature_dim: int, hidden_dim: int, num_classes: int, seed: int
) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic under seed."""
    if min(feature_dim, hidden_dim, num_classes) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    lim0 = np.sqrt(6.0 / (feature_dim + hidden_dim))
    lim1 = np.sqrt(6.0 / (hidden_dim + num_classes))
    return ModelParams(
        rng.uniform(-lim0, lim0, size=(feature_dim, hidden_dim)),
        np.zeros(hidden_dim),
        rng.uniform(-lim1, lim1, size=(hidden_dim, num_classes)),
        np.zeros(num_classes),
    )


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row softmax with per-row max subtraction."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_shapes(p: ModelParams, cd: ClientData):
    g = cd.graph
    if p.w0.shape[0] != g.feature_dim or p.w1.shape[1] != g.num_classes:
        raise ValueError(
            f"params for ({p.feature_dim}, {p.num_classes}) do not match data "
            f"({g.feature_dim}, {g.num_classes})"
        )


def _forward_cached(p: ModelParams, cd: ClientData):
    """Forward pass keeping the intermediates needed by backprop."""
    adj = cd.adjacency()
    z0 = adj.dot(cd.graph.features @ p.w0) + p.b0
    h = np.maximum(z0, 0.0)
    ah = adj.dot(h)
    z1 = ah @ p.w1 + p.b1
    return z0, ah, softmax_rows(z1)


def forward(p: ModelParams, cd: ClientData) -> np.ndarray:
    """Soft labels: one probability row per local node."""
    _check_shapes(p, cd)
    return _forward_cached(p, cd)[2]


def loss_and_grads(p: ModelParams, cd: ClientData) -> tuple[float, Gradients]:
    """Mean train-mask cross-entropy and its analytic gradients."""
    _check_shapes(p, cd)
    train = cd.masks.train
    if train.size == 0:
        raise ValueError("cannot train with an empty train mask")
    adj = cd.adjacency()
    x = cd.graph.features
    z0, ah, probs = _forward_cached(p, cd)
    y = cd.graph.labels
    picked = np.clip(probs[train, y[train]], LOG_CLAMP, None)
    loss = float(-np.mean(np.log(picked)))

    d_z1 = np.zeros_like(probs)
    d_z1[train] = probs[train]
    d_z1[train, y[train]] -= 1.0
    d_z1 /= train.size
    d_w1 = ah.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    d_h = adj.dot(d_z1 @ p.w1.T)
    d_z0 = d_h * (z0 > 0.0)
    d_w0 = x.T @ adj.dot(d_z0)
    d_b0 = d_z0.sum(axis=0)
    return loss, Gradients(d_w0, d_b0, d_w1, d_b1)


def train_epoch(p: ModelParams, cd: ClientData, lr: float) -> ModelParams:
    """One full-batch gradient step (= one local epoch = one trip's training)."""
    _, grads = loss_and_grads(p, cd)
    return ModelParams(
        *(getattr(p, f) - lr * getattr(grads, f) for f in PARAM_FIELDS)
    )


def evaluate(p: ModelParams, cd: ClientData, which_mask: str) -> float:
    """Accuracy over the chosen mask; argmax ties resolve to the lowest class."""
    mask = cd.masks.get(which_mask)
    if mask.size == 0:
        raise ValueError(f"cannot evaluate on empty {which_mask} mask")
    probs = forward(p, cd)
    pred = np.argmax(probs[mask], axis=1)
    return float(np.mean(pred == cd.graph.labels[mask]))


def params_to_bytes(p: ModelParams) -> bytes:
    """Little-endian blob: u32 (feature, hidden, classes) header then f64 arrays."""
    header = struct.pack("<III", p.feature_dim, p.hidden_dim, p.num_classes)
    body = b"".join(
        np.ascontiguousarray(getattr(p, f), dtype="<f8").tobytes()
        for f in PARAM_FIELDS
    )
    return header + body


def params_from_bytes(buf: bytes, offset: int = 0) -> tuple[ModelParams, int]:
    """Decode a params blob; returns (params, bytes consumed from offset)."""
    f, h, c = struct.unpack_from("<III", buf, offset)
    sizes = (f * h, h, h * c, c)
    shapes = ((f, h), (h,), (h, c), (c,))
    pos = offset + 12
    arrays = []
    for size, shape in zip(sizes, shapes):
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos)
        arrays.append(arr.astype(np.float64).reshape(shape))
        pos += size * 8
    return ModelParams(*arrays), pos - offset
