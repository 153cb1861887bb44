"""Aggregation kernels: soft-label fingerprints, similarity clustering,
label propagation, smoothness confidence, and staleness-aware weighting.

Degrees here are always raw local degrees (no self-loops); isolated nodes
contribute nothing to edge sums and degree-weighted sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .gcn import PARAM_FIELDS, ModelParams
from .partition import ClientData

LSC_EPSILON = 1e-6
ENTROPY_OFFSET = math.exp(-1.0)


@dataclass(frozen=True)
class LscValue:
    """Smoothness confidence; raw may be negative, clamped is max(raw, eps).

    The clamp keeps aggregation weights positive: raw goes negative whenever
    average prediction entropy exceeds 1/e (near-uniform predictions early
    in training).
    """

    raw: float
    clamped: float

    @classmethod
    def from_raw(cls, raw: float) -> "LscValue":
        return cls(float(raw), max(float(raw), LSC_EPSILON))


@dataclass
class FglHyper:
    """Protocol hyperparameters: similarity threshold, propagation balance
    and depth, staleness attenuation."""

    theta: float = 0.5
    lam: float = 0.5
    k_steps: int = 2
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.k_steps < 0:
            raise ValueError("k_steps must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass(eq=False)
class KnowledgeBaseEntry:
    """Latest upload of one client as retained by the server."""

    client_id: int
    params: ModelParams
    sfm: np.ndarray
    lsc: LscValue
    tau: int


def compute_sfm(soft: np.ndarray, cd: ClientData) -> np.ndarray:
    """Degree-weighted sum of soft-label outer products over adjacent pairs.

    Both orientations of every undirected edge contribute, so the result is
    symmetric. An edgeless graph gives the zero matrix.
    """
    n, c = soft.shape
    if n != cd.graph.node_count:
        raise ValueError("soft labels must have one row per local node")
    edges = cd.graph.edges
    if edges.shape[0] == 0:
        return np.zeros((c, c))
    d = cd.degrees().astype(np.float64)
    u, v = edges[:, 0], edges[:, 1]
    w = d[u] * d[v]
    one_way = (soft[u] * w[:, None]).T @ soft[v]
    return one_way + one_way.T


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the flattened matrices; zero-norm inputs compare as 0."""
    fa, fb = np.ravel(a), np.ravel(b)
    if fa.size != fb.size:
        raise ValueError("matrices must have the same number of entries")
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(fa, fb) / (na * nb))


def cluster_set(
    i: int, kb: Mapping[int, KnowledgeBaseEntry], theta: float
) -> set[int]:
    """Clients whose fingerprint similarity to i reaches theta, plus i itself.

    Only clients present in the knowledge base (seen by the server) can be
    members.
    """
    if i not in kb:
        raise ValueError(f"client {i} not in the knowledge base")
    own = kb[i].sfm
    members = {i}
    for j, entry in kb.items():
        if j != i and cosine_similarity(own, entry.sfm) >= theta:
            members.add(j)
    return members


def label_propagation(
    soft: np.ndarray, cd: ClientData, lam: float, k_steps: int
) -> np.ndarray:
    """k-step non-parametric propagation mixing each node with its neighbors.

    Each step computes lam * initial + (1 - lam) * sum_j prev_j / sqrt(d_i d_j)
    and renormalizes every row to sum 1 (rows summing to 0 reset to uniform).
    k_steps=0 returns the input unchanged.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if k_steps < 0:
        raise ValueError("k_steps must be >= 0")
    if k_steps == 0:
        return soft.copy()
    prop = cd.prop_matrix()
    c = soft.shape[1]
    current = soft
    for _ in range(k_steps):
        mixed = lam * soft + (1.0 - lam) * prop.dot(current)
        sums = mixed.sum(axis=1, keepdims=True)
        dead = sums[:, 0] == 0.0
        if np.any(dead):
            mixed[dead] = 1.0 / c
            sums = mixed.sum(axis=1, keepdims=True)
        current = mixed / sums
    return current


def compute_lsc(propagated: np.ndarray, cd: ClientData) -> LscValue:
    """Degree-weighted sum of (1/e - entropy) over propagated soft labels.

    Uses the convention 0 * ln 0 = 0; the raw value is clamped from below
    at LSC_EPSILON.
    """
    d = cd.degrees().astype(np.float64)
    p = propagated
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    raw = float(np.sum(d * (ENTROPY_OFFSET + plogp.sum(axis=1))))
    return LscValue.from_raw(raw)


def staleness_weights(
    entries: list[KnowledgeBaseEntry], t: int, alpha: float
) -> np.ndarray:
    """Normalized confidence-times-staleness weights over the given entries.

    Unnormalized weight of entry j is clamped_lsc_j * (t - tau_j)^(-alpha);
    a fresh entry (tau = t - 1) gets staleness factor 1.
    """
    if not entries:
        raise ValueError("need at least one entry to weight")
    taus = np.array([e.tau for e in entries], dtype=np.float64)
    if np.any(taus > t - 1):
        raise ValueError("entry tau must be <= t - 1 at aggregation time")
    lscs = np.array([e.lsc.clamped for e in entries])
    u = lscs * (t - taus) ** (-alpha)
    return u / u.sum()


def aggregate_models(params_list: list[ModelParams], weights) -> ModelParams:
    """Entrywise convex combination of parameter sets."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(params_list) != weights.size or not params_list:
        raise ValueError("need one weight per parameter set")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    shapes = params_list[0].shapes()
    if any(p.shapes() != shapes for p in params_list):
        raise ValueError("parameter sets must share shapes")
    fields = []
    for name in PARAM_FIELDS:
        acc = weights[0] * getattr(params_list[0], name)
        for w, p in zip(weights[1:], params_list[1:]):
            acc = acc + w * getattr(p, name)
        fields.append(acc)
    return ModelParams(*fields)


def blend_local(
    server_params: ModelParams,
    local_params: ModelParams,
    cluster_lsc: float,
    local_lsc: float,
) -> ModelParams:
    """Confidence-weighted convex blend of a downloaded and a local model.

    Computed as local + a * (server - local) with a = cluster/(cluster+local),
    which keeps every output entry inside [min, max] of the two inputs.
    """
    if cluster_lsc < 0 or local_lsc < 0:
        raise ValueError("confidences must be nonnegative")
    total = cluster_lsc + local_lsc
    if total == 0:
        raise ValueError("confidences must not both be zero")
    a = cluster_lsc / total
    fields = []
    for name in PARAM_FIELDS:
        loc = getattr(local_params, name)
        srv = getattr(server_params, name)
        fields.append(loc + a * (srv - loc))
    return ModelParams(*fields)
