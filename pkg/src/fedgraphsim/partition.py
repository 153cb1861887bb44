"""Splitting a global graph into client subgraphs, plus robustness perturbations."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graphs import (
    Graph,
    NodeMasks,
    SparseAdjacency,
    degrees,
    normalized_adjacency,
    propagation_matrix,
    split_masks,
)


@dataclass
class CommunityAssignment:
    """Node -> client map; every client id in [0, num_clients) owns >= 1 node."""

    client_of: np.ndarray
    num_clients: int

    def __post_init__(self):
        self.client_of = np.asarray(self.client_of, dtype=np.int64)
        counts = np.bincount(self.client_of, minlength=self.num_clients)
        if counts.size != self.num_clients or counts.min() < 1:
            raise ValueError("every client must own at least one node")


@dataclass(eq=False)
class ClientData:
    """One client's induced subgraph with masks and the local -> global id map."""

    graph: Graph
    global_ids: np.ndarray
    masks: NodeMasks
    client_id: int
    _adj: SparseAdjacency | None = field(default=None, repr=False)
    _prop: SparseAdjacency | None = field(default=None, repr=False)
    _deg: np.ndarray | None = field(default=None, repr=False)

    def adjacency(self) -> SparseAdjacency:
        if self._adj is None:
            self._adj = normalized_adjacency(self.graph)
        return self._adj

    def prop_matrix(self) -> SparseAdjacency:
        if self._prop is None:
            self._prop = propagation_matrix(self.graph)
        return self._prop

    def degrees(self) -> np.ndarray:
        if self._deg is None:
            self._deg = degrees(self.graph)
        return self._deg


def modularity(g: Graph, comm_of: np.ndarray) -> float:
    """Newman modularity (resolution 1) of a partition of g."""
    m = g.edge_count
    if m == 0:
        return 0.0
    comm_of = np.asarray(comm_of)
    deg = degrees(g).astype(np.float64)
    intra = np.count_nonzero(comm_of[g.edges[:, 0]] == comm_of[g.edges[:, 1]])
    deg_per_comm = np.bincount(comm_of, weights=deg)
    return intra / m - float(np.sum((deg_per_comm / (2.0 * m)) ** 2))


def _local_move(adj, k, m2, comm, rng):
    """One pass of greedy modularity moves over all nodes in shuffled order.

    Returns True when at least one node moved. comm and the community degree
    totals are updated in place; every accepted move strictly increases
    modularity.
    """
    n = len(adj)
    comm_k = np.zeros(n)
    np.add.at(comm_k, comm, k)
    moved = False
    for v in rng.permutation(n):
        b = comm[v]
        k_v = k[v]
        w_to: dict[int, float] = {}
        for u, w in adj[v].items():
            c = comm[u]
            w_to[c] = w_to.get(c, 0.0) + w
        comm_k[b] -= k_v
        stay_gain = w_to.get(b, 0.0) - k_v * comm_k[b] / m2
        best_c, best_gain = b, stay_gain
        for c in sorted(w_to):
            if c == b:
                continue
            gain = w_to[c] - k_v * comm_k[c] / m2
            if gain > best_gain:
                best_c, best_gain = c, gain
        comm[v] = best_c
        comm_k[best_c] += k_v
        if best_c != b:
            moved = True
    return moved


def _coarsen(adj, loops, comm):
    """Aggregate communities into super-nodes; returns (adj, loops, mapping)."""
    ids = sorted(set(comm.tolist()))
    remap = {c: i for i, c in enumerate(ids)}
    mapping = np.array([remap[c] for c in comm], dtype=np.int64)
    n_new = len(ids)
    new_adj = [dict() for _ in range(n_new)]
    new_loops = np.zeros(n_new)
    for v, nbrs in enumerate(adj):
        cv = mapping[v]
        new_loops[cv] += loops[v]
        for u, w in nbrs.items():
            if u < v:
                continue
            cu = mapping[u]
            if cu == cv:
                new_loops[cv] += w
            else:
                new_adj[cv][cu] = new_adj[cv].get(cu, 0.0) + w
                new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
    return new_adj, new_loops, mapping


def _louvain_communities(g: Graph, seed: int, modularity_trace=None) -> np.ndarray:
    """Two-phase Louvain to convergence; returns community id per node."""
    n = g.node_count
    membership = np.arange(n, dtype=np.int64)
    if g.edge_count == 0:
        return membership
    rng = np.random.default_rng(seed)
    adj = [dict() for _ in range(n)]
    for u, v in g.edges:
        adj[u][v] = adj[u].get(v, 0.0) + 1.0
        adj[v][u] = adj[v].get(u, 0.0) + 1.0
    loops = np.zeros(n)
    while True:
        n_level = len(adj)
        k = np.array([sum(d.values()) for d in adj]) + 2.0 * loops
        m2 = float(k.sum())
        comm = np.arange(n_level, dtype=np.int64)
        while True:
            moved = _local_move(adj, k, m2, comm, rng)
            if modularity_trace is not None:
                modularity_trace.append(modularity(g, comm[membership]))
            if not moved:
                break
        if len(set(comm.tolist())) == n_level:
            break
        adj, loops, mapping = _coarsen(adj, loops, comm)
        membership = mapping[membership]
    # compact final ids
    ids = {c: i for i, c in enumerate(sorted(set(membership.tolist())))}
    return np.array([ids[c] for c in membership], dtype=np.int64)


def _coalesce(groups: list[list[int]], n_clients: int) -> list[list[int]]:
    """Merge or split node groups until exactly n_clients remain.

    Too many groups: repeatedly merge the smallest group into the smallest
    remaining one (ties broken by lowest contained node id). Too few:
    repeatedly split the largest group in half by ascending node id.
    """
    groups = [sorted(grp) for grp in groups]
    while len(groups) > n_clients:
        order = sorted(range(len(groups)), key=lambda i: (len(groups[i]), groups[i][0]))
        small, target = order[0], order[1]
        groups[target] = sorted(groups[target] + groups[small])
        del groups[small]
    while len(groups) < n_clients:
        order = sorted(range(len(groups)), key=lambda i: (-len(groups[i]), groups[i][0]))
        big = groups[order[0]]
        half = (len(big) + 1) // 2
        groups[order[0]] = big[:half]
        groups.append(big[half:])
    return groups


def _groups_to_assignment(groups, node_count, n_clients) -> CommunityAssignment:
    groups = sorted((sorted(grp) for grp in groups), key=lambda grp: grp[0])
    client_of = np.full(node_count, -1, dtype=np.int64)
    for cid, grp in enumerate(groups):
        client_of[grp] = cid
    return CommunityAssignment(client_of, n_clients)


def louvain_partition(
    g: Graph, n_clients: int, seed: int, modularity_trace: list | None = None
) -> CommunityAssignment:
    """Louvain communities coalesced into exactly n_clients clients.

    Node visit order within each local-moving pass is shuffled by the seed.
    When modularity_trace is given, the partition's modularity on the
    original graph is appended after every pass (monotone nondecreasing).
    """
    if not 1 <= n_clients <= g.node_count:
        raise ValueError("n_clients must be in [1, node_count]")
    comm = _louvain_communities(g, seed, modularity_trace)
    groups = [np.flatnonzero(comm == c).tolist() for c in range(comm.max() + 1)]
    groups = _coalesce([grp for grp in groups if grp], n_clients)
    return _groups_to_assignment(groups, g.node_count, n_clients)


def _bfs_distances(adj_sorted, start, n) -> np.ndarray:
    dist = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    q = deque([start])
    while q:
        v = q.popleft()
        for u in adj_sorted[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                q.append(u)
    return dist


def _spread_seeds(adj_sorted, n, n_clients, rng) -> list[int]:
    """Farthest-point seed selection, robust to the random starting node.

    A BFS from a random start picks the farthest node (unreachable nodes
    count as infinitely far, ties to the lowest id) as the first seed; each
    further seed maximizes the minimum BFS distance to the seeds so far.
    """

    def farthest(dist_arrays):
        mindist = np.min(np.stack(dist_arrays), axis=0)
        unreached = np.flatnonzero(mindist < 0)
        if unreached.size:
            return int(unreached[0])
        return int(np.argmax(mindist))

    start = int(rng.integers(n))
    seeds = [farthest([_bfs_distances(adj_sorted, start, n)])]
    dists = [_bfs_distances(adj_sorted, seeds[0], n)]
    while len(seeds) < n_clients:
        masked = [np.where(d < 0, np.iinfo(np.int64).max, d) for d in dists]
        mindist = np.min(np.stack(masked), axis=0)
        mindist[seeds] = -1
        nxt = int(np.argmax(mindist))
        seeds.append(nxt)
        dists.append(_bfs_distances(adj_sorted, nxt, n))
    return seeds


def balanced_partition(g: Graph, n_clients: int, seed: int) -> CommunityAssignment:
    """Size-balanced locality partition (Metis stand-in).

    Multi-source growth from spread seeds: at every step the client with the
    fewest nodes (ties to the lower client id) claims the unclaimed frontier
    node most strongly attached to it (most neighbors already inside, ties
    to the lowest node id), or the lowest-id unclaimed node when its
    frontier is empty. Growing the minimum-size client keeps all client
    sizes within 1 of each other; attachment-priority claiming keeps clients
    inside dense regions.
    """
    if not 1 <= n_clients <= g.node_count:
        raise ValueError("n_clients must be in [1, node_count]")
    n = g.node_count
    adj_sorted: list[list[int]] = [[] for _ in range(n)]
    for u, v in g.edges:
        adj_sorted[u].append(int(v))
        adj_sorted[v].append(int(u))
    for nbrs in adj_sorted:
        nbrs.sort()
    rng = np.random.default_rng(seed)
    seeds = _spread_seeds(adj_sorted, n, n_clients, rng)
    client_of = np.full(n, -1, dtype=np.int64)
    # per client: lazy max-heap of (-attachment, node) plus current counts
    heaps: list[list[tuple[int, int]]] = [[] for _ in range(n_clients)]
    attach: list[dict[int, int]] = [dict() for _ in range(n_clients)]
    sizes = [0] * n_clients
    lowest_unclaimed = 0
    claimed = 0

    def claim(cid: int, node: int):
        nonlocal claimed
        client_of[node] = cid
        sizes[cid] += 1
        claimed += 1
        attach[cid].pop(node, None)
        for u in adj_sorted[node]:
            if client_of[u] < 0:
                cnt = attach[cid].get(u, 0) + 1
                attach[cid][u] = cnt
                heapq.heappush(heaps[cid], (-cnt, u))

    for cid, s in enumerate(seeds):
        claim(cid, s)
    while claimed < n:
        cid = min(range(n_clients), key=lambda c: (sizes[c], c))
        node = -1
        heap = heaps[cid]
        while heap:
            neg_cnt, cand = heapq.heappop(heap)
            if client_of[cand] < 0 and attach[cid].get(cand) == -neg_cnt:
                node = cand
                break
        if node < 0:
            while client_of[lowest_unclaimed] >= 0:
                lowest_unclaimed += 1
            node = lowest_unclaimed
        claim(cid, node)
    groups = [np.flatnonzero(client_of == c).tolist() for c in range(n_clients)]
    return _groups_to_assignment(groups, n, n_clients)


def extract_subgraphs(
    g: Graph, a: CommunityAssignment, ratios: tuple, seed: int
) -> list[ClientData]:
    """Induced subgraph per client (cross-client edges dropped), with masks.

    Local node ids follow ascending global id; masks come from split_masks
    with per-client seed offset seed + client_id.
    """
    if a.client_of.shape[0] != g.node_count:
        raise ValueError("assignment does not cover the graph")
    out = []
    cl = a.client_of
    edge_cl_u = cl[g.edges[:, 0]] if g.edge_count else np.zeros(0, dtype=np.int64)
    edge_cl_v = cl[g.edges[:, 1]] if g.edge_count else np.zeros(0, dtype=np.int64)
    for cid in range(a.num_clients):
        ids = np.flatnonzero(cl == cid)
        keep = (edge_cl_u == cid) & (edge_cl_v == cid)
        local_edges = np.searchsorted(ids, g.edges[keep])
        local = Graph(
            ids.size,
            local_edges,
            g.features[ids],
            g.labels[ids],
            g.num_classes,
            g.feature_dim,
        )
        masks = split_masks(local, ratios, seed + cid)
        out.append(ClientData(local, ids, masks, cid))
    return out


def sparsify_labels(cd: ClientData, drop_rate: float, seed: int) -> ClientData:
    """Remove floor(drop_rate * |train|) uniformly chosen train nodes."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError("drop_rate must lie in [0, 1]")
    train = cd.masks.train
    n_drop = int(np.floor(drop_rate * train.size))
    if n_drop == 0:
        return cd
    rng = np.random.default_rng(seed)
    dropped = rng.choice(train, size=n_drop, replace=False)
    kept = np.setdiff1d(train, dropped)
    masks = NodeMasks(kept, cd.masks.val.copy(), cd.masks.test.copy())
    return ClientData(cd.graph, cd.global_ids, masks, cd.client_id)


def sparsify_edges(cd: ClientData, drop_rate: float, seed: int) -> ClientData:
    """Remove floor(drop_rate * m) uniformly chosen undirected edges."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError("drop_rate must lie in [0, 1]")
    g = cd.graph
    n_drop = int(np.floor(drop_rate * g.edge_count))
    if n_drop == 0:
        return cd
    rng = np.random.default_rng(seed)
    dropped = rng.choice(g.edge_count, size=n_drop, replace=False)
    keep = np.ones(g.edge_count, dtype=bool)
    keep[dropped] = False
    thinned = Graph(
        g.node_count,
        g.edges[keep],
        g.features,
        g.labels,
        g.num_classes,
        g.feature_dim,
    )
    return ClientData(thinned, cd.global_ids, cd.masks, cd.client_id)


def save_assignment(a: CommunityAssignment, path) -> None:
    """Dump one `<global_id> <client_id>` line per node."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for gid, cid in enumerate(a.client_of):
            f.write(f"{gid} {cid}\n")


def load_assignment(path) -> CommunityAssignment:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                gid, cid = line.split()
                pairs.append((int(gid), int(cid)))
    pairs.sort()
    client_of = np.array([cid for _, cid in pairs], dtype=np.int64)
    return CommunityAssignment(client_of, int(client_of.max()) + 1)
