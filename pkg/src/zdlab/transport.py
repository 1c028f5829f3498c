"""Exact infinity-Wasserstein (bottleneck) distance between two empirical
measures with the same number of atoms.

For uniform empirical measures on N points each, W_inf^2 is the smallest
threshold c such that the bipartite graph {(i, j) : |x_i - y_j|^2 <= c}
has a perfect matching. The candidate thresholds are the distinct pairwise
costs; feasibility is monotone in the threshold, so we binary search over
them, starting from the smallest threshold at which every vertex has an
edge.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

BRUTE_FORCE_MAX_N = 9
_UNSEEN = np.iinfo(np.int64).max


@dataclass(frozen=True)
class MatchResult:
    bottleneck_sq: float
    assignment: np.ndarray  # assignment[i] = index in Y matched to X[i]

    @property
    def value(self) -> float:
        return self.bottleneck_sq


@nb.njit(cache=True, nogil=True)
def _hopcroft_karp(adj):
    """Maximum matching on a dense N x M boolean biadjacency matrix.

    Returns (size, match_left) with match_left[u] = v or -1.
    """
    n, m = adj.shape
    inf = _UNSEEN
    match_l = np.full(n, -1, dtype=np.int64)
    match_r = np.full(m, -1, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    via = np.empty(n + 1, dtype=np.int64)

    # greedy warm start
    size = 0
    for u in range(n):
        for v in range(m):
            if adj[u, v] and match_r[v] == -1:
                match_l[u] = v
                match_r[v] = u
                size += 1
                break

    while True:
        # BFS layering from free left vertices
        head = 0
        tail = 0
        for u in range(n):
            if match_l[u] == -1:
                dist[u] = 0
                queue[tail] = u
                tail += 1
            else:
                dist[u] = inf
        found = False
        while head < tail:
            u = queue[head]
            head += 1
            for v in range(m):
                if not adj[u, v]:
                    continue
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue[tail] = w
                    tail += 1
        if not found:
            break

        # vertex-disjoint shortest augmenting paths, iterative DFS
        for u in range(n):
            nxt[u] = 0
        for root in range(n):
            if match_l[root] != -1:
                continue
            sp = 0
            stack[0] = root
            while sp >= 0:
                u = stack[sp]
                advanced = False
                while nxt[u] < m:
                    v = nxt[u]
                    nxt[u] += 1
                    if not adj[u, v]:
                        continue
                    w = match_r[v]
                    if w == -1:
                        via[sp] = v
                        for lvl in range(sp, -1, -1):
                            uu = stack[lvl]
                            vv = via[lvl]
                            match_l[uu] = vv
                            match_r[vv] = uu
                        size += 1
                        sp = -1
                        advanced = True
                        break
                    if dist[w] == dist[u] + 1:
                        via[sp] = v
                        sp += 1
                        stack[sp] = w
                        advanced = True
                        break
                if not advanced:
                    dist[u] = inf
                    sp -= 1
    return size, match_l


@nb.njit(cache=True, nogil=True)
def _matching_at(cost, c):
    return _hopcroft_karp(cost <= c)


def maximum_matching(adjacency) -> tuple[int, np.ndarray]:
    adj = np.ascontiguousarray(adjacency, dtype=np.bool_)
    if adj.ndim != 2:
        raise ValueError("adjacency must be a matrix")
    size, match = _hopcroft_karp(adj)
    return int(size), match


def has_perfect_matching(adjacency) -> bool:
    adj = np.asarray(adjacency, dtype=np.bool_)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    size, _ = maximum_matching(adj)
    return size == adj.shape[0]


def pairwise_sq_costs(X, Y) -> np.ndarray:
    """cost[i, j] = |X_i - Y_j|^2, computed from explicit differences."""
    X = _as_cloud(X)
    Y = _as_cloud(Y)
    if X.shape != Y.shape:
        raise ValueError(f"point clouds must have equal size and dimension: {X.shape} vs {Y.shape}")
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _as_cloud(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise ValueError("a point cloud must be a non-empty (N, d) array")
    return P


def spanning_threshold_index(costs: np.ndarray, levels: np.ndarray) -> int:
    """Index of the smallest level at which every row and column has an edge."""
    need = max(costs.min(axis=1).max(), costs.min(axis=0).max())
    return int(np.searchsorted(levels, need))


def bottleneck_w_inf_sq(X, Y, search: str = "binary") -> MatchResult:
    """Squared W_inf distance between the empirical measures of X and Y.

    ``search="linear"`` walks the sorted distinct costs upward from the
    spanning threshold; ``"binary"`` bisects the same window. Both return
    the same value.
    """
    cost = pairwise_sq_costs(X, Y)
    levels = np.unique(cost)
    k = spanning_threshold_index(cost, levels)
    if search == "binary":
        lo, hi = k, len(levels) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            size, _ = _matching_at(cost, levels[mid])
            if size == cost.shape[0]:
                hi = mid
            else:
                lo = mid + 1
        k = lo
    elif search == "linear":
        while _matching_at(cost, levels[k])[0] != cost.shape[0]:
            k += 1
    else:
        raise ValueError(f"unknown search strategy {search!r}")
    _, match = _matching_at(cost, levels[k])
    return MatchResult(float(levels[k]), match)


def w_inf(X, Y) -> float:
    return math.sqrt(bottleneck_w_inf_sq(X, Y).bottleneck_sq)


def _all_permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def brute_force_bottleneck(X, Y) -> MatchResult:
    """Minimum over all N! assignments of the maximum pair cost (N <= 9)."""
    cost = pairwise_sq_costs(X, Y)
    n = cost.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = _all_permutations(n)
    worst = cost[np.arange(n), perms].max(axis=1)
    best = int(np.argmin(worst))
    return MatchResult(float(worst[best]), perms[best].copy())


def brute_force_min_mean_cost(X, Y) -> float:
    """min over assignments of the mean squared pair distance (W_2^2 for
    uniform empirical measures); small-N oracle only."""
    cost = pairwise_sq_costs(X, Y)
    n = cost.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = _all_permutations(n)
    return float(cost[np.arange(n), perms].mean(axis=1).min())
