"""Binary agent hierarchy built by Ward agglomeration, plus activation-cost tools.

Leaves own single features; each merge of the two closest clusters (smallest
Ward variance increase) becomes an internal node. The module also evaluates
the expected number of active agents on a perfect tree via the delegation
recurrence and checks it by Monte-Carlo simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AgentNode:
    id: int
    members: frozenset[int]
    children: tuple[int, int] | None = None
    feature_index: int | None = None
    merge_height: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True)
class AgentTree:
    nodes: tuple[AgentNode, ...]
    root_id: int

    @property
    def n_features(self) -> int:
        return (len(self.nodes) + 1) // 2

    def node(self, node_id: int) -> AgentNode:
        return self.nodes[node_id]

    @property
    def root(self) -> AgentNode:
        return self.nodes[self.root_id]


@dataclass(frozen=True)
class TreeDiagnostics:
    balance_factor: float
    height: int
    node_count: int


def ward_distance(cluster_a: tuple[int, np.ndarray], cluster_b: tuple[int, np.ndarray]) -> float:
    """Ward merge cost: (|Ca||Cb| / (|Ca|+|Cb|)) * squared distance between means."""
    size_a, mean_a = cluster_a
    size_b, mean_b = cluster_b
    if size_a < 1 or size_b < 1:
        raise ValueError("cluster sizes must be at least 1")
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    if mean_a.shape != mean_b.shape:
        raise ValueError("cluster mean vectors must have equal length")
    diff = mean_a - mean_b
    return float(size_a * size_b / (size_a + size_b) * np.dot(diff, diff))


def build_hierarchy(states: np.ndarray | list[np.ndarray]) -> AgentTree:
    """Agglomerate n state vectors into a binary tree of 2n-1 agent nodes.

    Pairwise Ward distances are kept under Lance-Williams updates; ties on the
    minimum distance break toward the lexicographically smallest (id, id) pair.
    """
    H = np.asarray(states, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 2:
        raise ValueError("need at least 2 equal-length state vectors")
    n = H.shape[0]

    nodes = [
        AgentNode(id=i, members=frozenset([i]), feature_index=i)
        for i in range(n)
    ]
    sizes = {i: 1 for i in range(n)}
    # distances keyed by (min_id, max_id) over active cluster ids
    dist: dict[tuple[int, int], float] = {}
    active = list(range(n))
    for ai in range(n):
        for bi in range(ai + 1, n):
            dist[(ai, bi)] = ward_distance((1, H[ai]), (1, H[bi]))

    for step in range(n - 1):
        best_pair = None
        best_d = math.inf
        for ai_pos in range(len(active)):
            a = active[ai_pos]
            for bi_pos in range(ai_pos + 1, len(active)):
                b = active[bi_pos]
                d = dist[(a, b) if a < b else (b, a)]
                if d < best_d:
                    best_d = d
                    best_pair = (a, b) if a < b else (b, a)
        a, b = best_pair
        new_id = n + step
        nodes.append(
            AgentNode(
                id=new_id,
                members=nodes[a].members | nodes[b].members,
                children=(a, b),
                merge_height=best_d,
            )
        )
        # Lance-Williams update for Ward linkage
        na, nb = sizes[a], sizes[b]
        d_ab = best_d
        for x in active:
            if x in (a, b):
                continue
            nx = sizes[x]
            d_ax = dist[(a, x) if a < x else (x, a)]
            d_bx = dist[(b, x) if b < x else (x, b)]
            dist[(x, new_id)] = (
                (na + nx) * d_ax + (nb + nx) * d_bx - nx * d_ab
            ) / (na + nb + nx)
        sizes[new_id] = na + nb
        active = [x for x in active if x not in (a, b)] + [new_id]

    return AgentTree(nodes=tuple(nodes), root_id=2 * n - 2)


def _subtree_heights(tree: AgentTree) -> dict[int, int]:
    heights: dict[int, int] = {}
    for node in tree.nodes:  # children always precede parents by construction
        if node.is_leaf:
            heights[node.id] = 1
        else:
            left, right = node.children
            heights[node.id] = 1 + max(heights[left], heights[right])
    return heights


def diagnostics(tree: AgentTree) -> TreeDiagnostics:
    """Balance factor (mean left-minus-right subtree height over all nodes) and height."""
    heights = _subtree_heights(tree)
    diffs = []
    for node in tree.nodes:
        if node.is_leaf:
            diffs.append(0.0)
        else:
            left, right = node.children
            diffs.append(float(heights[left] - heights[right]))
    return TreeDiagnostics(
        balance_factor=float(np.mean(diffs)),
        height=heights[tree.root_id],
        node_count=len(tree.nodes),
    )


def expected_active(height: int, p: float) -> float:
    """Expected active agents on a perfect tree: iterate E <- 1 + 2p*E from E(1)=1."""
    if height < 1:
        raise ValueError("height must be at least 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    expected = 1.0
    for _ in range(height - 1):
        expected = 1.0 + 2.0 * p * expected
    return expected


def simulate_active(
    tree: AgentTree | int,
    p: float,
    trials: int,
    seed: int,
) -> tuple[float, float]:
    """Monte-Carlo count of active agents; returns (mean, standard error).

    The root is always counted; every counted internal node delegates to both
    children with probability p. Accepts an AgentTree or a perfect-tree height.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    if isinstance(tree, (int, np.integer)):
        counts = _simulate_perfect(int(tree), p, trials, rng)
    else:
        counts = np.array([_walk_tree(tree, p, rng) for _ in range(trials)], dtype=np.float64)

    mean = float(counts.mean())
    if trials == 1:
        return mean, 0.0
    stderr = float(counts.std(ddof=1) / math.sqrt(trials))
    return mean, stderr


def _simulate_perfect(height: int, p: float, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Level-wise simulation: delegations among counted nodes are Binomial(count, p)."""
    if height < 1:
        raise ValueError("height must be at least 1")
    counted = np.ones(trials, dtype=np.int64)
    totals = np.ones(trials, dtype=np.int64)
    for _ in range(height - 1):
        delegating = rng.binomial(counted, p)
        counted = 2 * delegating
        totals += counted
    return totals.astype(np.float64)


def _walk_tree(tree: AgentTree, p: float, rng: np.random.Generator) -> int:
    count = 0
    stack = [tree.root_id]
    while stack:
        node = tree.node(stack.pop())
        count += 1
        if not node.is_leaf and rng.random() < p:
            stack.extend(node.children)
    return count


def export_tree(tree: AgentTree) -> dict:
    """JSON-ready dict of the tree plus its diagnostics."""
    diag = diagnostics(tree)
    return {
        "nodes": [
            {
                "id": node.id,
                "members": sorted(node.members),
                "children": list(node.children) if node.children else None,
                "feature": node.feature_index,
                "merge_height": node.merge_height,
            }
            for node in tree.nodes
        ],
        "balance_factor": diag.balance_factor,
        "height": diag.height,
    }
