"""Entropy-based distances between instruments and UPGMA clustering.

The pairwise distance is a symmetrized Kullback-Leibler divergence of
block distributions, each direction normalized by the corrected block
entropy of the reference sequence.  Co-movement entropy scores how much
two return series move together.  Clustering is plain UPGMA over the
resulting distance matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import (
    BlockDistribution,
    SymbolSequence,
    block_frequencies,
    discretize_pair,
    entropy_estimate,
    select_block_length,
)
from .errors import DegenerateInputError, InsufficientDataError


@dataclass
class DistanceMatrix:
    labels: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise ValueError("matrix does not match labels")
        if not np.allclose(self.values, self.values.T, atol=1e-12):
            raise ValueError("matrix must be symmetric")
        if np.any(np.diag(self.values) != 0):
            raise ValueError("diagonal must be exactly zero")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("label," + ",".join(str(l) for l in self.labels) + "\n")
            for label, row in zip(self.labels, self.values):
                fh.write(str(label) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class Dendrogram:
    """UPGMA merge history: (id_a, id_b, height, size) per merge.

    Leaves are 0..n-1; merge i creates cluster n+i (the linkage-list
    convention).
    """

    n_leaves: int
    merges: list
    labels: list = field(default_factory=list)

    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def _members(self) -> dict:
        members = {i: [i] for i in range(self.n_leaves)}
        for i, (a, b, _, _) in enumerate(self.merges):
            members[self.n_leaves + i] = members[a] + members[b]
        return members

    def cophenetic(self) -> np.ndarray:
        """Matrix of merge heights at which each leaf pair first joins."""
        n = self.n_leaves
        members = {i: [i] for i in range(n)}
        out = np.zeros((n, n))
        for i, (a, b, h, _) in enumerate(self.merges):
            for x in members[a]:
                for y in members[b]:
                    out[x, y] = out[y, x] = h
            members[n + i] = members[a] + members[b]
        return out

    def newick(self) -> str:
        """Newick text with ultrametric branch lengths, smaller subtree first."""
        n = self.n_leaves
        height = {i: 0.0 for i in range(n)}
        size = {i: 1 for i in range(n)}
        children = {}
        for i, (a, b, h, s) in enumerate(self.merges):
            node = n + i
            children[node] = (a, b)
            height[node] = h
            size[node] = s

        def render(node: int) -> str:
            if node < n:
                return str(self.labels[node]) if self.labels else f"L{node}"
            a, b = children[node]
            a, b = sorted((a, b), key=lambda c: (size[c], min(self._leaf_ids(c, children))))
            parts = []
            for child in (a, b):
                length = (height[node] - height[child]) / 2.0
                parts.append(f"{render(child)}:{length:.12g}")
            return "(" + ",".join(parts) + ")"

        root = n + len(self.merges) - 1
        return render(root) + ";"

    def _leaf_ids(self, node: int, children: dict) -> list:
        if node < self.n_leaves:
            return [node]
        a, b = children[node]
        return self._leaf_ids(a, children) + self._leaf_ids(b, children)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("child_a,child_b,height,size\n")
            for a, b, h, s in self.merges:
                fh.write(f"{a},{b},{repr(float(h))},{s}\n")


def _smoothed(dist: BlockDistribution, support: np.ndarray, pseudo_count: float) -> np.ndarray:
    counts = np.zeros(support.size)
    lookup = {int(c): int(f) for c, f in zip(dist.codes, dist.counts)}
    for i, code in enumerate(support):
        counts[i] = lookup.get(int(code), 0)
    return (counts + pseudo_count) / (dist.n_b + pseudo_count * support.size)


def kl_distance(
    dist_p: BlockDistribution,
    dist_q: BlockDistribution,
    pseudo_count: float = 0.5,
    support: str = "union",
) -> float:
    """Symmetrized KL distance between two block distributions.

    D = KL(P|Q)/H(P) + KL(Q|P)/H(Q), with probabilities additively
    smoothed over the union (or intersection) of observed blocks and H the
    corrected block entropy of each sequence, all in base-A logs.
    """
    if dist_p.alphabet != dist_q.alphabet or dist_p.k != dist_q.k:
        raise ValueError("distributions must share alphabet and block length")
    if support == "union":
        codes = np.union1d(dist_p.codes, dist_q.codes)
    elif support == "intersection":
        codes = np.intersect1d(dist_p.codes, dist_q.codes)
    else:
        raise ValueError(f"unknown support mode {support!r}")
    if codes.size == 0:
        raise InsufficientDataError("empty common support")

    h_p = entropy_estimate(dist_p).corrected
    h_q = entropy_estimate(dist_q).corrected
    if h_p <= 0 or h_q <= 0:
        raise DegenerateInputError("corrected entropy must be positive")

    ln_a = math.log(dist_p.alphabet)
    p = _smoothed(dist_p, codes, pseudo_count)
    q = _smoothed(dist_q, codes, pseudo_count)
    kl_pq = float(np.sum(p * np.log(p / q))) / ln_a
    kl_qp = float(np.sum(q * np.log(q / p))) / ln_a
    return kl_pq / h_p + kl_qp / h_q


def paired_block_distributions(
    seq_1: SymbolSequence, seq_2: SymbolSequence
) -> tuple[BlockDistribution, BlockDistribution]:
    """Block distributions of two sequences at the largest block length
    suitable for both (the smaller of the two individual selections)."""
    k = min(select_block_length(seq_1), select_block_length(seq_2))
    return block_frequencies(seq_1, k), block_frequencies(seq_2, k)


def comovement_entropy(returns_1: np.ndarray, returns_2: np.ndarray) -> float:
    """Corrected entropy rate of the joint up/down discretization of a pair."""
    seq = discretize_pair(returns_1, returns_2)
    k = select_block_length(seq)
    return entropy_estimate(block_frequencies(seq, k)).rate


def upgma(matrix: DistanceMatrix) -> Dendrogram:
    """Average-linkage agglomeration with deterministic tie-breaking.

    The closest pair merges first; inter-cluster distance is the
    unweighted mean over cross-pair leaf distances (maintained by size
    weighting); ties resolve to the lowest cluster ids.
    """
    d0 = matrix.values
    n = len(matrix.labels)
    if n < 2:
        raise InsufficientDataError("need at least 2 leaves")
    if not np.all(np.isfinite(d0)):
        raise ValueError("distance matrix contains non-finite entries")

    dist = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(d0[i, j])
    sizes = {i: 1 for i in range(n)}
    active = set(range(n))
    merges = []
    next_id = n
    while len(active) > 1:
        best = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        (a, b), height = best
        size = sizes[a] + sizes[b]
        merges.append((a, b, height, size))
        active.discard(a)
        active.discard(b)
        for c in active:
            da = dist.pop((min(a, c), max(a, c)))
            db = dist.pop((min(b, c), max(b, c)))
            dist[(c, next_id)] = (sizes[a] * da + sizes[b] * db) / size
        del dist[(a, b)]
        sizes[next_id] = size
        active.add(next_id)
        next_id += 1
    return Dendrogram(n_leaves=n, merges=merges, labels=list(matrix.labels))


def cut_dendrogram(dendrogram: Dendrogram, threshold: float) -> dict:
    """Cluster assignment from merges strictly below the threshold.

    Returns {leaf index: cluster id}, ids numbered by lowest member.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    n = dendrogram.n_leaves
    parent = list(range(n + len(dendrogram.merges)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, (a, b, h, _) in enumerate(dendrogram.merges):
        node = n + i
        if h < threshold:
            parent[find(a)] = node
            parent[find(b)] = node
        else:
            parent[node] = node

    groups = {}
    for leaf in range(n):
        groups.setdefault(find(leaf), []).append(leaf)
    assignment = {}
    for cluster_id, (_, leaves) in enumerate(sorted(groups.items(), key=lambda kv: min(kv[1]))):
        for leaf in leaves:
            assignment[leaf] = cluster_id
    return assignment
