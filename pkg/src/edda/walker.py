"""Random-walk node similarity across domain pairs.

For a pair of domains, the overlapping nodes act as anchors. From every node
we run fixed-length uniform random walks and count which anchor each walk
terminates on; the cosine of two nodes' stop-count vectors measures how
similarly they relate to the shared anchors, even when the nodes live in
different domains. Per source node, the top-k most similar same-kind nodes of
the other domain become alignment pairs.

Walk streams are seeded per source node, so results do not depend on
scheduling or iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdgraph import AnchorSet, DomainGraph, MultiDomainDataset, NodeId, NodeKind, anchors


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 4
    num_walks: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        if self.walk_length < 1:
            raise ValueError("walk_length must be at least 1")
        if self.num_walks < 1:
            raise ValueError("num_walks must be at least 1")


@dataclass(frozen=True)
class StopCountVector:
    """How many walks from `source` terminated on each anchor of the pair."""

    source: NodeId
    domain_pair: tuple[int, int]
    counts: np.ndarray

    def normalized(self) -> np.ndarray:
        norm = np.linalg.norm(self.counts)
        if norm == 0.0:
            return np.zeros(len(self.counts))
        return self.counts / norm


@dataclass(frozen=True)
class SimilarPair:
    source: NodeId  # node in the first domain of the pair
    target: NodeId  # node in the second domain of the pair
    similarity: float


@dataclass(frozen=True)
class SimilarPairSet:
    """Top-k similar target nodes per source node, for one ordered domain pair."""

    domain_pair: tuple[int, int]  # (source domain, target domain)
    pairs: tuple[SimilarPair, ...]


def _source_rng(cfg: WalkConfig, node: NodeId) -> np.random.Generator:
    # independent stream per source node, derived from the root seed
    return np.random.default_rng(
        np.random.SeedSequence(entropy=(cfg.rng_seed, int(node.kind), int(node.id)))
    )


def _simulate_stops(graph: DomainGraph, start: int, cfg: WalkConfig, rng) -> np.ndarray:
    """Local indices of the final nodes of `num_walks` walks from `start`."""
    current = np.full(cfg.num_walks, start, dtype=np.int64)
    indptr, indices = graph.adj_indptr, graph.adj_indices
    for _ in range(cfg.walk_length):
        start_ix = indptr[current]
        degree = indptr[current + 1] - start_ix
        step = (rng.random(cfg.num_walks) * degree).astype(np.int64)
        current = indices[start_ix + step]
    return current


def run_walks(
    graph: DomainGraph, source: NodeId, anchor_set: AnchorSet, cfg: WalkConfig
) -> StopCountVector:
    """Stop counts over the pair's anchors for fixed-length walks from `source`.

    Each walk takes exactly `walk_length` uniform steps; only the final node
    counts, and only if it is an anchor.
    """
    rng = _source_rng(cfg, source)
    stops = _simulate_stops(graph, graph.local_index(source), cfg, rng)
    anchor_pos = np.full(graph.n_nodes, -1, dtype=np.int64)
    for pos, node in enumerate(anchor_set.nodes):
        if graph.contains(node):
            anchor_pos[graph.local_index(node)] = pos
    hit = anchor_pos[stops]
    counts = np.bincount(hit[hit >= 0], minlength=len(anchor_set)).astype(np.int64)
    return StopCountVector(source, anchor_set.domain_pair, counts)


def node_similarity(c_u: StopCountVector, c_v: StopCountVector) -> float:
    """Cosine of two stop-count vectors; 0 whenever either vector is all zero."""
    if c_u.domain_pair != c_v.domain_pair or len(c_u.counts) != len(c_v.counts):
        raise ValueError("stop-count vectors are indexed by different anchor sets")
    nu = np.linalg.norm(c_u.counts)
    nv = np.linalg.norm(c_v.counts)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    value = float(np.dot(c_u.counts, c_v.counts) / (nu * nv))
    return min(max(value, 0.0), 1.0)


def _stop_matrix(
    graph: DomainGraph, nodes: Sequence[NodeId], anchor_set: AnchorSet, cfg: WalkConfig
) -> np.ndarray:
    rows = [run_walks(graph, node, anchor_set, cfg).normalized() for node in nodes]
    return np.array(rows) if rows else np.zeros((0, len(anchor_set)))


def mine_pairs(
    dataset: MultiDomainDataset, d: int, d_prime: int, k: int, cfg: WalkConfig
) -> SimilarPairSet:
    """Top-k similar nodes in `d_prime` for every node of `d`.

    Candidates are restricted to the source node's kind: on a bipartite graph
    a walk of even length terminates on the source's own side, so cross-kind
    stop profiles cannot match. Pairs with zero similarity are omitted; ties
    break toward the smaller node id. Exact brute force over all candidates.
    """
    if d == d_prime:
        raise ValueError("pair mining requires two distinct domains")
    if k < 1:
        raise ValueError("k must be at least 1")
    anchor_set = anchors(dataset, d, d_prime)
    if len(anchor_set) == 0:
        return SimilarPairSet((d, d_prime), ())

    src_graph, dst_graph = dataset.graph(d), dataset.graph(d_prime)
    out: list[SimilarPair] = []
    for kind in (NodeKind.USER, NodeKind.ITEM):
        src_nodes = [n for n in src_graph.node_ids() if n.kind == kind]
        dst_nodes = [n for n in dst_graph.node_ids() if n.kind == kind]
        if not src_nodes or not dst_nodes:
            continue
        src_mat = _stop_matrix(src_graph, src_nodes, anchor_set, cfg)
        dst_mat = _stop_matrix(dst_graph, dst_nodes, anchor_set, cfg)
        sims = np.clip(src_mat @ dst_mat.T, 0.0, 1.0)
        dst_ids = np.array([n.id for n in dst_nodes])
        for row, src in enumerate(src_nodes):
            order = np.lexsort((dst_ids, -sims[row]))
            for col in order[:k]:
                s = float(sims[row, col])
                if s > 0.0:
                    out.append(SimilarPair(src, dst_nodes[col], s))
    return SimilarPairSet((d, d_prime), tuple(out))


def mine_all_pairs(
    dataset: MultiDomainDataset, k: int, cfg: WalkConfig
) -> list[SimilarPairSet]:
    """Pair sets for every ordered domain pair of the dataset."""
    out = []
    for d in range(dataset.num_domains):
        for d_prime in range(dataset.num_domains):
            if d != d_prime:
                out.append(mine_pairs(dataset, d, d_prime, k, cfg))
    return out


def write_pairs(path: str | Path, pair_sets: Sequence[SimilarPairSet]) -> None:
    """Tab-separated export: d, d', kind, source id, target id, similarity."""
    with open(path, "w", encoding="utf-8") as handle:
        for pair_set in pair_sets:
            d, d_prime = pair_set.domain_pair
            for p in pair_set.pairs:
                kind = "user" if p.source.kind == NodeKind.USER else "item"
                handle.write(
                    f"{d}\t{d_prime}\t{kind}\t{p.source.id}\t{p.target.id}\t{p.similarity:.12g}\n"
                )


def load_pairs(path: str | Path) -> list[SimilarPairSet]:
    """Read a pair export back into one SimilarPairSet per ordered domain pair."""
    grouped: dict[tuple[int, int], list[SimilarPair]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 6:
                raise ValueError(f"{path} line {line_no}: expected 6 fields")
            d, d_prime = int(fields[0]), int(fields[1])
            kind = NodeKind.USER if fields[2] == "user" else NodeKind.ITEM
            pair = SimilarPair(
                NodeId(kind, int(fields[3])), NodeId(kind, int(fields[4])), float(fields[5])
            )
            grouped.setdefault((d, d_prime), []).append(pair)
    return [
        SimilarPairSet(pair, tuple(pairs)) for pair, pairs in sorted(grouped.items())
    ]
