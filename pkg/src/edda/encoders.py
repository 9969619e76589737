"""Graph propagation encoders over domain graphs.

The propagation encoder runs L rounds of degree-normalized neighbor
aggregation with a self-residual weighted by alpha:

    e^(l) = alpha * e^(l-1) + (1 - alpha) * sum_{neighbors} e^(l-1) / sqrt(|N_u| |N_i|)

It is linear in the input embeddings and has no trainable parameters of its
own. The inter-domain encoder applies it on every domain graph and sums the
last-layer outputs per node. The MF encoder is the identity (raw embeddings).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mdgraph import DomainGraph, MultiDomainDataset, NodeId, NodeKind

TABLE_MAGIC = b"EDDA"
TABLE_VERSION = 1


class EmbeddingTable:
    """Dense embedding rows keyed by NodeId, all of one dimension."""

    def __init__(self, nodes: Sequence[NodeId], matrix: np.ndarray):
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != len(nodes):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match {len(nodes)} nodes"
            )
        self.nodes: tuple[NodeId, ...] = tuple(nodes)
        self.matrix = matrix
        self.node_index: dict[NodeId, int] = {n: k for k, n in enumerate(self.nodes)}

    @classmethod
    def zeros(cls, nodes: Sequence[NodeId], dim: int, dtype=np.float64) -> "EmbeddingTable":
        return cls(nodes, np.zeros((len(nodes), dim), dtype=dtype))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.nodes)

    def row(self, node: NodeId) -> np.ndarray:
        try:
            return self.matrix[self.node_index[node]]
        except KeyError:
            raise KeyError(f"{node} missing from embedding table") from None

    def gather(self, nodes: Sequence[NodeId]) -> np.ndarray:
        """Rows for the given nodes, in the given order."""
        try:
            idx = [self.node_index[n] for n in nodes]
        except KeyError as err:
            raise KeyError(f"node missing from embedding table: {err}") from None
        return self.matrix[np.asarray(idx, dtype=np.int64)]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.nodes, self.matrix.copy())


@dataclass(frozen=True)
class GRecConfig:
    """Propagation depth and self-residual weight."""

    num_layers: int = 2
    alpha: float = 0.1

    def __post_init__(self):
        if self.num_layers < 0:
            raise ValueError("num_layers must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def grec_propagate(
    graph: DomainGraph,
    table: EmbeddingTable,
    cfg: GRecConfig,
    dropout_mask: np.ndarray | None = None,
) -> EmbeddingTable:
    """Layer-L embeddings for every node of `graph`; the input is not mutated.

    `dropout_mask` is a boolean array over the graph's canonical edge order;
    masked-out edges are removed from aggregation while normalization keeps
    full-graph degrees. A node whose edges are all masked keeps only its
    alpha-weighted residual.
    """
    nodes = graph.node_ids()
    x = np.array(table.gather(nodes), dtype=table.matrix.dtype)
    if cfg.num_layers == 0 or cfg.alpha == 1.0:
        # exact fixpoints, bypass the operator to keep them bitwise
        return EmbeddingTable(nodes, x)
    s = graph.sym_norm_adjacency(dropout_mask)
    for _ in range(cfg.num_layers):
        x = cfg.alpha * x + (1.0 - cfg.alpha) * (s @ x)
    return EmbeddingTable(nodes, x)


def inter_encode(
    dataset: MultiDomainDataset,
    inter_table: EmbeddingTable,
    cfg: GRecConfig,
    masks: Mapping[int, np.ndarray] | None = None,
) -> EmbeddingTable:
    """Sum of per-domain propagated embeddings over all domains containing a node.

    Every domain propagates the same input table; a node appearing in several
    domains accumulates one last-layer term per domain.
    """
    out = np.zeros((len(dataset.all_nodes), inter_table.dim), dtype=inter_table.matrix.dtype)
    for d, graph in enumerate(dataset.domains):
        mask = masks.get(d) if masks is not None else None
        propagated = grec_propagate(graph, inter_table, cfg, mask)
        out[dataset.global_rows[d]] += propagated.matrix
    return EmbeddingTable(dataset.all_nodes, out)


def mf_encode(table: EmbeddingTable) -> EmbeddingTable:
    """Identity encoder: raw embeddings are used as-is."""
    return table


def save_table(path: str | Path, table: EmbeddingTable) -> None:
    """Write the flat binary table format (little-endian).

    Header: magic `EDDA`, version u32, dim u32, count u64. Records follow as
    (kind u8, id u64, dim x f64).
    """
    record = np.dtype(
        [("kind", "u1"), ("id", "<u8"), ("vec", "<f8", (table.dim,))]
    )
    data = np.empty(len(table), dtype=record)
    data["kind"] = [n.kind for n in table.nodes]
    data["id"] = [n.id for n in table.nodes]
    data["vec"] = table.matrix
    with open(path, "wb") as handle:
        handle.write(TABLE_MAGIC)
        handle.write(struct.pack("<IIQ", TABLE_VERSION, table.dim, len(table)))
        handle.write(data.tobytes())


def load_table(path: str | Path) -> EmbeddingTable:
    with open(path, "rb") as handle:
        raw = handle.read()
    if raw[:4] != TABLE_MAGIC:
        raise ValueError(f"{path}: not an embedding table file")
    version, dim, count = struct.unpack("<IIQ", raw[4:20])
    if version != TABLE_VERSION:
        raise ValueError(f"{path}: unsupported table version {version}")
    record = np.dtype([("kind", "u1"), ("id", "<u8"), ("vec", "<f8", (dim,))])
    data = np.frombuffer(raw[20:], dtype=record, count=count)
    nodes = [NodeId(NodeKind(int(k)), int(i)) for k, i in zip(data["kind"], data["id"])]
    return EmbeddingTable(nodes, np.array(data["vec"], dtype=np.float64))
