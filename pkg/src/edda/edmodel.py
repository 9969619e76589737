"""Trainable model state and scoring.

A model owns three parameter groups: one shared embedding table covering all
nodes of all domains, one per-domain embedding table, and one per-domain
projection matrix used by the alignment regularizer. Representations for a
domain concatenate the shared (inter-domain) encoding with the per-domain
(intra-domain) encoding; scores are inner products of representations.

Ablation variants drop one side: `use_inter=False` keeps per-domain tables
only, `use_intra=False` keeps the shared table only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .encoders import (
    EmbeddingTable,
    GRecConfig,
    grec_propagate,
    load_table,
    save_table,
)
from .mdgraph import MultiDomainDataset, NodeId, NodeKind

ENCODER_GREC = "grec"
ENCODER_MF = "mf"


@dataclass(frozen=True)
class ModelSpec:
    d_inter: int = 64
    d_intra: int = 64
    d_align: int | None = None  # defaults to d_intra
    encoder: str = ENCODER_GREC
    grec: GRecConfig = field(default_factory=GRecConfig)
    use_inter: bool = True
    use_intra: bool = True
    init_scale: float | None = None  # None: 1/sqrt(dim) per table
    dtype: str = "float64"  # "float32" allowed for production runs

    def __post_init__(self):
        if self.encoder not in (ENCODER_GREC, ENCODER_MF):
            raise ValueError(f"unknown encoder kind {self.encoder!r}")
        if self.d_inter <= 0 or self.d_intra <= 0:
            raise ValueError("embedding dimensions must be positive")
        if not (self.use_inter or self.use_intra):
            raise ValueError("at least one of inter/intra parts must be enabled")

    @property
    def align_dim(self) -> int:
        return self.d_align if self.d_align is not None else self.d_intra

    @property
    def rep_dim(self) -> int:
        return (self.d_inter if self.use_inter else 0) + (
            self.d_intra if self.use_intra else 0
        )


class EDModel:
    """Parameter container; every trainable scalar lives in exactly one group."""

    def __init__(
        self,
        spec: ModelSpec,
        inter: EmbeddingTable | None,
        intra: list[EmbeddingTable] | None,
        proj: list[np.ndarray] | None,
    ):
        if spec.use_inter != (inter is not None):
            raise ValueError("inter table presence must match spec.use_inter")
        if spec.use_intra != (intra is not None and proj is not None):
            raise ValueError("intra tables and projections must match spec.use_intra")
        self.spec = spec
        self.inter = inter
        self.intra = intra
        self.proj = proj

    @property
    def num_domains(self) -> int:
        return len(self.intra) if self.intra is not None else 0

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Named parameter arrays; the union is the full trainable set."""
        if self.inter is not None:
            yield "inter", self.inter.matrix
        if self.intra is not None:
            for d, table in enumerate(self.intra):
                yield f"intra[{d}]", table.matrix
        if self.proj is not None:
            for d, w in enumerate(self.proj):
                yield f"proj[{d}]", w

    def num_parameters(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    def squared_norm(self) -> float:
        return float(sum(np.sum(arr * arr) for _, arr in self.parameters()))

    def copy(self) -> "EDModel":
        return EDModel(
            self.spec,
            self.inter.copy() if self.inter is not None else None,
            [t.copy() for t in self.intra] if self.intra is not None else None,
            [w.copy() for w in self.proj] if self.proj is not None else None,
        )

    # -- representations ---------------------------------------------------

    def propagated(
        self,
        dataset: MultiDomainDataset,
        masks: dict[int, np.ndarray] | None = None,
        universe: MultiDomainDataset | None = None,
    ) -> "PropagatedView":
        """Encode all nodes once against the given dataset's graphs.

        Training passes the training-split dataset (and per-domain edge
        dropout masks). Evaluation also propagates on the training graphs but
        passes the full dataset as `universe`, which defines which nodes
        belong to which domain; nodes of the universe without training edges
        are encoded by their residual term alone.
        """
        np_dtype = np.dtype(self.spec.dtype)
        inter_out = None
        if self.inter is not None:
            if self.spec.encoder == ENCODER_MF:
                inter_out = self.inter.matrix.astype(np_dtype, copy=True)
            else:
                inter_out = np.zeros((len(self.inter), self.spec.d_inter), dtype=np_dtype)
                for d, graph in enumerate(dataset.domains):
                    mask = masks.get(d) if masks is not None else None
                    prop = grec_propagate(graph, self.inter, self.spec.grec, mask)
                    rows = [self.inter.node_index[n] for n in prop.nodes]
                    inter_out[np.asarray(rows)] += prop.matrix
        intra_out = None
        if self.intra is not None:
            intra_out = []
            for d, graph in enumerate(dataset.domains):
                if self.spec.encoder == ENCODER_MF:
                    intra_out.append(None)  # raw rows, looked up on demand
                    continue
                mask = masks.get(d) if masks is not None else None
                intra_out.append(grec_propagate(graph, self.intra[d], self.spec.grec, mask))
        return PropagatedView(self, dataset, inter_out, intra_out, universe)

    def represent(
        self,
        dataset: MultiDomainDataset,
        node: NodeId,
        d: int,
        masks: dict[int, np.ndarray] | None = None,
    ) -> np.ndarray:
        return self.propagated(dataset, masks).represent(node, d)

    def score(
        self, dataset: MultiDomainDataset, u: NodeId, i: NodeId, d: int
    ) -> float:
        view = self.propagated(dataset)
        return float(np.dot(view.represent(u, d), view.represent(i, d)))

    def recommend_topn(
        self,
        dataset: MultiDomainDataset,
        u: NodeId,
        d: int,
        n: int,
        exclude: Iterable[NodeId] = (),
    ) -> list[tuple[NodeId, float]]:
        """Highest-scoring items of domain d, descending score, ties by item id."""
        if n < 1:
            raise ValueError("n must be at least 1")
        view = self.propagated(dataset)
        excluded = {node.id for node in exclude}
        items = [
            NodeId(NodeKind.ITEM, int(i))
            for i in dataset.graph(d).item_ids
            if int(i) not in excluded
        ]
        if not items:
            return []
        z_u = view.represent(u, d)
        scores = view.item_matrix(d, items) @ z_u
        order = sorted(range(len(items)), key=lambda k: (-scores[k], items[k].id))
        return [(items[k], float(scores[k])) for k in order[:n]]


class PropagatedView:
    """Read-only view of encoded node representations for one dataset pass."""

    def __init__(self, model, dataset, inter_out, intra_out, universe=None):
        self.model = model
        self.dataset = dataset
        self.universe = universe if universe is not None else dataset
        self._inter = inter_out  # (n_model_nodes, d_inter) in model.inter row order
        self._intra = intra_out  # per domain: EmbeddingTable or None for MF
        # residual-only factor for nodes absent from the propagation graphs
        spec = model.spec
        self._residual = (
            1.0
            if spec.encoder == ENCODER_MF
            else spec.grec.alpha ** spec.grec.num_layers
        )
        self._inter_full: np.ndarray | None = None
        self._intra_full: dict[int, np.ndarray] = {}

    def inter_matrix(self) -> np.ndarray:
        """Encoded shared embeddings for every model node, fallbacks applied."""
        if self._inter_full is None:
            model = self.model
            if model.spec.encoder == ENCODER_MF:
                self._inter_full = self._inter
            else:
                out = self._residual * model.inter.matrix
                covered = [
                    model.inter.node_index[n]
                    for n in self.dataset.all_nodes
                    if n in model.inter.node_index
                ]
                rows = np.asarray(covered, dtype=np.int64)
                out[rows] = self._inter[rows]
                self._inter_full = out
        return self._inter_full

    def intra_matrix(self, d: int) -> np.ndarray:
        """Encoded per-domain embeddings in model.intra[d] row order."""
        if d not in self._intra_full:
            model = self.model
            table = self._intra[d]
            if table is None:  # MF: raw per-domain rows
                self._intra_full[d] = model.intra[d].matrix
            else:
                out = self._residual * model.intra[d].matrix
                rows = np.asarray(
                    [model.intra[d].node_index[n] for n in table.nodes], dtype=np.int64
                )
                out[rows] = table.matrix
                self._intra_full[d] = out
        return self._intra_full[d]

    def inter_part(self, node: NodeId) -> np.ndarray:
        return self.inter_matrix()[self.model.inter.node_index[node]]

    def intra_part(self, node: NodeId, d: int) -> np.ndarray:
        model = self.model
        try:
            return self.intra_matrix(d)[model.intra[d].node_index[node]]
        except KeyError:
            raise KeyError(f"{node} missing from domain {d} table") from None

    def represent(self, node: NodeId, d: int) -> np.ndarray:
        """Concatenated representation of `node` for domain `d` (inter first)."""
        model = self.model
        if not self.universe.graph(d).contains(node):
            raise KeyError(f"{node} does not belong to domain {d}")
        parts = []
        if model.inter is not None:
            parts.append(self.inter_part(node))
        if model.intra is not None:
            parts.append(self.intra_part(node, d))
        return np.concatenate(parts)

    def represent_many(self, nodes: Sequence[NodeId], d: int) -> np.ndarray:
        return np.stack([self.represent(node, d) for node in nodes])

    def item_matrix(self, d: int, items: Sequence[NodeId]) -> np.ndarray:
        return self.represent_many(items, d)

    def score(self, u: NodeId, i: NodeId, d: int) -> float:
        return float(np.dot(self.represent(u, d), self.represent(i, d)))

    def score_many(self, users: Sequence[NodeId], items: Sequence[NodeId], d: int) -> np.ndarray:
        zu = self.represent_many(users, d)
        zi = self.represent_many(items, d)
        return np.sum(zu * zi, axis=1)


def init_model(spec: ModelSpec, dataset: MultiDomainDataset, seed: int) -> EDModel:
    """Random model: uniform [-s, s] entries with s = 1/sqrt(dim) per table.

    The shared and per-domain tables are drawn independently; two calls with
    the same seed produce identical parameters.
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(spec.dtype)

    def scale(dim: int) -> float:
        return spec.init_scale if spec.init_scale is not None else 1.0 / np.sqrt(dim)

    inter = None
    if spec.use_inter:
        s = scale(spec.d_inter)
        inter = EmbeddingTable(
            dataset.all_nodes,
            rng.uniform(-s, s, size=(len(dataset.all_nodes), spec.d_inter)).astype(dtype),
        )
    intra = None
    proj = None
    if spec.use_intra:
        s = scale(spec.d_intra)
        intra = []
        for graph in dataset.domains:
            nodes = graph.node_ids()
            intra.append(
                EmbeddingTable(
                    nodes, rng.uniform(-s, s, size=(len(nodes), spec.d_intra)).astype(dtype)
                )
            )
        proj = [
            rng.uniform(-s, s, size=(spec.d_intra, spec.align_dim)).astype(dtype)
            for _ in dataset.domains
        ]
    return EDModel(spec, inter, intra, proj)


# -- checkpointing ----------------------------------------------------------


def save_model(directory: str | Path, model: EDModel) -> None:
    """Checkpoint: one binary table per parameter group plus a text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = model.spec
    lines = [
        f"encoder = {spec.encoder}",
        f"d_inter = {spec.d_inter}",
        f"d_intra = {spec.d_intra}",
        f"d_align = {spec.align_dim}",
        f"num_layers = {spec.grec.num_layers}",
        f"alpha = {spec.grec.alpha!r}",
        f"use_inter = {int(spec.use_inter)}",
        f"use_intra = {int(spec.use_intra)}",
        f"num_domains = {model.num_domains}",
    ]
    if model.inter is not None:
        save_table(directory / "inter.bin", model.inter)
        lines.append("inter_file = inter.bin")
    if model.intra is not None:
        for d, table in enumerate(model.intra):
            save_table(directory / f"intra_{d}.bin", table)
            np.save(directory / f"proj_{d}.npy", model.proj[d])
            lines.append(f"intra_file[{d}] = intra_{d}.bin")
            lines.append(f"proj_file[{d}] = proj_{d}.npy")
    (directory / "model.manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(directory: str | Path) -> EDModel:
    directory = Path(directory)
    manifest: dict[str, str] = {}
    for line in (directory / "model.manifest").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            manifest[key.strip()] = value.strip()
    use_inter = bool(int(manifest["use_inter"]))
    use_intra = bool(int(manifest["use_intra"]))
    spec = ModelSpec(
        d_inter=int(manifest["d_inter"]),
        d_intra=int(manifest["d_intra"]),
        d_align=int(manifest["d_align"]),
        encoder=manifest["encoder"],
        grec=GRecConfig(int(manifest["num_layers"]), float(manifest["alpha"])),
        use_inter=use_inter,
        use_intra=use_intra,
    )
    inter = load_table(directory / manifest["inter_file"]) if use_inter else None
    intra = None
    proj = None
    if use_intra:
        n = int(manifest["num_domains"])
        intra = [load_table(directory / manifest[f"intra_file[{d}]"]) for d in range(n)]
        proj = [np.load(directory / manifest[f"proj_file[{d}]"]) for d in range(n)]
    return EDModel(spec, inter, intra, proj)


def variant_spec(base: ModelSpec, variant: str) -> ModelSpec:
    """Model spec for a named ablation variant.

    Single-part variants double their embedding size so parameter counts stay
    comparable to the two-part model.
    """
    if variant in ("edda", "wo-da"):
        return base
    if variant == "inter":
        return replace(base, use_intra=False, d_inter=2 * base.d_inter)
    if variant == "intra":
        return replace(base, use_inter=False, d_intra=2 * base.d_intra)
    if variant == "ed-mf":
        return replace(base, encoder=ENCODER_MF)
    raise ValueError(f"unknown variant {variant!r}")
