"""Pairwise-ranking training with an alignment regularizer.

The objective is

    L = L_rank + beta * L_align + lambda * ||params||^2

where L_rank sums -ln sigmoid(s(u,i+) - s(u,i-)) over sampled triplets of all
domains, and L_align sums squared distances between projected per-domain
embeddings of mined cross-domain pairs. All gradients are exact: propagation
is linear, so backpropagation through it applies the (symmetric) propagation
operator to the upstream gradients. Per-domain embedding tables receive
gradients only from their own domain's triplets (and from alignment pairs
touching them); the shared table receives gradients from every domain.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .edmodel import ENCODER_MF, EDModel
from .mdgraph import DomainGraph, MultiDomainDataset, NodeId, NodeKind
from .walker import SimilarPairSet

logger = logging.getLogger(__name__)


class Triplet(NamedTuple):
    domain: int
    user: NodeId
    pos_item: NodeId
    neg_item: NodeId


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.03
    reg_lambda: float = 1e-4
    learning_rate: float = 0.001
    batch_size: int = 8092  # kept verbatim from the reported setup
    edge_dropout: float = 0.3
    epochs: int = 100
    k: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int | None = None  # early stop on validation AUC when set
    min_epochs: int = 0  # epochs exempt from early-stop bookkeeping
    align_subsample_factor: int = 10

    def __post_init__(self):
        if self.beta < 0 or self.reg_lambda < 0:
            raise ValueError("beta and reg_lambda must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid learning_rate/batch_size/epochs")
        if not 0.0 <= self.edge_dropout < 1.0:
            raise ValueError("edge_dropout must lie in [0, 1)")


class TrainingDiverged(RuntimeError):
    """Non-finite loss; carries the diagnostic state at the failing step."""

    def __init__(self, message: str, state: dict):
        super().__init__(f"{message}: {state}")
        self.state = state


@dataclass
class EpochLog:
    epoch: int
    bpr: float
    align: float
    total: float
    val_auc: float
    val_recall: float
    wall_ms: float


# -- elementary pieces -------------------------------------------------------


def bpr_loss(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Sum of -ln sigmoid(s+ - s-), via the stable softplus form."""
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.shape != scores_neg.shape:
        raise ValueError("score vectors must have equal length")
    return float(np.sum(np.logaddexp(0.0, -(scores_pos - scores_neg))))


def edge_dropout(graph: DomainGraph, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean retention mask over the graph's canonical edge order."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("dropout ratio must lie in [0, 1)")
    return rng.random(graph.n_edges) >= ratio


def sample_triplets(
    dataset: MultiDomainDataset, d: int, count: int, rng: np.random.Generator
) -> list[Triplet]:
    """Uniform observed (u, i+) pairs with rejection-sampled negatives.

    A user who interacted with every item of the domain cannot produce a
    triplet and is skipped with a warning.
    """
    graph = dataset.graph(d)
    if graph.n_items < 2:
        raise ValueError(f"domain {d} needs at least 2 items for negative sampling")
    positives = [set() for _ in range(graph.n_users)]
    for u_loc, i_loc in zip(graph.edge_user, graph.edge_item):
        positives[u_loc].add(int(i_loc))
    eligible = np.array([len(p) < graph.n_items for p in positives])
    if not eligible.any():
        logger.warning("domain %d: every user interacted with every item", d)
        return []

    warned: set[int] = set()
    out: list[Triplet] = []
    while len(out) < count:
        e = int(rng.integers(graph.n_edges))
        u_loc = int(graph.edge_user[e])
        if not eligible[u_loc]:
            if u_loc not in warned:
                warned.add(u_loc)
                logger.warning(
                    "domain %d: user %d interacts with every item, skipping",
                    d,
                    int(graph.user_ids[u_loc]),
                )
            continue
        n_loc = int(rng.integers(graph.n_items))
        while n_loc in positives[u_loc]:
            n_loc = int(rng.integers(graph.n_items))
        out.append(
            Triplet(
                d,
                NodeId(NodeKind.USER, int(graph.user_ids[u_loc])),
                NodeId(NodeKind.ITEM, int(graph.item_ids[graph.edge_item[e]])),
                NodeId(NodeKind.ITEM, int(graph.item_ids[n_loc])),
            )
        )
    return out


# -- forward/backward core ----------------------------------------------------


class _Context:
    """Index plumbing tying model parameter rows to a dataset's graphs."""

    def __init__(self, model: EDModel, dataset: MultiDomainDataset):
        self.model = model
        self.dataset = dataset
        self.inter_rows: list[np.ndarray | None] = []
        self.intra_rows: list[np.ndarray | None] = []
        for graph in dataset.domains:
            nodes = graph.node_ids()
            if model.inter is not None:
                index = model.inter.node_index
                self.inter_rows.append(np.array([index[n] for n in nodes], dtype=np.int64))
            else:
                self.inter_rows.append(None)
            if model.intra is not None:
                index = model.intra[graph.domain].node_index
                self.intra_rows.append(np.array([index[n] for n in nodes], dtype=np.int64))
            else:
                self.intra_rows.append(None)

    def operators(self, masks) -> list:
        """Per-domain normalized adjacency, or None when propagation is identity."""
        spec = self.model.spec
        grec = spec.grec
        if spec.encoder == ENCODER_MF or grec.num_layers == 0 or grec.alpha == 1.0:
            return [None] * self.dataset.num_domains
        out = []
        for d, graph in enumerate(self.dataset.domains):
            mask = masks.get(d) if masks is not None else None
            out.append(graph.sym_norm_adjacency(mask))
        return out


def _apply_layers(op, x: np.ndarray, grec) -> np.ndarray:
    """L rounds of alpha-residual aggregation; identity when op is None.

    The operator is symmetric, so this doubles as the transposed backward map.
    """
    if op is None:
        return x
    for _ in range(grec.num_layers):
        x = grec.alpha * x + (1.0 - grec.alpha) * (op @ x)
    return x


def _group_triplets(ctx: _Context, triplets: Sequence[Triplet]) -> dict[int, np.ndarray]:
    grouped: dict[int, list[list[int]]] = {}
    for t in triplets:
        graph = ctx.dataset.graph(t.domain)
        grouped.setdefault(t.domain, []).append(
            [
                graph.local_index(t.user),
                graph.local_index(t.pos_item),
                graph.local_index(t.neg_item),
            ]
        )
    return {d: np.asarray(rows, dtype=np.int64).T for d, rows in grouped.items()}


def _prepare_pairs(model: EDModel, pair_sets: Iterable[SimilarPairSet]):
    """Model-table row indices for every alignment pair, per ordered domain pair."""
    prepared = []
    for pair_set in pair_sets:
        if not pair_set.pairs:
            continue
        if model.intra is None:
            raise ValueError("alignment pairs require per-domain embedding tables")
        d, d_prime = pair_set.domain_pair
        src_index = model.intra[d].node_index
        dst_index = model.intra[d_prime].node_index
        try:
            idx_u = np.array([src_index[p.source] for p in pair_set.pairs], dtype=np.int64)
            idx_v = np.array([dst_index[p.target] for p in pair_set.pairs], dtype=np.int64)
        except KeyError as err:
            raise KeyError(f"alignment pair node missing from domain table: {err}") from None
        prepared.append((d, d_prime, idx_u, idx_v))
    return prepared


def _compute(
    ctx: _Context,
    grouped: dict[int, np.ndarray],
    prepared_pairs,
    cfg: TrainConfig,
    masks,
    align_scale: float,
    want_grads: bool,
):
    """Loss parts and (optionally) exact gradients for one batch."""
    model = ctx.model
    spec = model.spec
    grec = spec.grec
    ops = ctx.operators(masks)

    # forward: shared table encoded on all graphs, per-domain tables on theirs
    g_mat = None
    if model.inter is not None:
        if spec.encoder == ENCODER_MF:
            g_mat = model.inter.matrix
        else:
            g_mat = np.zeros_like(model.inter.matrix)
            for d in range(ctx.dataset.num_domains):
                rows = ctx.inter_rows[d]
                g_mat[rows] += _apply_layers(ops[d], model.inter.matrix[rows], grec)
    q_mats: dict[int, np.ndarray] = {}
    if model.intra is not None:
        for d in grouped:
            gathered = model.intra[d].matrix[ctx.intra_rows[d]]
            q_mats[d] = _apply_layers(ops[d], gathered, grec)

    # ranking loss and its gradient at the representation level
    l_bpr = 0.0
    d_g = np.zeros_like(g_mat) if (want_grads and g_mat is not None) else None
    d_q: dict[int, np.ndarray] = {}
    for d, (u_loc, p_loc, n_loc) in grouped.items():
        x = np.zeros(len(u_loc))
        if g_mat is not None:
            rows = ctx.inter_rows[d]
            gu, gp, gn = g_mat[rows[u_loc]], g_mat[rows[p_loc]], g_mat[rows[n_loc]]
            x += np.sum(gu * (gp - gn), axis=1)
        if model.intra is not None:
            q = q_mats[d]
            qu, qp, qn = q[u_loc], q[p_loc], q[n_loc]
            x += np.sum(qu * (qp - qn), axis=1)
        l_bpr += float(np.sum(np.logaddexp(0.0, -x)))
        if not want_grads:
            continue
        g = -expit(-x)[:, None]  # dL/dx, negative
        if g_mat is not None:
            rows = ctx.inter_rows[d]
            np.add.at(d_g, rows[u_loc], g * (gp - gn))
            np.add.at(d_g, rows[p_loc], g * gu)
            np.add.at(d_g, rows[n_loc], -g * gu)
        if model.intra is not None:
            dq = np.zeros_like(q_mats[d])
            np.add.at(dq, u_loc, g * (qp - qn))
            np.add.at(dq, p_loc, g * qu)
            np.add.at(dq, n_loc, -g * qu)
            d_q[d] = dq

    # alignment loss on raw per-domain embeddings and projections
    l_align = 0.0
    grads: dict[str, np.ndarray] = {}
    if want_grads:
        for name, arr in model.parameters():
            grads[name] = np.zeros_like(arr)
    for d, d_prime, idx_u, idx_v in prepared_pairs:
        e_u = model.intra[d].matrix[idx_u]
        e_v = model.intra[d_prime].matrix[idx_v]
        w_d, w_p = model.proj[d], model.proj[d_prime]
        diff = e_u @ w_d - e_v @ w_p
        l_align += float(np.sum(diff * diff))
        if want_grads:
            coeff = 2.0 * cfg.beta * align_scale
            np.add.at(grads[f"intra[{d}]"], idx_u, coeff * diff @ w_d.T)
            np.add.at(grads[f"intra[{d_prime}]"], idx_v, -coeff * diff @ w_p.T)
            grads[f"proj[{d}]"] += coeff * e_u.T @ diff
            grads[f"proj[{d_prime}]"] += -coeff * e_v.T @ diff

    reg = model.squared_norm()
    total = l_bpr + cfg.beta * align_scale * l_align + cfg.reg_lambda * reg
    if not want_grads:
        return total, l_bpr, l_align, reg, None

    # backpropagate through the (symmetric) propagation and add regularization
    if d_g is not None:
        if spec.encoder == ENCODER_MF:
            grads["inter"] += d_g
        else:
            for d in range(ctx.dataset.num_domains):
                rows = ctx.inter_rows[d]
                grads["inter"][rows] += _apply_layers(ops[d], d_g[rows], grec)
    for d, dq in d_q.items():
        back = _apply_layers(ops[d], dq, grec)
        np.add.at(grads[f"intra[{d}]"], ctx.intra_rows[d], back)
    for name, arr in model.parameters():
        grads[name] += (2.0 * cfg.reg_lambda) * arr
    return total, l_bpr, l_align, reg, grads


# -- public loss / gradient operations ---------------------------------------


def alignment_loss(model: EDModel, pair_sets: Iterable[SimilarPairSet]) -> float:
    """Sum over pairs of squared projected embedding distance."""
    total = 0.0
    for d, d_prime, idx_u, idx_v in _prepare_pairs(model, pair_sets):
        diff = (
            model.intra[d].matrix[idx_u] @ model.proj[d]
            - model.intra[d_prime].matrix[idx_v] @ model.proj[d_prime]
        )
        total += float(np.sum(diff * diff))
    return total


def total_loss(
    model: EDModel,
    dataset: MultiDomainDataset,
    triplets: Sequence[Triplet],
    pair_sets: Sequence[SimilarPairSet],
    cfg: TrainConfig,
    masks: dict[int, np.ndarray] | None = None,
    align_scale: float = 1.0,
) -> float:
    """L_rank + beta * L_align + lambda * ||params||^2 for the given batch."""
    ctx = _Context(model, dataset)
    grouped = _group_triplets(ctx, triplets)
    prepared = _prepare_pairs(model, pair_sets)
    total, _, _, _, _ = _compute(ctx, grouped, prepared, cfg, masks, align_scale, False)
    return total


def gradients(
    model: EDModel,
    dataset: MultiDomainDataset,
    triplets: Sequence[Triplet],
    pair_sets: Sequence[SimilarPairSet],
    cfg: TrainConfig,
    masks: dict[int, np.ndarray] | None = None,
    align_scale: float = 1.0,
) -> dict[str, np.ndarray]:
    """Exact gradient of `total_loss` for every parameter array, by name."""
    ctx = _Context(model, dataset)
    grouped = _group_triplets(ctx, triplets)
    prepared = _prepare_pairs(model, pair_sets)
    _, _, _, _, grads = _compute(ctx, grouped, prepared, cfg, masks, align_scale, True)
    return grads


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: EDModel) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in model.parameters()},
            v={name: np.zeros_like(arr) for name, arr in model.parameters()},
        )


def adam_step(
    model: EDModel, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig
) -> tuple[EDModel, AdamState]:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correct1 = 1.0 - b1 ** state.t
    correct2 = 1.0 - b2 ** state.t
    for name, param in model.parameters():
        g = grads[name]
        if g.shape != param.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        param -= cfg.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + cfg.adam_eps)
    return model, state


# -- training loop ------------------------------------------------------------


def _epoch_batches(graph: DomainGraph, batch_size: int, rng: np.random.Generator):
    """Each observed interaction appears as a positive exactly once per epoch."""
    order = rng.permutation(graph.n_edges)
    return [order[k : k + batch_size] for k in range(0, len(order), batch_size)]


def _negatives_for(
    graph: DomainGraph,
    positives: list[set[int]],
    eligible: np.ndarray,
    u_locs: np.ndarray,
    rng: np.random.Generator,
    warned: set[int],
    d: int,
):
    keep = []
    negs = []
    for row, u_loc in enumerate(u_locs):
        u_loc = int(u_loc)
        if not eligible[u_loc]:
            if u_loc not in warned:
                warned.add(u_loc)
                logger.warning(
                    "domain %d: user %d interacts with every item, skipping",
                    d,
                    int(graph.user_ids[u_loc]),
                )
            continue
        n_loc = int(rng.integers(graph.n_items))
        while n_loc in positives[u_loc]:
            n_loc = int(rng.integers(graph.n_items))
        keep.append(row)
        negs.append(n_loc)
    return np.asarray(keep, dtype=np.int64), np.asarray(negs, dtype=np.int64)


def train(
    model: EDModel,
    split,
    pair_sets: Sequence[SimilarPairSet],
    cfg: TrainConfig,
    callbacks: Sequence[Callable[[EpochLog, EDModel], None]] = (),
    eval_seed: int = 0,
) -> tuple[EDModel, list[EpochLog]]:
    """Optimize the model on a split dataset; returns the model and epoch logs.

    One epoch uses every training interaction as a positive once, in
    per-domain batches interleaved round-robin. Fresh edge-dropout masks are
    drawn for every domain on every batch. When `cfg.patience` is set, stops
    after that many epochs without a validation-AUC improvement and restores
    the best parameters seen.
    """
    from . import evalkit  # local import; evalkit has no trainer dependency

    rng = np.random.default_rng(cfg.seed)
    train_ds = split.train
    ctx = _Context(model, train_ds)
    prepared_pairs = _prepare_pairs(model, pair_sets)
    n_pairs = sum(len(idx_u) for _, _, idx_u, _ in prepared_pairs)
    state = AdamState.for_model(model)

    positives: list[list[set[int]]] = []
    eligible: list[np.ndarray] = []
    for graph in train_ds.domains:
        per_user = [set() for _ in range(graph.n_users)]
        for u_loc, i_loc in zip(graph.edge_user, graph.edge_item):
            per_user[u_loc].add(int(i_loc))
        positives.append(per_user)
        eligible.append(np.array([len(p) < graph.n_items for p in per_user]))

    val_cases = evalkit.build_all_cases(split, which="validation", eval_seed=eval_seed)
    has_val = any(cases for cases in val_cases)
    warned: list[set[int]] = [set() for _ in train_ds.domains]
    logs: list[EpochLog] = []
    best_auc = -np.inf
    best_model: EDModel | None = None
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        t_start = time.perf_counter()
        schedules = [
            _epoch_batches(graph, cfg.batch_size, rng) for graph in train_ds.domains
        ]
        epoch_bpr = epoch_align = epoch_total = 0.0
        for round_idx in range(max(len(s) for s in schedules)):
            for d, batches in enumerate(schedules):
                if round_idx >= len(batches):
                    continue
                graph = train_ds.graph(d)
                edge_idx = batches[round_idx]
                u_locs = graph.edge_user[edge_idx]
                keep, negs = _negatives_for(
                    graph, positives[d], eligible[d], u_locs, rng, warned[d], d
                )
                if len(keep) == 0:
                    continue
                grouped = {
                    d: np.stack(
                        [
                            u_locs[keep],
                            graph.edge_item[edge_idx][keep] + graph.n_users,
                            negs + graph.n_users,
                        ]
                    )
                }
                if cfg.edge_dropout > 0.0:
                    masks = {
                        dd: edge_dropout(g, cfg.edge_dropout, rng)
                        for dd, g in enumerate(train_ds.domains)
                    }
                else:
                    masks = None
                batch_pairs = prepared_pairs
                align_scale = 1.0
                if n_pairs > cfg.align_subsample_factor * cfg.batch_size:
                    batch_pairs, align_scale = _subsample_pairs(
                        prepared_pairs, n_pairs, cfg.batch_size, rng
                    )
                total, l_bpr, l_align, _, grads = _compute(
                    ctx, grouped, batch_pairs, cfg, masks, align_scale, True
                )
                if not np.isfinite(total):
                    raise TrainingDiverged(
                        "non-finite loss",
                        {
                            "epoch": epoch,
                            "domain": d,
                            "batch": round_idx,
                            "bpr": l_bpr,
                            "align": l_align,
                            "total": total,
                        },
                    )
                adam_step(model, grads, state, cfg)
                epoch_bpr += l_bpr
                epoch_align += l_align
                epoch_total += total

        val_auc = val_recall = float("nan")
        if has_val:
            val_auc, val_recall, _ = evalkit.evaluate_cases_mean(model, split, val_cases)
        wall_ms = (time.perf_counter() - t_start) * 1000.0
        log = EpochLog(epoch, epoch_bpr, epoch_align, epoch_total, val_auc, val_recall, wall_ms)
        logs.append(log)
        for cb in callbacks:
            cb(log, model)
        if cfg.patience is not None and has_val:
            if val_auc > best_auc:
                best_auc = val_auc
                best_model = model.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best > cfg.patience:
                    break

    if best_model is not None:
        for (_, dst), (_, src) in zip(model.parameters(), best_model.parameters()):
            np.copyto(dst, src)
    return model, logs


def _subsample_pairs(prepared_pairs, n_pairs: int, sample_size: int, rng):
    """Uniform subsample of alignment pairs, rescaled to an unbiased estimate."""
    chosen = np.sort(rng.choice(n_pairs, size=sample_size, replace=False))
    out = []
    offset = 0
    for d, d_prime, idx_u, idx_v in prepared_pairs:
        local = chosen[(chosen >= offset) & (chosen < offset + len(idx_u))] - offset
        if len(local):
            out.append((d, d_prime, idx_u[local], idx_v[local]))
        offset += len(idx_u)
    return out, n_pairs / sample_size
