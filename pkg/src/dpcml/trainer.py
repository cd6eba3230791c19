"""Projected sparse-Adam training loop with validation-based model selection.

Every train positive is visited exactly once per epoch in seeded-shuffled
order. Each batch samples negatives, accumulates exact subgradients, applies
one bias-corrected Adam step to the touched rows only (lazy moments), and
re-projects those rows into the feasible set. Gradients are computed over
fixed-size chunks merged in a fixed order, so results are identical for any
worker count.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, objective, sampling
from .config import ModelConfig
from .data import InteractionDataset
from .embedding import EmbeddingStore, init_store, project_rows

log = logging.getLogger(__name__)

# Seed-stream tag for the epoch shuffle / negative sampling generator.
_TRAIN_STREAM = 3

# Gradient work is split into chunks of this many triplets; the chunk grid is
# independent of the worker count so merged results are bitwise reproducible.
_GRAD_CHUNK = 64

LOG_HEADER = "epoch,ranking,dcrs,total,valid_mrr"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int, value: float):
        super().__init__(
            f"non-finite loss {value!r} in epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class EpochRecord:
    epoch: int
    ranking: float
    dcrs: float
    total: float
    valid_mrr: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.ranking!r},{self.dcrs!r},"
                f"{self.total!r},{self.valid_mrr!r}")


@dataclass
class TrainState:
    """Mutable optimizer state; moment tables mirror the store layout."""

    store: EmbeddingStore
    m_user: np.ndarray
    v_user: np.ndarray
    m_item: np.ndarray
    v_item: np.ndarray
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0


@dataclass
class FitResult:
    best_store: EmbeddingStore
    best_epoch: int
    best_valid_mrr: float
    final_store: EmbeddingStore
    log: list[EpochRecord] = field(default_factory=list)

    def write_log(self, path) -> None:
        lines = [LOG_HEADER] + [rec.csv_row() for rec in self.log]
        Path(path).write_text("\n".join(lines) + "\n")


def init_state(dataset: InteractionDataset, config: ModelConfig) -> TrainState:
    config.validate()
    store = init_store(dataset.num_users, dataset.num_items,
                       config.num_user_vectors, config.dim,
                       variant=config.variant, r=config.radius, seed=config.seed)
    flat_users = store.num_users * store.C
    return TrainState(
        store=store,
        m_user=np.zeros((flat_users, store.d)),
        v_user=np.zeros((flat_users, store.d)),
        m_item=np.zeros((store.num_items, store.d)),
        v_item=np.zeros((store.num_items, store.d)),
        rng=np.random.default_rng([config.seed, _TRAIN_STREAM]),
    )


def _epoch_pairs(dataset: InteractionDataset) -> tuple[np.ndarray, np.ndarray]:
    users = np.concatenate([
        np.full(len(dataset.train_pos[u]), u, dtype=np.int64)
        for u in range(dataset.num_users)
    ])
    items = np.concatenate(dataset.train_pos).astype(np.int64)
    return users, items


def _sample_batch(state, dataset, config, users_b):
    if config.sampler == "uniform":
        return sampling.sample_uniform_batch(dataset, users_b, config.num_negatives,
                                             state.rng)
    if config.sampler == "popularity":
        return sampling.sample_popularity_batch(dataset, users_b, config.num_negatives,
                                                state.rng)
    # hard: uniform candidates, keep the most violating one
    cands = sampling.sample_uniform_batch(dataset, users_b, config.num_negatives,
                                          state.rng)
    sel = sampling.select_hard_batch(state.store, users_b, cands)
    return sel[:, None]


def _chunk_gradients(store, users_b, vpos_b, negs, config, pair_weight, lo, hi):
    """Hinge gradients for triplets [lo, hi) of the batch, in a private sink."""
    sink = objective.GradientSink(store)
    n = hi - lo
    S = negs.shape[1]
    tid = np.repeat(np.arange(n, dtype=np.int64), S)
    h = objective._hinge_gradients_arrays(
        store, users_b[lo:hi], vpos_b[lo:hi], tid, negs[lo:hi].ravel(),
        config, sink, pair_weight=pair_weight)
    return sink, float(h.sum())


def _apply_adam(state, config, sink) -> tuple[np.ndarray, np.ndarray]:
    """One bias-corrected Adam step on the touched rows; returns those rows."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    urows, ugrad, irows, igrad = sink.to_arrays()
    if len(urows):
        state.m_user[urows] = b1 * state.m_user[urows] + (1 - b1) * ugrad
        state.v_user[urows] = b2 * state.v_user[urows] + (1 - b2) * ugrad ** 2
        mhat = state.m_user[urows] / bc1
        vhat = state.v_user[urows] / bc2
        state.store.user_flat()[urows] -= config.lr * mhat / (np.sqrt(vhat) + config.adam_eps)
    if len(irows):
        state.m_item[irows] = b1 * state.m_item[irows] + (1 - b1) * igrad
        state.v_item[irows] = b2 * state.v_item[irows] + (1 - b2) * igrad ** 2
        mhat = state.m_item[irows] / bc1
        vhat = state.v_item[irows] / bc2
        state.store.item_vectors[irows] -= config.lr * mhat / (np.sqrt(vhat) + config.adam_eps)
    return urows, irows


def train_epoch(state: TrainState, dataset: InteractionDataset, config: ModelConfig,
                workers: int = 1) -> objective.LossBreakdown:
    """One pass over every train positive; returns the mean batch loss."""
    if state.store.num_users != dataset.num_users or \
            state.store.num_items != dataset.num_items:
        raise ValueError("state shapes do not match dataset")
    users_all, items_all = _epoch_pairs(dataset)
    order = state.rng.permutation(len(users_all))
    users_all = users_all[order]
    items_all = items_all[order]

    pool = (concurrent.futures.ThreadPoolExecutor(max_workers=workers)
            if workers > 1 else None)
    rank_sum = dcrs_sum = total_sum = 0.0
    n_batches = 0
    try:
        for bi, lo in enumerate(range(0, len(users_all), config.batch_size)):
            users_b = users_all[lo:lo + config.batch_size]
            vpos_b = items_all[lo:lo + config.batch_size]
            negs = _sample_batch(state, dataset, config, users_b)
            B = len(users_b)
            n_pairs = B * negs.shape[1]
            pair_weight = 1.0 / n_pairs

            bounds = [(c, min(c + _GRAD_CHUNK, B)) for c in range(0, B, _GRAD_CHUNK)]
            args = [(state.store, users_b, vpos_b, negs, config, pair_weight, c0, c1)
                    for c0, c1 in bounds]
            if pool is not None:
                results = list(pool.map(lambda a: _chunk_gradients(*a), args))
            else:
                results = [_chunk_gradients(*a) for a in args]

            sink = objective.GradientSink(state.store)
            hinge_total = 0.0
            for chunk_sink, h_sum in results:  # fixed merge order
                sink.merge(chunk_sink)
                hinge_total += h_sum
            ranking = hinge_total / n_pairs

            dcrs_users = np.unique(users_b)
            dcrs = objective._mean_dcrs(state.store, dcrs_users, config)
            objective._dcrs_gradients(state.store, dcrs_users, config, sink)
            total = ranking + config.dcrs_weight * dcrs
            if not np.isfinite(total):
                raise DivergenceError(state.epoch, bi, total)

            urows, irows = _apply_adam(state, config, sink)
            project_rows(state.store, urows, irows)

            rank_sum += ranking
            dcrs_sum += dcrs
            total_sum += total
            n_batches += 1
    finally:
        if pool is not None:
            pool.shutdown()

    state.epoch += 1
    return objective.LossBreakdown(rank_sum / n_batches, dcrs_sum / n_batches,
                                   total_sum / n_batches)


def fit(dataset: InteractionDataset, config: ModelConfig, workers: int = 1,
        log_path=None) -> FitResult:
    """Train for config.epochs epochs, retaining the best-validation checkpoint.

    Model selection uses first-hit MRR on the validation split (train items
    excluded from the candidate ranking); ties keep the earlier epoch. With
    epochs == 0 the initialized store is returned untouched.
    """
    config.validate()
    state = init_state(dataset, config)
    best_store = state.store.copy()
    best_epoch = 0
    best_mrr = -np.inf
    records: list[EpochRecord] = []
    for _ in range(config.epochs):
        breakdown = train_epoch(state, dataset, config, workers=workers)
        mrr = evaluation.first_hit_mrr(state.store, dataset, "valid",
                                       eval_exclude="train")
        records.append(EpochRecord(state.epoch, breakdown.ranking, breakdown.dcrs,
                                   breakdown.total, mrr))
        if mrr > best_mrr:
            best_mrr = mrr
            best_epoch = state.epoch
            best_store = state.store.copy()
        log.debug("epoch %d: total=%.6f valid_mrr=%.4f", state.epoch,
                  breakdown.total, mrr)
    result = FitResult(best_store, best_epoch,
                       float(best_mrr) if records else 0.0,
                       state.store, records)
    if log_path is not None:
        result.write_log(log_path)
    return result
