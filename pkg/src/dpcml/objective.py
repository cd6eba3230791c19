"""Hinge ranking loss, the two-sided diversity regularizer, and subgradients.

The ranking term asks every positive item to score lower (closer) than every
negative by a safe margin. The regularizer keeps each user's intra-set
embedding spread inside a band [lower, upper]: too little spread collapses
the multi-vector representation to a single vector, too much overfits stray
interactions. Both pieces are piecewise smooth; the subgradients below route
through the minimizing user vector and take the inactive side at kinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ModelConfig
from .embedding import EmbeddingStore, score
from .sampling import Triplet


@dataclass(frozen=True)
class LossBreakdown:
    """ranking + weight * dcrs == total, exactly."""

    ranking: float
    dcrs: float
    total: float

    @classmethod
    def combine(cls, ranking: float, dcrs: float, weight: float) -> "LossBreakdown":
        return cls(ranking, dcrs, ranking + weight * dcrs)


class GradientSink:
    """Sparse additive gradient accumulator matching a store's layout.

    Keys are flat user rows (u*C + c) and item indices; untouched
    coordinates are exactly zero. Sinks filled independently may be merged
    additively; merge order is the caller's contract.
    """

    def __init__(self, store: EmbeddingStore):
        self.C = store.C
        self.d = store.d
        self.num_users = store.num_users
        self.num_items = store.num_items
        self._user: dict[int, np.ndarray] = {}
        self._item: dict[int, np.ndarray] = {}

    def add_user_rows(self, rows: np.ndarray, vecs: np.ndarray) -> None:
        self._scatter(self._user, rows, vecs)

    def add_item_rows(self, rows: np.ndarray, vecs: np.ndarray) -> None:
        self._scatter(self._item, rows, vecs)

    def _scatter(self, table: dict, rows: np.ndarray, vecs: np.ndarray) -> None:
        if len(rows) == 0:
            return
        uniq, inv = np.unique(np.asarray(rows, dtype=np.int64), return_inverse=True)
        buf = np.zeros((len(uniq), self.d))
        np.add.at(buf, inv, vecs)
        for k, row in enumerate(uniq.tolist()):
            acc = table.get(row)
            if acc is None:
                table[row] = buf[k].copy()
            else:
                acc += buf[k]

    def merge(self, other: "GradientSink") -> None:
        for row, vec in other._user.items():
            acc = self._user.get(row)
            if acc is None:
                self._user[row] = vec.copy()
            else:
                acc += vec
        for row, vec in other._item.items():
            acc = self._item.get(row)
            if acc is None:
                self._item[row] = vec.copy()
            else:
                acc += vec

    def user_vector(self, u: int, c: int) -> np.ndarray:
        """Accumulated gradient of user u's vector c (0-based slot)."""
        vec = self._user.get(u * self.C + c)
        return vec.copy() if vec is not None else np.zeros(self.d)

    def item_vector(self, j: int) -> np.ndarray:
        vec = self._item.get(j)
        return vec.copy() if vec is not None else np.zeros(self.d)

    def to_arrays(self):
        """(user_rows, user_grads, item_rows, item_grads), rows ascending."""
        urows = np.asarray(sorted(self._user), dtype=np.int64)
        ugrad = (np.stack([self._user[r] for r in urows.tolist()])
                 if len(urows) else np.zeros((0, self.d)))
        irows = np.asarray(sorted(self._item), dtype=np.int64)
        igrad = (np.stack([self._item[r] for r in irows.tolist()])
                 if len(irows) else np.zeros((0, self.d)))
        return urows, ugrad, irows, igrad


def hinge_loss(store: EmbeddingStore, u: int, v_pos: int, v_neg: int,
               margin: float) -> float:
    """max(0, margin + s(u, v_pos) - s(u, v_neg)) under the store's variant."""
    if not margin > 0:
        raise ValueError("margin must be > 0")
    sp = score(store, u, v_pos).value
    sn = score(store, u, v_neg).value
    return max(0.0, margin + sp - sn)


def user_diversity(store: EmbeddingStore, u: int) -> float:
    """Average pairwise squared distance among a user's vectors.

    Sums over all ordered pairs (the diagonal contributes zero) and divides
    by 2*C*(C-1). Defined as 0 for single-vector stores.
    """
    C = store.C
    if C < 2:
        return 0.0
    uv = store.user_vectors[u]
    sq = ((uv[:, None, :] - uv[None, :, :]) ** 2).sum()
    return float(sq / (2 * C * (C - 1)))


def dcrs_penalty(delta: float, lower: float, upper: float, variant: str = "full") -> float:
    """Two-sided band penalty max(0, lower-delta) + max(0, delta-upper).

    The ablation variants keep only one hinge ("lower-only" punishes small
    spread, "upper-only" punishes large spread); "off" is identically 0.
    """
    if delta < 0:
        raise ValueError("diversity value must be >= 0")
    if variant == "off":
        return 0.0
    if variant == "full" and lower > upper:
        raise ConfigError(f"lower threshold {lower} exceeds upper threshold {upper}")
    low = max(0.0, lower - delta)
    high = max(0.0, delta - upper)
    if variant == "full":
        return low + high
    if variant == "lower-only":
        return low
    if variant == "upper-only":
        return high
    raise ConfigError(f"unknown dcrs variant {variant!r}")


def _pair_arrays(triplets: list[Triplet]):
    """Flatten triplets into per-pair (user, pos, neg, triplet-id) arrays."""
    users = np.fromiter((t.u for t in triplets), dtype=np.int64, count=len(triplets))
    vpos = np.fromiter((t.v_pos for t in triplets), dtype=np.int64, count=len(triplets))
    tid = np.concatenate([np.full(len(t.v_negs), k, dtype=np.int64)
                          for k, t in enumerate(triplets)])
    vneg = np.concatenate([np.asarray(t.v_negs, dtype=np.int64) for t in triplets])
    return users, vpos, tid, vneg


def _min_scores(store: EmbeddingStore, users: np.ndarray, items: np.ndarray):
    """Per-pair min score and 0-based argmin slot, computed by direct differences."""
    uv = store.user_vectors[users]            # (P, C, d)
    iv = store.item_vectors[items]            # (P, d)
    if store.variant == "euclidean":
        vals = ((uv - iv[:, None, :]) ** 2).sum(axis=2)
    else:
        vals = 1.0 - np.einsum("pcd,pd->pc", uv, iv)
    cmin = vals.argmin(axis=1)
    return vals[np.arange(len(users)), cmin], cmin


def _hinge_forward_arrays(store, users, vpos, tid, vneg, margin):
    sp, cpos = _min_scores(store, users, vpos)
    sn, cneg = _min_scores(store, users[tid], vneg)
    h = margin + sp[tid] - sn
    np.maximum(h, 0.0, out=h)
    return cpos, cneg, h


def _dcrs_users(triplets: list[Triplet]) -> np.ndarray:
    return np.unique(np.fromiter((t.u for t in triplets), dtype=np.int64,
                                 count=len(triplets)))


def _mean_dcrs(store, users, config) -> float:
    return float(np.mean([
        dcrs_penalty(user_diversity(store, int(u)), config.dcrs_lower,
                     config.dcrs_upper, config.dcrs_variant)
        for u in users
    ]))


def batch_objective(store: EmbeddingStore, triplets: list[Triplet],
                    config: ModelConfig) -> LossBreakdown:
    """Mean hinge over the batch's (positive, negative) pairs plus the mean
    band penalty over the distinct users present."""
    if not triplets:
        raise ValueError("empty batch")
    users, vpos, tid, vneg = _pair_arrays(triplets)
    *_, h = _hinge_forward_arrays(store, users, vpos, tid, vneg, config.margin)
    ranking = float(h.mean())
    dcrs = _mean_dcrs(store, _dcrs_users(triplets), config)
    return LossBreakdown.combine(ranking, dcrs, config.dcrs_weight)


def _hinge_gradients_arrays(store, users, vpos, tid, vneg, config, sink,
                            pair_weight=None):
    """Accumulate ranking-loss gradients for active pairs into the sink.

    pair_weight defaults to 1/#pairs (the batch mean); passing an explicit
    weight lets callers shard a batch and keep whole-batch normalization.
    """
    cpos, cneg, h = _hinge_forward_arrays(store, users, vpos, tid, vneg,
                                          config.margin)
    P = len(h)
    w = (1.0 / P) if pair_weight is None else pair_weight
    active = h > 0.0
    if not active.any():
        return h
    tA = tid[active]
    uA = users[tA]
    vpA = vpos[tA]
    vnA = vneg[active]
    cpA = cpos[tA]
    cnA = cneg[active]
    if store.variant == "euclidean":
        gpos = 2.0 * w * (store.user_vectors[uA, cpA] - store.item_vectors[vpA])
        gneg = 2.0 * w * (store.user_vectors[uA, cnA] - store.item_vectors[vnA])
        sink.add_user_rows(uA * store.C + cpA, gpos)
        sink.add_item_rows(vpA, -gpos)
        sink.add_user_rows(uA * store.C + cnA, -gneg)
        sink.add_item_rows(vnA, gneg)
    else:
        # d(1 - u.v)/du = -v ; d/dv = -u
        sink.add_user_rows(uA * store.C + cpA, -w * store.item_vectors[vpA])
        sink.add_item_rows(vpA, -w * store.user_vectors[uA, cpA])
        sink.add_user_rows(uA * store.C + cnA, w * store.item_vectors[vnA])
        sink.add_item_rows(vnA, w * store.user_vectors[uA, cnA])
    return h


def _hinge_gradients(store, triplets, config, sink, pair_weight=None):
    users, vpos, tid, vneg = _pair_arrays(triplets)
    return _hinge_gradients_arrays(store, users, vpos, tid, vneg, config, sink,
                                   pair_weight=pair_weight)


def _dcrs_gradients(store, users, config, sink, user_weight=None):
    """Accumulate band-penalty gradients for the given distinct users."""
    C = store.C
    if C < 2 or config.dcrs_variant == "off" or config.dcrs_weight == 0.0:
        return
    w = (1.0 / len(users)) if user_weight is None else user_weight
    allow_low = config.dcrs_variant in ("full", "lower-only")
    allow_high = config.dcrs_variant in ("full", "upper-only")
    coef = 2.0 / (C * (C - 1))
    for u in np.asarray(users, dtype=np.int64).tolist():
        delta = user_diversity(store, u)
        if allow_low and delta < config.dcrs_lower:
            sign = -1.0
        elif allow_high and delta > config.dcrs_upper:
            sign = 1.0
        else:
            continue
        uv = store.user_vectors[u]
        ddelta = coef * (C * uv - uv.sum(axis=0))
        rows = u * C + np.arange(C, dtype=np.int64)
        sink.add_user_rows(rows, config.dcrs_weight * w * sign * ddelta)


def batch_gradients(store: EmbeddingStore, triplets: list[Triplet],
                    config: ModelConfig, sink: GradientSink) -> GradientSink:
    """Exact subgradients of batch_objective, accumulated into the sink.

    Active hinges route through the minimizing user vector on each side
    (lowest slot on ties); hinges at exactly zero and band penalties at
    their boundaries contribute nothing.
    """
    if not triplets:
        raise ValueError("empty batch")
    _hinge_gradients(store, triplets, config, sink)
    _dcrs_gradients(store, _dcrs_users(triplets), config, sink)
    return sink


def exact_ranking_risk(store: EmbeddingStore, dataset, margin: float) -> float:
    """The full double-sum ranking risk over every (positive, negative) pair.

    Positives are the train split; negatives are all other items. Each
    user's pair sum is normalized by its own pair count, then averaged over
    users. Quadratic in the item count: intended for desk-scale checks.
    """
    total = 0.0
    for u in range(dataset.num_users):
        pos = dataset.train_pos[u]
        if len(pos) == 0:
            raise ValueError(f"user {u} has no train positives")
        uv = store.user_vectors[u]                          # (C, d)
        iv = store.item_vectors                             # (I, d)
        if store.variant == "euclidean":
            vals = ((uv[None, :, :] - iv[:, None, :]) ** 2).sum(axis=2)
        else:
            vals = 1.0 - iv @ uv.T
        s_all = vals.min(axis=1)                            # (I,)
        neg_mask = np.ones(dataset.num_items, dtype=bool)
        neg_mask[pos] = False
        sp = s_all[pos]
        sn = s_all[neg_mask]
        if sn.size == 0:
            raise ValueError(f"user {u} has no negatives")
        H = margin + sp[:, None] - sn[None, :]
        np.maximum(H, 0.0, out=H)
        total += float(H.mean())
    return total / dataset.num_users
