"""Top-N ranking metrics, diversity statistics, and the sample-complexity bound.

Metrics are computed per user against the chosen split's positives, ranking
all items except the excluded history, then averaged over users. Recall and
average precision are normalized by the split-local positive count, so every
metric lies in [0, 1]. Reciprocal rank is reported both ways: the canonical
first-hit value and the sum over all positives' reciprocal ranks (which can
exceed 1); the first-hit number is the headline MRR.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig
from .data import AttributeTable, InteractionDataset
from .embedding import EmbeddingStore, score_matrix

_EVAL_CHUNK = 256


@dataclass
class EvalReport:
    precision: dict[int, float]
    recall: dict[int, float]
    ndcg: dict[int, float]
    map: float
    mrr_first_hit: float
    mrr_sum: float
    num_users_evaluated: int
    maxdiv: dict[int, float] | None = None
    per_group_map: dict[int, float] | None = None

    def to_json_dict(self) -> dict:
        out = {
            "precision": {str(k): v for k, v in self.precision.items()},
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "map": self.map,
            "mrr_first_hit": self.mrr_first_hit,
            "mrr_sum": self.mrr_sum,
            "num_users_evaluated": self.num_users_evaluated,
        }
        if self.maxdiv is not None:
            out["maxdiv"] = {str(k): v for k, v in self.maxdiv.items()}
        if self.per_group_map is not None:
            out["per_group_map"] = {str(k): v for k, v in self.per_group_map.items()}
        return out

    def csv_header(self) -> str:
        cols = ["num_users_evaluated"]
        cols += [f"p@{n}" for n in sorted(self.precision)]
        cols += [f"r@{n}" for n in sorted(self.recall)]
        cols += [f"ndcg@{n}" for n in sorted(self.ndcg)]
        cols += ["map", "mrr_first_hit", "mrr_sum"]
        if self.maxdiv is not None:
            cols += [f"maxdiv@{n}" for n in sorted(self.maxdiv)]
        return ",".join(cols)

    def csv_row(self) -> str:
        vals: list = [self.num_users_evaluated]
        vals += [self.precision[n] for n in sorted(self.precision)]
        vals += [self.recall[n] for n in sorted(self.recall)]
        vals += [self.ndcg[n] for n in sorted(self.ndcg)]
        vals += [self.map, self.mrr_first_hit, self.mrr_sum]
        if self.maxdiv is not None:
            vals += [self.maxdiv[n] for n in sorted(self.maxdiv)]
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals)

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            Path(csv_path).write_text(self.csv_header() + "\n" + self.csv_row() + "\n")


def _check_shapes(store: EmbeddingStore, dataset: InteractionDataset) -> None:
    got = (store.num_users, store.num_items)
    want = (dataset.num_users, dataset.num_items)
    if got != want:
        raise ValueError(f"store shape {got} does not match dataset shape {want}")


def _excluded_items(dataset, split: str, eval_exclude: str, u: int) -> np.ndarray:
    # never exclude the split under evaluation; validation scoring hides the
    # train history, test scoring hides train (+valid, under train+valid)
    if split == "valid":
        return dataset.train_pos[u]
    if eval_exclude == "train+valid":
        return np.concatenate([dataset.train_pos[u], dataset.valid_pos[u]])
    return dataset.train_pos[u]


def _relevant_ranks_positions(scores: np.ndarray, excl: np.ndarray,
                              rel: np.ndarray) -> np.ndarray:
    """1-based ranks of the relevant items, in the same order as ``rel``.

    Ranking is ascending by (score, item index); excluded items are pushed
    past the end and must not intersect the relevant set.
    """
    s = scores.copy()
    if excl.size:
        s[excl] = np.inf
    order = np.lexsort((np.arange(len(s)), s))
    pos_of = np.empty(len(s), dtype=np.int64)
    pos_of[order] = np.arange(len(s))
    return pos_of[rel] + 1


def _relevant_ranks(scores: np.ndarray, excl: np.ndarray, rel: np.ndarray) -> np.ndarray:
    """Sorted 1-based ranks of the relevant items in the available ranking."""
    return np.sort(_relevant_ranks_positions(scores, excl, rel))


def _user_metrics(ranks: np.ndarray, n_rel: int, cutoffs) -> dict:
    out = {}
    inv = 1.0 / ranks
    for n in cutoffs:
        hits = int((ranks <= n).sum())
        dcg = float((1.0 / np.log2(ranks[ranks <= n] + 1.0)).sum())
        ideal = np.arange(1, min(n, n_rel) + 1, dtype=np.float64)
        idcg = float((1.0 / np.log2(ideal + 1.0)).sum())
        out[f"p@{n}"] = hits / n
        out[f"r@{n}"] = hits / n_rel
        out[f"ndcg@{n}"] = dcg / idcg
    out["ap"] = float((np.arange(1, n_rel + 1) / ranks).mean())
    out["mrr_first"] = float(inv[0])
    out["mrr_sum"] = float(inv.sum())
    return out


def evaluate(store: EmbeddingStore, dataset: InteractionDataset, split: str,
             config: ModelConfig, cutoffs=(3, 5)) -> EvalReport:
    """Rank all non-excluded items per user and average the metrics."""
    _check_shapes(store, dataset)
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    cutoffs = tuple(sorted(set(int(n) for n in cutoffs)))
    users = [u for u in range(dataset.num_users) if len(dataset.positives(u, split))]
    if not users:
        raise ValueError(f"split {split!r} holds no positives for any user")

    acc = {f"p@{n}": [] for n in cutoffs}
    acc.update({f"r@{n}": [] for n in cutoffs})
    acc.update({f"ndcg@{n}": [] for n in cutoffs})
    acc.update({"ap": [], "mrr_first": [], "mrr_sum": []})
    for lo in range(0, len(users), _EVAL_CHUNK):
        chunk = users[lo:lo + _EVAL_CHUNK]
        S = score_matrix(store, np.asarray(chunk, dtype=np.int64))
        for row, u in enumerate(chunk):
            rel = dataset.positives(u, split)
            excl = _excluded_items(dataset, split, config.eval_exclude, u)
            ranks = _relevant_ranks(S[row], excl, rel)
            m = _user_metrics(ranks, len(rel), cutoffs)
            for key, val in m.items():
                acc[key].append(val)

    mean = {k: float(np.mean(v)) for k, v in acc.items()}
    return EvalReport(
        precision={n: mean[f"p@{n}"] for n in cutoffs},
        recall={n: mean[f"r@{n}"] for n in cutoffs},
        ndcg={n: mean[f"ndcg@{n}"] for n in cutoffs},
        map=mean["ap"],
        mrr_first_hit=mean["mrr_first"],
        mrr_sum=mean["mrr_sum"],
        num_users_evaluated=len(users),
    )


def first_hit_mrr(store: EmbeddingStore, dataset: InteractionDataset, split: str,
                  eval_exclude: str = "train") -> float:
    """Mean reciprocal rank of the first relevant item, without a full sort."""
    _check_shapes(store, dataset)
    users = [u for u in range(dataset.num_users) if len(dataset.positives(u, split))]
    if not users:
        raise ValueError(f"split {split!r} holds no positives for any user")
    vals = []
    for lo in range(0, len(users), _EVAL_CHUNK):
        chunk = users[lo:lo + _EVAL_CHUNK]
        S = score_matrix(store, np.asarray(chunk, dtype=np.int64))
        for row, u in enumerate(chunk):
            rel = dataset.positives(u, split)
            excl = _excluded_items(dataset, split, eval_exclude, u)
            s = S[row].copy()
            if excl.size:
                s[excl] = np.inf
            rs = s[rel]
            m = rs.min()
            j_star = int(rel[rs == m].min())
            rank = 1 + int((s < m).sum()) + int(((s == m) & (np.arange(len(s)) < j_star)).sum())
            vals.append(1.0 / rank)
    return float(np.mean(vals))


def maxdiv(store: EmbeddingStore, dataset: InteractionDataset, split: str, N: int,
           eval_exclude: str = "train+valid") -> float:
    """Mean summed squared distance over ordered pairs in each user's top-N.

    Item-side diversity of the recommendation lists: each unordered pair
    counts twice. Higher means the model surfaces more spread-out items.
    """
    if N < 2:
        raise ConfigError("maxdiv needs N >= 2")
    _check_shapes(store, dataset)
    users = [u for u in range(dataset.num_users) if len(dataset.positives(u, split))]
    if not users:
        raise ValueError(f"split {split!r} holds no positives for any user")
    totals = []
    for lo in range(0, len(users), _EVAL_CHUNK):
        chunk = users[lo:lo + _EVAL_CHUNK]
        S = score_matrix(store, np.asarray(chunk, dtype=np.int64))
        for row, u in enumerate(chunk):
            s = S[row].copy()
            excl = _excluded_items(dataset, split, eval_exclude, u)
            if excl.size:
                s[excl] = np.inf
            order = np.lexsort((np.arange(len(s)), s))
            top = order[:min(N, store.num_items - excl.size)]
            G = store.item_vectors[top]
            diffs = ((G[:, None, :] - G[None, :, :]) ** 2).sum(axis=2)
            totals.append(float(diffs.sum()))
    return float(np.mean(totals))


# -- attribute-based diversity ------------------------------------------------

def _attr_masks(attrs: AttributeTable, items: np.ndarray) -> np.ndarray:
    """(len(items), W) packed uint64 bitmasks of the items' attribute sets."""
    W = max(1, (attrs.num_attributes() + 63) // 64)
    masks = np.zeros((len(items), W), dtype=np.uint64)
    for k, j in enumerate(items.tolist()):
        for a in attrs.item_attrs[j]:
            masks[k, a // 64] |= np.uint64(1 << (a % 64))
    return masks


def preference_diversity(dataset: InteractionDataset, attrs: AttributeTable,
                         u: int) -> float | None:
    """Fraction of ordered pairs of the user's positives with disjoint attributes.

    Uses the user's full positive history (all splits). Undefined (None) for
    users with fewer than two positives.
    """
    pos = dataset.positives(u, "all")
    n = len(pos)
    if n < 2:
        return None
    masks = _attr_masks(attrs, pos)
    inter = masks[:, None, :] & masks[None, :, :]
    shares = inter.any(axis=2)
    np.fill_diagonal(shares, True)
    disjoint_ordered = int((~shares).sum())
    return disjoint_ordered / (n * (n - 1))


def diversity_values(dataset: InteractionDataset, attrs: AttributeTable) -> np.ndarray:
    """Per-user diversity values, skipping users with fewer than two positives."""
    vals = [preference_diversity(dataset, attrs, u) for u in range(dataset.num_users)]
    return np.asarray([v for v in vals if v is not None], dtype=np.float64)


def diversity_histogram(values: np.ndarray, bins: int = 10):
    """(edges, counts) over [0, 1]; the last bin is closed at 1."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def per_group_map(store: EmbeddingStore, dataset: InteractionDataset,
                  attrs: AttributeTable, split: str,
                  config: ModelConfig) -> dict[int, float]:
    """MAP per attribute group, restricting relevance to positives in the group.

    Users without any group-relevant positive in the split are skipped for
    that group; groups with no such user anywhere are absent from the output.
    """
    _check_shapes(store, dataset)
    users = [u for u in range(dataset.num_users) if len(dataset.positives(u, split))]
    if not users:
        raise ValueError(f"split {split!r} holds no positives for any user")
    ap_lists: dict[int, list[float]] = {}
    for lo in range(0, len(users), _EVAL_CHUNK):
        chunk = users[lo:lo + _EVAL_CHUNK]
        S = score_matrix(store, np.asarray(chunk, dtype=np.int64))
        for row, u in enumerate(chunk):
            rel = dataset.positives(u, split)
            excl = _excluded_items(dataset, split, config.eval_exclude, u)
            ranks = _relevant_ranks_positions(S[row], excl, rel)  # aligned to rel
            groups: dict[int, list[int]] = {}
            for item, rank in zip(rel.tolist(), ranks.tolist()):
                for a in attrs.item_attrs[item]:
                    groups.setdefault(a, []).append(rank)
            for a, rlist in groups.items():
                r = np.sort(np.asarray(rlist, dtype=np.float64))
                ap = float((np.arange(1, len(r) + 1) / r).mean())
                ap_lists.setdefault(a, []).append(ap)
    return {a: float(np.mean(v)) for a, v in sorted(ap_lists.items())}


# -- generalization bound ------------------------------------------------------

@dataclass
class BoundInputs:
    """Population quantities feeding the sample-complexity bound."""

    num_users: int
    n_pos: np.ndarray
    n_neg: np.ndarray
    dim: int
    radius: float
    dcrs_weight: float

    @classmethod
    def from_dataset(cls, dataset: InteractionDataset, dim: int, radius: float,
                     dcrs_weight: float) -> "BoundInputs":
        n_pos = np.asarray([dataset.n_pos(u) for u in range(dataset.num_users)],
                           dtype=np.int64)
        return cls(dataset.num_users, n_pos, dataset.num_items - n_pos,
                   dim, radius, dcrs_weight)


@dataclass(frozen=True)
class BoundResult:
    n_tilde: float
    epsilon: float | None
    vacuous: bool


def generalization_bound(inputs: BoundInputs) -> BoundResult:
    """Effective sample size and the high-probability risk gap it implies.

    Returns a vacuous signal instead of a number whenever 3*r*N_tilde <= 1,
    where the logarithm is non-positive.
    """
    U = inputs.num_users
    n_pos = np.asarray(inputs.n_pos, dtype=np.float64)
    n_neg = np.asarray(inputs.n_neg, dtype=np.float64)
    if U <= 0 or len(n_pos) != U or len(n_neg) != U:
        raise ConfigError("need one positive/negative count per user")
    if (n_pos <= 0).any() or (n_neg <= 0).any():
        raise ConfigError("per-user counts must be positive")
    if inputs.dim <= 0 or inputs.radius <= 0:
        raise ConfigError("dim and radius must be positive")
    r = float(inputs.radius)
    inner = ((4.0 + inputs.dcrs_weight) ** 2 / U
             + (2.0 / U ** 2) * float((1.0 / n_pos + 1.0 / n_neg).sum()))
    n_tilde = (4.0 * r * r * math.sqrt(inner)) ** -2
    if 3.0 * r * n_tilde <= 1.0:
        return BoundResult(n_tilde, None, True)
    eps = math.sqrt(2.0 * inputs.dim * math.log(3.0 * r * n_tilde) / n_tilde)
    return BoundResult(n_tilde, eps, False)
