"""Negative samplers: uniform, popularity-smoothed, and hardest-candidate.

Negatives are drawn from a user's unobserved items, where "observed" means
train positives only: validation and test items must stay invisible to
training. Draws are with replacement. The hard strategy uniformly samples a
candidate set and keeps the most violating candidate, i.e. the one the model
currently scores closest to the user.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingStore

# After this many vectorized rejection rounds, remaining rows fall back to
# direct sampling over the materialized candidate list.
_MAX_REJECTION_ROUNDS = 64


class SamplingError(RuntimeError):
    """A user has no candidate negatives to draw from."""


@dataclass(frozen=True)
class Triplet:
    """One training unit: a user, a train positive, and sampled negatives."""

    u: int
    v_pos: int
    v_negs: tuple[int, ...]


def _candidates(dataset, u: int) -> np.ndarray:
    excl = dataset.train_pos[u]
    cand = np.setdiff1d(np.arange(dataset.num_items, dtype=np.int64), excl,
                        assume_unique=True)
    if cand.size == 0:
        raise SamplingError(f"user {u} has no candidate negatives")
    return cand


def sample_uniform(dataset, u: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """S uniform draws (with replacement) from the user's non-positive items."""
    cand = _candidates(dataset, u)
    return cand[rng.integers(0, cand.size, size=S)]


def sample_popularity(dataset, u: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """S draws proportional to smoothed train popularity (count + 1)."""
    cand = _candidates(dataset, u)
    weights = dataset.item_popularity[cand].astype(np.float64) + 1.0
    cum = np.cumsum(weights)
    draws = np.searchsorted(cum, rng.random(S) * cum[-1], side="right")
    return cand[np.minimum(draws, cand.size - 1)]


def select_hard(store: EmbeddingStore, u: int, candidates) -> int:
    """The candidate scored closest to the user; ties to the lowest item index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("empty candidate list")
    uv = store.user_vectors[u]
    iv = store.item_vectors[candidates]
    if store.variant == "euclidean":
        vals = ((uv[None, :, :] - iv[:, None, :]) ** 2).sum(axis=2).min(axis=1)
    else:
        vals = (1.0 - iv @ uv.T).min(axis=1)
    best = vals.min()
    return int(candidates[vals == best].min())


# -- vectorized batch paths used by the trainer ------------------------------

def _reject_observed(dataset, users, draws, redraw, rng):
    """Replace draws that hit a train positive, using the given redraw fn."""
    users = np.asarray(users, dtype=np.int64)
    flat_u = np.repeat(users, draws.shape[1]).reshape(draws.shape)
    bad = dataset.is_train_positive(flat_u, draws)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            # pathological users: nearly every item is a train positive
            rows, cols = np.nonzero(bad)
            for r, c in zip(rows.tolist(), cols.tolist()):
                cand = _candidates(dataset, int(users[r]))
                draws[r, c] = cand[rng.integers(0, cand.size)]
            return draws
        n_bad = int(bad.sum())
        draws[bad] = redraw(n_bad)
        bad[bad] = dataset.is_train_positive(flat_u[bad], draws[bad])
    return draws


def sample_uniform_batch(dataset, users, S: int, rng: np.random.Generator) -> np.ndarray:
    """(len(users), S) uniform negatives, one row per user in order."""
    B = len(users)
    draws = rng.integers(0, dataset.num_items, size=(B, S))
    return _reject_observed(dataset, users, draws,
                            lambda n: rng.integers(0, dataset.num_items, size=n), rng)


def sample_popularity_batch(dataset, users, S: int, rng: np.random.Generator) -> np.ndarray:
    """(len(users), S) popularity-smoothed negatives."""
    B = len(users)
    cum = np.cumsum(dataset.item_popularity.astype(np.float64) + 1.0)

    def draw(n):
        idx = np.searchsorted(cum, rng.random(n) * cum[-1], side="right")
        return np.minimum(idx, dataset.num_items - 1)

    draws = draw(B * S).reshape(B, S)
    return _reject_observed(dataset, users, draws, draw, rng)


def select_hard_batch(store: EmbeddingStore, users, candidates: np.ndarray) -> np.ndarray:
    """Row-wise hardest candidate; ties to the lowest item index."""
    users = np.asarray(users, dtype=np.int64)
    uv = store.user_vectors[users]                      # (B, C, d)
    iv = store.item_vectors[candidates]                 # (B, S, d)
    if store.variant == "euclidean":
        dots = np.einsum("bcd,bsd->bsc", uv, iv)
        un2 = (uv ** 2).sum(axis=2)
        in2 = (iv ** 2).sum(axis=2)
        dist = un2[:, None, :] + in2[:, :, None] - 2.0 * dots
        vals = dist.min(axis=2)
    else:
        vals = (1.0 - np.einsum("bcd,bsd->bsc", uv, iv)).min(axis=2)
    best = vals.min(axis=1, keepdims=True)
    masked = np.where(vals == best, candidates, store.num_items)
    return masked.min(axis=1)
