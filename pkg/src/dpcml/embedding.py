"""Multi-vector embedding tables, min-distance scoring, and norm constraints.

Each user owns C vectors, each item one vector, all in the same d-dimensional
space. The preference score of (user, item) is the smallest squared Euclidean
distance between the item vector and any of the user's vectors; smaller means
more preferred. The spherical variant keeps every vector on the unit sphere
and scores by 1 minus the largest inner product, which is half the squared
distance for unit vectors.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

VARIANTS = ("euclidean", "spherical")
_VARIANT_CODES = {"euclidean": 0, "spherical": 1}
_CODE_VARIANTS = {v: k for k, v in _VARIANT_CODES.items()}

CHECKPOINT_MAGIC = b"DPCM"
CHECKPOINT_VERSION = 1

# Relative slack on norm comparisons so that projection is idempotent in
# floating point (re-projecting a projected store is a bitwise no-op).
_PROJ_TOL = 1e-12

# Seed-stream tag for table initialization.
_INIT_STREAM = 2


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


@dataclass(frozen=True)
class Score:
    """Preference score plus the 1-based index of the user vector achieving it."""

    value: float
    argmin_c: int


@dataclass
class EmbeddingStore:
    """User table (num_users, C, d) and item table (num_items, d), float64.

    Layout contract: flattened user vector c of user u lives at row u*C + c,
    so checkpoints are portable across implementations of this format.
    """

    user_vectors: np.ndarray
    item_vectors: np.ndarray
    r: float
    variant: str

    @property
    def num_users(self) -> int:
        return self.user_vectors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_vectors.shape[0]

    @property
    def C(self) -> int:
        return self.user_vectors.shape[1]

    @property
    def d(self) -> int:
        return self.user_vectors.shape[2]

    def user_flat(self) -> np.ndarray:
        """(num_users*C, d) view of the user table in the layout-contract order."""
        return self.user_vectors.reshape(self.num_users * self.C, self.d)

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.user_vectors.copy(), self.item_vectors.copy(),
                              self.r, self.variant)


def init_store(num_users: int, num_items: int, num_user_vectors: int, dim: int,
               variant: str = "euclidean", r: float = 1.0, seed: int = 0) -> EmbeddingStore:
    """Gaussian init with scale 1/sqrt(dim), projected into the feasible set."""
    if num_users < 1 or num_items < 1 or num_user_vectors < 1 or dim < 1:
        raise ValueError("all store dimensions must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng([seed, _INIT_STREAM])
    sigma = 1.0 / np.sqrt(dim)
    user = rng.normal(0.0, sigma, size=(num_users, num_user_vectors, dim))
    item = rng.normal(0.0, sigma, size=(num_items, dim))
    store = EmbeddingStore(user, item, float(r), variant)
    return project(store)


def _project_rows(mat: np.ndarray, r: float, variant: str) -> None:
    norms = np.linalg.norm(mat, axis=-1)
    if variant == "euclidean":
        if not np.isfinite(r):
            return
        over = norms > r * (1.0 + _PROJ_TOL)
        if over.any():
            mat[over] *= (r / norms[over])[:, None]
    else:
        zero = norms == 0.0
        if zero.any():
            mat[zero] = 0.0
            mat[zero, 0] = 1.0
            norms = np.where(zero, 1.0, norms)
        off = np.abs(norms - 1.0) > _PROJ_TOL
        if off.any():
            mat[off] /= norms[off][:, None]


def project(store: EmbeddingStore) -> EmbeddingStore:
    """Clip every vector into the norm ball (euclidean) or onto the sphere.

    Euclidean: vectors with norm > r are rescaled to norm exactly r, the rest
    stay untouched; r = inf disables clipping. Spherical: every vector is
    rescaled to unit norm, with exact-zero vectors replaced by the first
    basis vector. Projection is performed in place and is idempotent.
    """
    _project_rows(store.user_flat(), store.r, store.variant)
    _project_rows(store.item_vectors, store.r, store.variant)
    return store


def project_rows(store: EmbeddingStore, user_rows: np.ndarray | None = None,
                 item_rows: np.ndarray | None = None) -> None:
    """Project only the given flat user rows / item rows (post-update fixup)."""
    if user_rows is not None and len(user_rows):
        flat = store.user_flat()
        sub = flat[user_rows]
        _project_rows(sub, store.r, store.variant)
        flat[user_rows] = sub
    if item_rows is not None and len(item_rows):
        sub = store.item_vectors[item_rows]
        _project_rows(sub, store.r, store.variant)
        store.item_vectors[item_rows] = sub


def score(store: EmbeddingStore, u: int, v: int) -> Score:
    """Min squared distance (euclidean) or 1 - max inner product (spherical).

    Ties over the user's vectors break to the lowest index; argmin_c is
    1-based (a slot number in 1..C).
    """
    if not (0 <= u < store.num_users):
        raise IndexError(f"user index {u} out of range [0, {store.num_users})")
    if not (0 <= v < store.num_items):
        raise IndexError(f"item index {v} out of range [0, {store.num_items})")
    uv = store.user_vectors[u]
    iv = store.item_vectors[v]
    if store.variant == "euclidean":
        vals = ((uv - iv) ** 2).sum(axis=1)
    else:
        vals = 1.0 - uv @ iv
    c = int(np.argmin(vals))  # first occurrence = lowest c on ties
    return Score(float(vals[c]), c + 1)


def score_matrix(store: EmbeddingStore, users: np.ndarray) -> np.ndarray:
    """(len(users), num_items) score matrix, vectorized over all items.

    Uses the expanded quadratic form for speed; values may differ from
    score() by float rounding but agree to ~1e-12 relative.
    """
    users = np.asarray(users, dtype=np.int64)
    uv = store.user_vectors[users]                      # (B, C, d)
    iv = store.item_vectors                             # (I, d)
    dots = np.einsum("bcd,id->bci", uv, iv)
    if store.variant == "euclidean":
        un2 = (uv ** 2).sum(axis=2)                     # (B, C)
        in2 = (iv ** 2).sum(axis=1)                     # (I,)
        dist = un2[:, :, None] + in2[None, None, :] - 2.0 * dots
        np.maximum(dist, 0.0, out=dist)
        return dist.min(axis=1)
    return (1.0 - dots).min(axis=1)


def rank_items(store: EmbeddingStore, u: int, exclude=(), N: int = 10) -> np.ndarray:
    """The N non-excluded items with smallest score, ascending; ties by index.

    When fewer than N items remain after exclusion, the short list of all
    remaining items is returned (logged as a warning).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    scores = score_matrix(store, np.asarray([u], dtype=np.int64))[0]
    exclude = np.asarray(sorted(exclude), dtype=np.int64)
    if exclude.size:
        if exclude.min() < 0 or exclude.max() >= store.num_items:
            raise IndexError("exclusion set references items out of range")
        scores[exclude] = np.inf
    avail = store.num_items - exclude.size
    if N > avail:
        log.warning("rank_items: requested N=%d but only %d items available", N, avail)
        N = avail
    order = np.lexsort((np.arange(store.num_items), scores))
    return order[:N]


def replicate_users(store: EmbeddingStore, copies: int) -> EmbeddingStore:
    """Duplicate a single-vector store's user vectors into `copies` slots each.

    Every user's one vector is repeated, so min-distance scores are
    unchanged: the result realizes the same model inside the larger
    hypothesis space.
    """
    if store.C != 1:
        raise ValueError("replicate_users expects a single-vector store")
    tiled = np.repeat(store.user_vectors, copies, axis=1).copy()
    return EmbeddingStore(tiled, store.item_vectors.copy(), store.r, store.variant)


def save_checkpoint(store: EmbeddingStore, path) -> None:
    """Binary checkpoint: magic, version, shape header, then f32 tables."""
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIIIII", CHECKPOINT_VERSION, store.num_users, store.num_items,
        store.C, store.d, _VARIANT_CODES[store.variant])
    header += struct.pack("<d", store.r)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(store.user_flat().astype("<f4").tobytes(order="C"))
        fh.write(store.item_vectors.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> EmbeddingStore:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 24 + 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, num_users, num_items, C, d, code = struct.unpack("<IIIIII", raw[4:28])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if code not in _CODE_VARIANTS:
        raise CheckpointError(f"{path}: unknown variant code {code}")
    (r,) = struct.unpack("<d", raw[28:36])
    body = raw[36:]
    n_user = num_users * C * d
    n_item = num_items * d
    if len(body) != 4 * (n_user + n_item):
        raise CheckpointError(f"{path}: truncated checkpoint body")
    user = np.frombuffer(body[:4 * n_user], dtype="<f4").astype(np.float64)
    item = np.frombuffer(body[4 * n_user:], dtype="<f4").astype(np.float64)
    return EmbeddingStore(
        user.reshape(num_users, C, d),
        item.reshape(num_items, d),
        float(r),
        _CODE_VARIANTS[code],
    )
