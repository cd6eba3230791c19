"""Rating ingestion: implicit-feedback conversion, filtering, per-user splits."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

RATING_FORMATS = ("movielens-dcolon", "tsv", "csv")
ATTRIBUTE_FORMATS = ("movielens-genres", "tsv-multi")

# Seed-stream tag for the per-user split shuffles.
_SPLIT_STREAM = 1


class ParseError(ValueError):
    """A malformed input line; carries the path and 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    """No interactions survived parsing or filtering."""


@dataclass(frozen=True)
class RawRating:
    """One interaction row; rating and timestamp are optional."""

    user_id: str
    item_id: str
    rating: float | None = None
    timestamp: int | None = None


def _split_fields(line: str, fmt: str) -> list[str]:
    if fmt == "movielens-dcolon":
        return line.split("::")
    if fmt == "tsv":
        return line.split("\t")
    # csv: honor quoting so item tokens may contain commas
    return next(csv.reader(io.StringIO(line)))


def load_ratings(path, fmt: str, threshold: float | None = None) -> list[RawRating]:
    """Parse a ratings file and keep the positive interactions.

    With ``threshold`` set, a row survives only when it carries a rating
    >= threshold; without a threshold every row counts as a positive
    (implicit feedback passthrough).
    """
    if fmt not in RATING_FORMATS:
        raise ValueError(f"unknown ratings format {fmt!r}; choose from {RATING_FORMATS}")
    out: list[RawRating] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = _split_fields(line, fmt)
            if len(fields) < 2:
                raise ParseError(path, line_no, "expected at least user and item fields")
            user, item = fields[0].strip(), fields[1].strip()
            if not user or not item:
                raise ParseError(path, line_no, "empty user or item token")
            rating = None
            if len(fields) >= 3 and fields[2].strip():
                try:
                    rating = float(fields[2])
                except ValueError:
                    raise ParseError(path, line_no, f"unparseable rating {fields[2]!r}") from None
            timestamp = None
            if len(fields) >= 4 and fields[3].strip():
                try:
                    timestamp = int(float(fields[3]))
                except ValueError:
                    raise ParseError(path, line_no, f"unparseable timestamp {fields[3]!r}") from None
            if threshold is not None and (rating is None or rating < threshold):
                continue
            out.append(RawRating(user, item, rating, timestamp))
    if not out:
        raise EmptyDatasetError(f"no positive interactions in {path}")
    return out


@dataclass
class InteractionDataset:
    """Dense-indexed implicit-feedback dataset with per-user train/valid/test splits.

    Split lists are sorted ascending and pairwise disjoint per user; every
    user holds at least one item in each split. A user's positive count is
    taken over all three splits combined, so n_pos(u) + n_neg(u) equals the
    total item count.
    """

    num_users: int
    num_items: int
    train_pos: list[np.ndarray]
    valid_pos: list[np.ndarray]
    test_pos: list[np.ndarray]
    user_index: dict[str, int]
    item_index: dict[str, int]
    item_popularity: np.ndarray
    params: dict = field(default_factory=dict)
    _train_csr: np.ndarray | None = field(default=None, repr=False, compare=False)

    def positives(self, u: int, split: str = "all") -> np.ndarray:
        if split == "train":
            return self.train_pos[u]
        if split == "valid":
            return self.valid_pos[u]
        if split == "test":
            return self.test_pos[u]
        if split == "all":
            return np.sort(np.concatenate(
                [self.train_pos[u], self.valid_pos[u], self.test_pos[u]]))
        raise ValueError(f"unknown split {split!r}")

    def n_pos(self, u: int) -> int:
        return len(self.train_pos[u]) + len(self.valid_pos[u]) + len(self.test_pos[u])

    def n_neg(self, u: int) -> int:
        return self.num_items - self.n_pos(u)

    def num_interactions(self) -> int:
        return sum(self.n_pos(u) for u in range(self.num_users))

    def density(self) -> float:
        return self.num_interactions() / (self.num_users * self.num_items)

    def train_keys(self) -> np.ndarray:
        """Sorted u*num_items+item keys of all train positives, for membership tests."""
        if self._train_csr is None:
            if self.num_users:
                keys = np.concatenate([
                    u * self.num_items + self.train_pos[u]
                    for u in range(self.num_users)
                ]).astype(np.int64)
            else:
                keys = np.empty(0, dtype=np.int64)
            self._train_csr = np.sort(keys)
        return self._train_csr

    def is_train_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test: items[k] in train_pos[users[k]]."""
        keys = self.train_keys()
        query = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items)
        pos = np.searchsorted(keys, query)
        return (pos < len(keys)) & (np.take(keys, pos, mode="clip") == query)

    # -- persistence ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        inv_users = [None] * self.num_users
        for tok, idx in self.user_index.items():
            inv_users[idx] = tok
        inv_items = [None] * self.num_items
        for tok, idx in self.item_index.items():
            inv_items[idx] = tok
        return {
            "format": "dpcml-dataset",
            "version": 1,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "users": inv_users,
            "items": inv_items,
            "train": [a.tolist() for a in self.train_pos],
            "valid": [a.tolist() for a in self.valid_pos],
            "test": [a.tolist() for a in self.test_pos],
            "item_popularity": self.item_popularity.tolist(),
            "params": self.params,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def from_json_dict(cls, raw: dict) -> "InteractionDataset":
        if raw.get("format") != "dpcml-dataset":
            raise ValueError("not a dataset document")
        return cls(
            num_users=raw["num_users"],
            num_items=raw["num_items"],
            train_pos=[np.asarray(a, dtype=np.int64) for a in raw["train"]],
            valid_pos=[np.asarray(a, dtype=np.int64) for a in raw["valid"]],
            test_pos=[np.asarray(a, dtype=np.int64) for a in raw["test"]],
            user_index={tok: i for i, tok in enumerate(raw["users"])},
            item_index={tok: i for i, tok in enumerate(raw["items"])},
            item_popularity=np.asarray(raw["item_popularity"], dtype=np.int64),
            params=raw.get("params", {}),
        )

    @classmethod
    def load(cls, path) -> "InteractionDataset":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _dedupe_max_rating(ratings: list[RawRating]) -> list[RawRating]:
    # D+ is a set: collapse duplicate (user, item) rows, keeping the max rating
    best: dict[tuple[str, str], RawRating] = {}
    for r in ratings:
        key = (r.user_id, r.item_id)
        prev = best.get(key)
        if prev is None:
            best[key] = r
        elif r.rating is not None and (prev.rating is None or r.rating > prev.rating):
            best[key] = r
    return list(best.values())


def _split_counts(n: int, f_train: float, f_valid: float) -> tuple[int, int, int]:
    # ceiling split on train then valid, capped so each split keeps >= 1 item
    n_train = min(math.ceil(f_train * n), n - 2)
    n_train = max(n_train, 1)
    rest = n - n_train
    n_valid = min(math.ceil(f_valid * rest), rest - 1)
    n_valid = max(n_valid, 1)
    return n_train, n_valid, n - n_train - n_valid


def build_dataset(ratings: list[RawRating], min_interactions: int = 5,
                  split: tuple[float, float, float] = (0.6, 0.2, 0.2),
                  seed: int = 0, keep_cold_items: bool = False) -> InteractionDataset:
    """Filter, index, and split positive interactions into a dataset.

    Users with fewer than ``min_interactions`` positives are dropped, then
    items left with zero interactions (unless ``keep_cold_items``), and the
    user filter is re-checked to a fixed point. Each surviving user's
    positives are shuffled by an RNG derived from (seed, user index) and
    split by ceiling counts on the given fractions, with at least one item
    forced into every split. The construction is a pure function of
    (ratings, parameters, seed).
    """
    f_train, f_valid, f_test = split
    if min(f_train, f_valid, f_test) <= 0 or abs(f_train + f_valid + f_test - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {split}")
    if min_interactions < 3:
        raise ValueError("min_interactions must be >= 3 (one item per split)")

    rows = _dedupe_max_rating(ratings)

    # fixed-point filter on user interaction counts; dropping a user may
    # orphan items, whose removal cannot change other users' counts
    kept_users: set[str] | None = None
    while True:
        user_count: dict[str, int] = {}
        for r in rows:
            user_count[r.user_id] = user_count.get(r.user_id, 0) + 1
        kept_users = {u for u, c in user_count.items() if c >= min_interactions}
        if len(kept_users) == len(user_count):
            break
        rows = [r for r in rows if r.user_id in kept_users]
        if not rows:
            raise EmptyDatasetError(
                f"all users fell below min_interactions={min_interactions}")
    if not rows:
        raise EmptyDatasetError("no interactions to build a dataset from")

    item_tokens_seen: dict[str, None] = {}
    for r in rows:
        item_tokens_seen.setdefault(r.item_id, None)
    if keep_cold_items:
        # retain every item token seen in the raw input, warm or cold
        for r in ratings:
            item_tokens_seen.setdefault(r.item_id, None)

    user_index: dict[str, int] = {}
    for r in rows:
        if r.user_id not in user_index:
            user_index[r.user_id] = len(user_index)
    item_index = {tok: i for i, tok in enumerate(item_tokens_seen)}

    num_users = len(user_index)
    num_items = len(item_index)
    per_user: list[list[int]] = [[] for _ in range(num_users)]
    for r in rows:
        per_user[user_index[r.user_id]].append(item_index[r.item_id])

    train_pos, valid_pos, test_pos = [], [], []
    popularity = np.zeros(num_items, dtype=np.int64)
    for u in range(num_users):
        items = np.asarray(per_user[u], dtype=np.int64)
        rng = np.random.default_rng([seed, _SPLIT_STREAM, u])
        rng.shuffle(items)
        n_train, n_valid, _ = _split_counts(len(items), f_train, f_valid)
        tr = np.sort(items[:n_train])
        va = np.sort(items[n_train:n_train + n_valid])
        te = np.sort(items[n_train + n_valid:])
        train_pos.append(tr)
        valid_pos.append(va)
        test_pos.append(te)
        popularity[tr] += 1

    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train_pos=train_pos,
        valid_pos=valid_pos,
        test_pos=test_pos,
        user_index=user_index,
        item_index=item_index,
        item_popularity=popularity,
        params={
            "min_interactions": min_interactions,
            "split": [f_train, f_valid, f_test],
            "seed": seed,
            "keep_cold_items": keep_cold_items,
        },
    )


@dataclass
class AttributeTable:
    """Per-item attribute-id sets; items without attributes hold the empty set."""

    item_attrs: list[frozenset[int]]
    attribute_names: list[str]
    skipped: int = 0

    def num_attributes(self) -> int:
        return len(self.attribute_names)

    def to_json_dict(self) -> dict:
        return {
            "format": "dpcml-attributes",
            "version": 1,
            "item_attrs": [sorted(s) for s in self.item_attrs],
            "attribute_names": self.attribute_names,
            "skipped": self.skipped,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def from_json_dict(cls, raw: dict) -> "AttributeTable":
        if raw.get("format") != "dpcml-attributes":
            raise ValueError("not an attribute document")
        return cls(
            item_attrs=[frozenset(a) for a in raw["item_attrs"]],
            attribute_names=list(raw["attribute_names"]),
            skipped=int(raw.get("skipped", 0)),
        )

    @classmethod
    def load(cls, path) -> "AttributeTable":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def load_attributes(path, fmt: str, dataset: InteractionDataset) -> AttributeTable:
    """Load per-item attribute sets, resolving item tokens against the dataset.

    Rows for unknown item tokens are skipped and counted. Attribute ids are
    assigned in first-seen order; pipe-separated lists become id sets.
    """
    if fmt not in ATTRIBUTE_FORMATS:
        raise ValueError(f"unknown attributes format {fmt!r}; choose from {ATTRIBUTE_FORMATS}")
    attrs: list[set[int]] = [set() for _ in range(dataset.num_items)]
    names: list[str] = []
    name_to_id: dict[str, int] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if fmt == "movielens-genres":
                parts = line.split("::")
                if len(parts) < 3:
                    raise ParseError(path, line_no, "expected item::title::genres")
                token, attr_field = parts[0].strip(), parts[2]
            else:  # tsv-multi: item \t attr1|attr2|...
                parts = line.split("\t")
                if len(parts) < 2:
                    raise ParseError(path, line_no, "expected item<TAB>attributes")
                token, attr_field = parts[0].strip(), parts[1]
            idx = dataset.item_index.get(token)
            if idx is None:
                skipped += 1
                continue
            for name in attr_field.split("|"):
                name = name.strip()
                if not name:
                    continue
                if name not in name_to_id:
                    name_to_id[name] = len(names)
                    names.append(name)
                attrs[idx].add(name_to_id[name])
    if skipped:
        log.warning("load_attributes: skipped %d rows with unknown item tokens", skipped)
    return AttributeTable(
        item_attrs=[frozenset(s) for s in attrs],
        attribute_names=names,
        skipped=skipped,
    )
