"""Shared fixtures: small random instances plus optional real-data discovery.

Real datasets are picked up from $DPCML_DATA_DIR (default: ./data). When the
files are absent, data-dependent tests either skip (documentation examples)
or fall back to the seeded synthetic corpus (acceptance criteria), as noted
in each test.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpcml.data import RawRating, build_dataset

DATA_DIR = Path(os.environ.get("DPCML_DATA_DIR", Path(__file__).parent.parent / "data"))

STEAM_TSV = DATA_DIR / "steam_200k.tsv"
ML1M_RATINGS = DATA_DIR / "ml-1m" / "ratings.dat"
ML1M_MOVIES = DATA_DIR / "ml-1m" / "movies.dat"


def random_dataset(rng, num_users=8, num_items=20, min_pos=5, max_pos=9):
    """A small random dataset built through the real ingestion path.

    Item indices are dense over the tokens that actually occur, so the
    resulting num_items may be smaller than requested.
    """
    rows = []
    for u in range(num_users):
        n = int(rng.integers(min_pos, max_pos + 1))
        items = rng.choice(num_items, size=n, replace=False)
        for j in items:
            rows.append(RawRating(f"u{u}", f"i{j}"))
    return build_dataset(rows, min_interactions=5, seed=int(rng.integers(2 ** 31)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)
