"""Checks that bind to the real public datasets when they are available.

These encode documented corpus statistics (user/item/interaction counts,
density) and the qualitative preference-diversity histogram; they skip when
the files are absent. See README for the expected data layout.
"""

import pytest

from dpcml.data import build_dataset, load_attributes, load_ratings
from dpcml.evaluation import diversity_values

from conftest import ML1M_MOVIES, ML1M_RATINGS, STEAM_TSV

needs_steam = pytest.mark.skipif(not STEAM_TSV.exists(),
                                 reason=f"{STEAM_TSV} not present")
needs_ml1m = pytest.mark.skipif(not (ML1M_RATINGS.exists() and ML1M_MOVIES.exists()),
                                reason=f"{ML1M_RATINGS} not present")


@needs_steam
def test_steam_corpus_statistics():
    ratings = load_ratings(STEAM_TSV, "tsv")
    ds = build_dataset(ratings, min_interactions=5, seed=0)
    assert ds.num_users == 3757
    assert ds.num_items == 5113
    assert ds.num_interactions() == 115139
    assert 100.0 * ds.density() == pytest.approx(0.5994, abs=5e-4)


@needs_ml1m
def test_ml1m_corpus_statistics():
    ratings = load_ratings(ML1M_RATINGS, "movielens-dcolon", threshold=4)
    # 575,271 positive ratings before the interaction filter
    assert len(ratings) == 575271
    ds = build_dataset(ratings, min_interactions=5, seed=0)
    assert ds.num_users == pytest.approx(6034, abs=10)
    assert ds.num_items == pytest.approx(3953, abs=60)


@needs_ml1m
def test_ml1m_diversity_histogram_shape():
    ratings = load_ratings(ML1M_RATINGS, "movielens-dcolon", threshold=4)
    ds = build_dataset(ratings, min_interactions=5, seed=0)
    attrs = load_attributes(ML1M_MOVIES, "movielens-genres", ds)
    vals = diversity_values(ds, attrs)
    in_band = float(((vals > 0) & (vals <= 0.8)).mean())
    at_one = float((vals == 1.0).mean())
    assert in_band > 0.5
    assert at_one < 0.05
