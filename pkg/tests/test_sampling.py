"""Negative samplers: distributions, exclusion soundness, hard selection."""

import numpy as np
import pytest

from dpcml.data import RawRating, build_dataset
from dpcml.embedding import EmbeddingStore, init_store
from dpcml.objective import hinge_loss
from dpcml.sampling import (SamplingError, Triplet, sample_popularity,
                            sample_popularity_batch, sample_uniform,
                            sample_uniform_batch, select_hard,
                            select_hard_batch)

from conftest import random_dataset


def dataset_with_counts(per_user_items, num_items=None):
    """Build a dataset whose users interact with the given item-id lists."""
    rows = []
    for u, items in enumerate(per_user_items):
        for j in items:
            rows.append(RawRating(f"u{u}", f"i{j}"))
    if num_items is not None:
        # touch remaining items from a filler user with enough interactions
        filler = [j for j in range(num_items)]
        for j in filler:
            rows.append(RawRating("filler", f"i{j}"))
    return build_dataset(rows, min_interactions=5, seed=0)


class TestUniform:
    def test_forced_single_candidate(self):
        # user positives cover all but one item
        ds = dataset_with_counts([range(9)], num_items=10)
        u = ds.user_index["u0"]
        # exclusion is train positives only; find an item outside them
        cand = sorted(set(range(ds.num_items)) - set(ds.train_pos[u].tolist()))
        rng = np.random.default_rng(0)
        draws = sample_uniform(ds, u, 20, rng)
        assert set(draws.tolist()) <= set(cand)

    def test_frequency_uniform(self):
        ds = dataset_with_counts([range(5)], num_items=15)
        u = ds.user_index["u0"]
        cand = np.setdiff1d(np.arange(ds.num_items), ds.train_pos[u])
        n = 100_000
        rng = np.random.default_rng(1)
        draws = sample_uniform(ds, u, n, rng)
        counts = np.bincount(draws, minlength=ds.num_items)[cand]
        expect = n / len(cand)
        sigma = np.sqrt(n * (1 / len(cand)) * (1 - 1 / len(cand)))
        assert (np.abs(counts - expect) <= 5 * sigma).all()

    def test_deterministic(self):
        ds = dataset_with_counts([range(6)], num_items=12)
        u = ds.user_index["u0"]
        a = sample_uniform(ds, u, 50, np.random.default_rng(9))
        b = sample_uniform(ds, u, 50, np.random.default_rng(9))
        assert a.tolist() == b.tolist()

    def test_no_candidates_raises(self):
        # single user interacting with every item: negatives impossible once
        # train positives cover the whole catalogue
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        ds.train_pos[0] = np.arange(ds.num_items)
        with pytest.raises(SamplingError):
            sample_uniform(ds, 0, 3, np.random.default_rng(0))


class TestPopularity:
    def test_ratio_two_to_one(self):
        # candidates with popularity 3 and 1 smooth to 4:2
        ds = dataset_with_counts([range(5)], num_items=7)
        u = ds.user_index["u0"]
        cand = np.setdiff1d(np.arange(ds.num_items), ds.train_pos[u])[:2]
        ds.item_popularity[:] = 0
        ds.item_popularity[cand[0]] = 3
        ds.item_popularity[cand[1]] = 1
        # keep only the two target candidates: mark others as train positives
        others = np.setdiff1d(np.arange(ds.num_items), cand)
        ds.train_pos[0] = np.sort(others)
        ds._train_csr = None
        n = 100_000
        draws = sample_popularity(ds, u, n, np.random.default_rng(2))
        c0 = int((draws == cand[0]).sum())
        p = 4.0 / 6.0
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(c0 - n * p) <= 5 * sigma

    def test_equal_popularity_reduces_to_uniform(self):
        ds = dataset_with_counts([range(5)], num_items=15)
        u = ds.user_index["u0"]
        ds.item_popularity[:] = 4
        cand = np.setdiff1d(np.arange(ds.num_items), ds.train_pos[u])
        n = 100_000
        draws = sample_popularity(ds, u, n, np.random.default_rng(3))
        counts = np.bincount(draws, minlength=ds.num_items)[cand]
        expect = n / len(cand)
        sigma = np.sqrt(n * (1 / len(cand)) * (1 - 1 / len(cand)))
        assert (np.abs(counts - expect) <= 5 * sigma).all()

    def test_deterministic(self):
        ds = dataset_with_counts([range(6)], num_items=12)
        u = ds.user_index["u0"]
        a = sample_popularity(ds, u, 50, np.random.default_rng(4))
        b = sample_popularity(ds, u, 50, np.random.default_rng(4))
        assert a.tolist() == b.tolist()

    def test_zero_popularity_reachable(self):
        ds = dataset_with_counts([range(5)], num_items=12)
        u = ds.user_index["u0"]
        ds.item_popularity[:] = 0
        draws = sample_popularity(ds, u, 10_000, np.random.default_rng(5))
        cand = np.setdiff1d(np.arange(ds.num_items), ds.train_pos[u])
        assert set(draws.tolist()) == set(cand.tolist())


class TestSelectHard:
    def test_picks_smallest_score(self):
        st = EmbeddingStore(np.zeros((1, 1, 1)),
                            np.asarray([[np.sqrt(3.0)], [np.sqrt(0.2)], [np.sqrt(1.1)]]),
                            10.0, "euclidean")
        assert select_hard(st, 0, [0, 1, 2]) == 1

    def test_single_candidate(self):
        st = init_store(1, 3, 2, 2, seed=0)
        assert select_hard(st, 0, [2]) == 2

    def test_ties_to_lowest_index(self):
        st = EmbeddingStore(np.zeros((1, 1, 2)),
                            np.asarray([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]),
                            10.0, "euclidean")
        assert select_hard(st, 0, [2, 1, 0]) == 0

    def test_hard_dominance(self, rng):
        # the selected negative's hinge is >= any other candidate's hinge
        for _ in range(50):
            st = EmbeddingStore(rng.normal(size=(3, 2, 4)),
                                rng.normal(size=(10, 4)), 10.0, "euclidean")
            u = int(rng.integers(3))
            vp = int(rng.integers(10))
            cands = rng.choice(10, size=4, replace=False).tolist()
            sel = select_hard(st, u, cands)
            h_sel = hinge_loss(st, u, vp, sel, 1.0)
            for c in cands:
                assert h_sel >= hinge_loss(st, u, vp, int(c), 1.0) - 1e-12


class TestBatchPaths:
    def test_exclusion_soundness(self, rng):
        ds = random_dataset(rng, num_users=12, num_items=40, min_pos=5, max_pos=12)
        users = rng.integers(0, ds.num_users, size=2500)
        for fn in (sample_uniform_batch, sample_popularity_batch):
            negs = fn(ds, users, 4, np.random.default_rng(7))
            flat_u = np.repeat(users, 4)
            assert not ds.is_train_positive(flat_u, negs.ravel()).any()

    def test_uniform_batch_distribution(self):
        ds = dataset_with_counts([range(5)], num_items=15)
        u = ds.user_index["u0"]
        users = np.full(20_000, u)
        negs = sample_uniform_batch(ds, users, 5, np.random.default_rng(8))
        cand = np.setdiff1d(np.arange(ds.num_items), ds.train_pos[u])
        counts = np.bincount(negs.ravel(), minlength=ds.num_items)[cand]
        n = negs.size
        expect = n / len(cand)
        sigma = np.sqrt(n * (1 / len(cand)) * (1 - 1 / len(cand)))
        assert (np.abs(counts - expect) <= 5 * sigma).all()

    def test_hard_batch_matches_per_user(self, rng):
        st = init_store(6, 25, 3, 4, seed=13, r=1.0)
        users = rng.integers(0, 6, size=40)
        cands = rng.integers(0, 25, size=(40, 6))
        got = select_hard_batch(st, users, cands)
        for k in range(40):
            assert int(got[k]) == select_hard(st, int(users[k]), cands[k])

    def test_triplet_fields(self):
        t = Triplet(3, 7, (1, 2))
        assert (t.u, t.v_pos, t.v_negs) == (3, 7, (1, 2))
