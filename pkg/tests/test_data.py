"""Ingestion: parsing, threshold filtering, splitting, persistence."""

import json

import numpy as np
import pytest

from dpcml.data import (AttributeTable, EmptyDatasetError, InteractionDataset,
                        ParseError, RawRating, build_dataset, load_attributes,
                        load_ratings)

from conftest import random_dataset


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadRatings:
    def test_movielens_threshold_kept(self, tmp_path):
        p = write(tmp_path, "r.dat", "1::1193::5::978300760\n")
        rows = load_ratings(p, "movielens-dcolon", threshold=4)
        assert rows == [RawRating("1", "1193", 5.0, 978300760)]

    def test_movielens_threshold_dropped(self, tmp_path):
        p = write(tmp_path, "r.dat",
                  "1::1193::5::978300760\n1::661::3::978302109\n")
        rows = load_ratings(p, "movielens-dcolon", threshold=4)
        assert [r.item_id for r in rows] == ["1193"]

    def test_implicit_passthrough(self, tmp_path):
        p = write(tmp_path, "r.tsv", "u7\tg42\n")
        rows = load_ratings(p, "tsv")
        assert rows == [RawRating("u7", "g42", None, None)]

    def test_csv_with_quoted_item(self, tmp_path):
        p = write(tmp_path, "r.csv", 'u1,"game, the",1.0\n')
        rows = load_ratings(p, "csv")
        assert rows[0].item_id == "game, the"
        assert rows[0].rating == 1.0

    def test_malformed_line_carries_number(self, tmp_path):
        p = write(tmp_path, "r.dat", "1::2::5\njunkline\n")
        with pytest.raises(ParseError) as exc:
            load_ratings(p, "movielens-dcolon")
        assert exc.value.line_no == 2

    def test_bad_rating_is_parse_error(self, tmp_path):
        p = write(tmp_path, "r.dat", "1::2::five\n")
        with pytest.raises(ParseError):
            load_ratings(p, "movielens-dcolon")

    def test_empty_result_raises(self, tmp_path):
        p = write(tmp_path, "r.dat", "1::2::1\n")
        with pytest.raises(EmptyDatasetError):
            load_ratings(p, "movielens-dcolon", threshold=4)

    def test_unknown_format_rejected(self, tmp_path):
        p = write(tmp_path, "r.dat", "1::2::5\n")
        with pytest.raises(ValueError):
            load_ratings(p, "parquet")


class TestBuildDataset:
    def test_five_positives_split_3_1_1(self):
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        assert len(ds.train_pos[0]) == 3
        assert len(ds.valid_pos[0]) == 1
        assert len(ds.test_pos[0]) == 1

    def test_user_below_min_interactions_removed(self):
        rows = [RawRating("a", f"i{k}") for k in range(5)]
        rows += [RawRating("b", f"i{k}") for k in range(4)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        assert "b" not in ds.user_index
        assert ds.num_users == 1

    def test_all_users_filtered_raises(self):
        rows = [RawRating("a", "x"), RawRating("a", "y")]
        with pytest.raises(EmptyDatasetError):
            build_dataset(rows, min_interactions=5, seed=0)

    def test_duplicates_deduped_keeping_max(self):
        rows = [RawRating("a", f"i{k}", 1.0) for k in range(5)]
        rows += [RawRating("a", "i0", 5.0)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        assert ds.n_pos(0) == 5

    def test_cold_items_dropped_by_default(self):
        rows = [RawRating("a", f"i{k}") for k in range(5)]
        rows += [RawRating("b", "i99")]  # b filtered out, i99 orphaned
        ds = build_dataset(rows, min_interactions=5, seed=0)
        assert "i99" not in ds.item_index
        ds_keep = build_dataset(rows, min_interactions=5, seed=0, keep_cold_items=True)
        assert "i99" in ds_keep.item_index

    def test_split_disjoint_and_complete(self, rng):
        ds = random_dataset(rng, num_users=10, num_items=30)
        for u in range(ds.num_users):
            tr = set(ds.train_pos[u].tolist())
            va = set(ds.valid_pos[u].tolist())
            te = set(ds.test_pos[u].tolist())
            assert tr and va and te
            assert not (tr & va or tr & te or va & te)
            assert sorted(tr | va | te) == ds.positives(u, "all").tolist()
            assert ds.n_pos(u) + ds.n_neg(u) == ds.num_items

    def test_dense_indices(self, rng):
        ds = random_dataset(rng)
        assert sorted(ds.user_index.values()) == list(range(ds.num_users))
        assert sorted(ds.item_index.values()) == list(range(ds.num_items))

    def test_popularity_sums_to_train_total(self, rng):
        ds = random_dataset(rng)
        total_train = sum(len(ds.train_pos[u]) for u in range(ds.num_users))
        assert int(ds.item_popularity.sum()) == total_train

    def test_deterministic_and_byte_identical(self, tmp_path):
        rows = [RawRating(f"u{u}", f"i{(u * 3 + k) % 17}")
                for u in range(6) for k in range(7)]
        a = build_dataset(rows, min_interactions=5, seed=42)
        b = build_dataset(rows, min_interactions=5, seed=42)
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_seed_changes_split(self):
        rows = [RawRating("u", f"i{k}") for k in range(12)]
        a = build_dataset(rows, min_interactions=5, seed=0)
        b = build_dataset(rows, min_interactions=5, seed=1)
        assert (a.train_pos[0].tolist() != b.train_pos[0].tolist()
                or a.valid_pos[0].tolist() != b.valid_pos[0].tolist())

    def test_min_interactions_floor(self):
        rows = [RawRating("u", f"i{k}") for k in range(3)]
        ds = build_dataset(rows, min_interactions=3, seed=0)
        assert (len(ds.train_pos[0]), len(ds.valid_pos[0]), len(ds.test_pos[0])) == (1, 1, 1)
        with pytest.raises(ValueError):
            build_dataset(rows, min_interactions=2, seed=0)

    def test_bad_fractions_rejected(self):
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        with pytest.raises(ValueError):
            build_dataset(rows, split=(0.9, 0.2, 0.2), seed=0)

    def test_json_roundtrip(self, rng, tmp_path):
        ds = random_dataset(rng)
        p = tmp_path / "ds.json"
        ds.save(p)
        back = InteractionDataset.load(p)
        assert back.num_users == ds.num_users
        assert back.num_items == ds.num_items
        for u in range(ds.num_users):
            assert back.train_pos[u].tolist() == ds.train_pos[u].tolist()
        assert back.user_index == ds.user_index
        assert back.item_popularity.tolist() == ds.item_popularity.tolist()

    def test_is_train_positive(self, rng):
        ds = random_dataset(rng)
        users, items = [], []
        expected = []
        for u in range(ds.num_users):
            tr = set(ds.train_pos[u].tolist())
            for j in range(ds.num_items):
                users.append(u)
                items.append(j)
                expected.append(j in tr)
        got = ds.is_train_positive(np.asarray(users), np.asarray(items))
        assert got.tolist() == expected


class TestAttributes:
    def test_movielens_single_genre(self, tmp_path):
        rows = [RawRating("u", f"{k}") for k in (1193, 661, 2, 3, 4)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        p = write(tmp_path, "movies.dat",
                  "1193::One Flew Over the Cuckoo's Nest (1975)::Drama\n")
        table = load_attributes(p, "movielens-genres", ds)
        idx = ds.item_index["1193"]
        assert {table.attribute_names[a] for a in table.item_attrs[idx]} == {"Drama"}

    def test_movielens_multi_genre(self, tmp_path):
        rows = [RawRating("u", f"{k}") for k in (661, 1, 2, 3, 4)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        p = write(tmp_path, "movies.dat",
                  "661::James and the Giant Peach (1996)::Animation|Children's|Musical\n")
        table = load_attributes(p, "movielens-genres", ds)
        idx = ds.item_index["661"]
        assert len(table.item_attrs[idx]) == 3

    def test_unknown_item_skipped_with_count(self, tmp_path):
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        p = write(tmp_path, "movies.dat", "999::Unknown::Drama\ni0::X::Comedy\n")
        table = load_attributes(p, "movielens-genres", ds)
        assert table.skipped == 1
        idx = ds.item_index["i0"]
        assert {table.attribute_names[a] for a in table.item_attrs[idx]} == {"Comedy"}

    def test_tsv_multi(self, tmp_path):
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        p = write(tmp_path, "attrs.tsv", "i0\tA|B\ni1\tB\n")
        table = load_attributes(p, "tsv-multi", ds)
        assert table.item_attrs[ds.item_index["i0"]] == frozenset({0, 1})
        assert table.item_attrs[ds.item_index["i1"]] == frozenset({1})
        assert table.item_attrs[ds.item_index["i2"]] == frozenset()

    def test_attribute_roundtrip(self, tmp_path):
        rows = [RawRating("u", f"i{k}") for k in range(5)]
        ds = build_dataset(rows, min_interactions=5, seed=0)
        p = write(tmp_path, "attrs.tsv", "i0\tA|B\n")
        table = load_attributes(p, "tsv-multi", ds)
        out = tmp_path / "attrs.json"
        table.save(out)
        back = AttributeTable.load(out)
        assert back.item_attrs == table.item_attrs
        assert back.attribute_names == table.attribute_names
