"""Tests for pool splitting and episodic task sampling."""

from __future__ import annotations

import filecmp

import pytest

from protoner.episodes import (
    QUERY_CAP,
    SUPPORT_CAP,
    EpisodeTask,
    build_pools,
    read_episodes,
    sample_episodes,
    write_episodes,
)
from protoner.rng import Rng
from protoner.spans import MARKER, MarkedSpan
from protoner.taxonomy import UNKNOWN_TYPE


def _spans(category: str, n: int) -> list[MarkedSpan]:
    return [
        MarkedSpan(f"{category}:{i}", 0, 1, (MARKER, f"w{i}", "end"), category) for i in range(n)
    ]


class TestBuildPools:
    def test_ratio_arithmetic_then_caps(self):
        store = {"A": _spans("A", 1000)}
        pools = build_pools(store, r_train=0.3, rng=Rng(1))
        assert len(pools.support["A"]) == 300
        assert len(pools.validation["A"]) == 100
        # 600 remain for query pre-cap; the cap shrinks it to 400
        assert len(pools.query["A"]) == QUERY_CAP

    def test_support_cap(self):
        one = MarkedSpan("A:0", 0, 1, (MARKER, "w"), "A")
        store = {"A": [one] * 100_000}
        pools = build_pools(store, r_train=0.8, rng=Rng(1))
        assert len(pools.support["A"]) == SUPPORT_CAP

    def test_pools_disjoint_and_exhaustive(self):
        store = {"A": _spans("A", 100)}
        pools = build_pools(store, r_train=0.5, rng=Rng(2))
        sup = {s.sentence_id for s in pools.support["A"]}
        val = {s.sentence_id for s in pools.validation["A"]}
        qry = {s.sentence_id for s in pools.query["A"]}
        assert len(sup) == 50 and len(val) == 10 and len(qry) == 40
        assert not (sup & val) and not (sup & qry) and not (val & qry)
        assert len(sup | val | qry) == 100

    def test_ratio_bounds_enforced(self):
        store = {"A": _spans("A", 10)}
        for bad in (0.2, 0.85):
            with pytest.raises(ValueError, match="r_train"):
                build_pools(store, r_train=bad, rng=Rng(1))

    def test_same_seed_same_pools(self):
        store = {"A": _spans("A", 50), "B": _spans("B", 50)}
        assert build_pools(store, 0.5, Rng(7)) == build_pools(store, 0.5, Rng(7))

    def test_exclude_unknown(self):
        store = {"A": _spans("A", 10), UNKNOWN_TYPE: _spans(UNKNOWN_TYPE, 10)}
        pools = build_pools(store, 0.5, Rng(1), exclude_unknown=True)
        assert pools.categories() == ("A",)


class TestSampleEpisodes:
    def _pools(self, n_cats=3, per_cat=60):
        store = {f"C{i}": _spans(f"C{i}", per_cat) for i in range(n_cats)}
        return build_pools(store, r_train=0.5, rng=Rng(3))

    def test_support_size_is_ways_times_shots(self):
        pools = self._pools()
        tasks = sample_episodes(pools, n_ways=3, k_shots=4, count=5, rng=Rng(4))
        assert len(tasks) == 5
        for t in tasks:
            assert sorted(t.categories) == ["C0", "C1", "C2"]
            assert sum(len(v) for v in t.support.values()) == 12
            for c in t.categories:
                assert len(set(s.sentence_id for s in t.support[c])) == 4  # no replacement

    def test_ways_must_match_category_count(self):
        with pytest.raises(ValueError, match="n_ways"):
            sample_episodes(self._pools(), n_ways=2, k_shots=1, count=1, rng=Rng(1))

    def test_insufficient_pool_names_category(self):
        pools = self._pools(per_cat=20)  # validation pool = 2 per category
        with pytest.raises(ValueError, match=r"category 'C\d'.*validation"):
            sample_episodes(pools, n_ways=3, k_shots=2, count=1, rng=Rng(1), val_shots=5)

    def test_zero_count(self):
        assert sample_episodes(self._pools(), 3, 2, count=0, rng=Rng(1)) == []

    def test_tasks_vary_but_seed_fixes_them(self):
        pools = self._pools(per_cat=200)
        a = sample_episodes(pools, 3, 5, count=10, rng=Rng(9))
        b = sample_episodes(pools, 3, 5, count=10, rng=Rng(9))
        assert a == b
        supports = {tuple(s.sentence_id for c in t.categories for s in t.support[c]) for t in a}
        assert len(supports) > 1  # different tasks draw different support sets

    def test_serialization_byte_identical(self, tmp_path):
        pools = self._pools()
        tasks = sample_episodes(pools, 3, 2, count=4, rng=Rng(5))
        d1, d2 = tmp_path / "e1", tmp_path / "e2"
        write_episodes(tasks, d1)
        write_episodes(sample_episodes(pools, 3, 2, count=4, rng=Rng(5)), d2)
        match, mismatch, errors = filecmp.cmpfiles(
            d1, d2, [p.name for p in d1.iterdir()], shallow=False
        )
        assert not mismatch and not errors

    def test_round_trip(self, tmp_path):
        tasks = sample_episodes(self._pools(), 3, 2, count=3, rng=Rng(6))
        write_episodes(tasks, tmp_path / "ep")
        assert read_episodes(tmp_path / "ep") == tasks
