from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augforge.errors import InfeasibleRatio, InsufficientData, InvalidAlpha, TooFewItems, UnevenAugCount
from augforge.search import Dim, ParamSpace
from augforge.strategy import (
    DatasetManifest,
    ManifestEntry,
    assign_loss_weights,
    balanced_validation,
    build_minibatch_groups,
    build_ratio_manifest,
    cv_folds,
    manifest_folds,
    split_dataset,
)

SPACE = ParamSpace((Dim("streak_density", "continuous", lo=100, hi=5000),))


def ids(n, prefix="img"):
    return [f"{prefix}{i:04d}" for i in range(n)]


def counts(m):
    c = Counter(e.role for e in m.entries if e.split == "train")
    return c["real"], c["augmented"]


class TestRatio:
    @pytest.mark.parametrize("ratio,expected", [("1:1", 100), ("2:1", 50), ("1:3", 300), ("3:2", 66)])
    def test_counts(self, ratio, expected):
        n = 99 if ratio == "3:2" else 100
        m = build_ratio_manifest(ids(n), ratio, "rain", SPACE, 0)
        assert counts(m) == (n, expected)

    def test_fractional_spread(self):
        m = build_ratio_manifest(ids(100), "2:1", "rain", SPACE, 0)
        per = Counter(e.parent_id for e in m.entries if e.role == "augmented")
        assert set(per.values()) == {1} and len(per) == 50

    def test_infeasible_count(self):
        with pytest.raises(InfeasibleRatio):
            build_ratio_manifest(ids(5), "2:1", "rain", SPACE, 0)

    def test_space_too_small(self):
        small = ParamSpace((Dim("streak_density", "discrete", values=(100, 200)),))
        with pytest.raises(InfeasibleRatio):
            build_ratio_manifest(ids(4), "1:3", "rain", small, 0)

    def test_children_distinct(self):
        m = build_ratio_manifest(ids(20), "1:3", "rain", SPACE, 5)
        for kids in m.children().values():
            assert len({k.spec_ref for k in kids}) == 3

    def test_byte_identical(self):
        a = build_ratio_manifest(ids(30), "1:2", "rain", SPACE, 7).to_json()
        assert a == build_ratio_manifest(ids(30), "1:2", "rain", SPACE, 7).to_json()
        assert a != build_ratio_manifest(ids(30), "1:2", "rain", SPACE, 8).to_json()

    def test_json_round_trip(self, tmp_path):
        m = build_ratio_manifest(ids(10), "1:1", "fog", ParamSpace((Dim("beta", "continuous", lo=0.01, hi=0.1),)), 1)
        m.save(tmp_path / "m.json")
        assert DatasetManifest.load(tmp_path / "m.json").to_json() == m.to_json()


class TestGroups:
    def test_groups_of_four(self):
        m = build_minibatch_groups(build_ratio_manifest(ids(10), "1:3", "rain", SPACE, 0), 3)
        groups = Counter(e.group_id for e in m.entries)
        assert len(groups) == 10 and set(groups.values()) == {4}
        for gid in groups:
            members = [e for e in m.entries if e.group_id == gid]
            assert sum(e.role == "real" for e in members) == 1

    def test_contiguous_parent_first(self):
        m = build_minibatch_groups(build_ratio_manifest(ids(4), "1:2", "rain", SPACE, 0), 2)
        roles = [e.role for e in m.entries]
        assert roles == ["real", "augmented", "augmented"] * 4

    def test_singletons(self):
        m = DatasetManifest(tuple(ManifestEntry(i, f"{i}.png") for i in ids(3)))
        assert len({e.group_id for e in build_minibatch_groups(m, 0).entries}) == 3

    def test_uneven(self):
        m = build_ratio_manifest(ids(4), "2:3", "rain", SPACE, 0)
        with pytest.raises(UnevenAugCount):
            build_minibatch_groups(m, 1)


class TestWeights:
    def test_alpha(self):
        m = assign_loss_weights(build_ratio_manifest(ids(4), "1:1", "rain", SPACE, 0), 0.7)
        w = {e.role: e.loss_weight for e in m.entries}
        assert w["augmented"] == 0.7 and w["real"] == pytest.approx(0.3)
        assert len(m.entries) == 8

    def test_adverse_real_gets_alpha(self):
        m = DatasetManifest((ManifestEntry("a", "a.png", condition_tag="rain"), ManifestEntry("b", "b.png")))
        w = {e.entry_id: e.loss_weight for e in assign_loss_weights(m, 0.6).entries}
        assert w == {"a": 0.6, "b": pytest.approx(0.4)}

    @pytest.mark.parametrize("alpha", [0, 1, -0.1])
    def test_bounds(self, alpha):
        m = DatasetManifest((ManifestEntry("a", "a.png"),))
        with pytest.raises(InvalidAlpha):
            assign_loss_weights(m, alpha)


class TestValidation:
    def test_balanced(self):
        base = build_ratio_manifest(ids(10), "1:1", "rain", SPACE, 0)
        m = balanced_validation(base, ids(200, "c"), ids(150, "r"), 100, 3)
        val = [e for e in m.entries if e.split == "val"]
        assert Counter(e.condition_tag for e in val) == {"clear": 100, "rain": 100}
        assert not {e.entry_id for e in val} & {e.entry_id for e in m.entries if e.split != "val"}

    def test_insufficient(self):
        base = DatasetManifest((ManifestEntry("a", "a.png"),))
        with pytest.raises(InsufficientData):
            balanced_validation(base, ids(200, "c"), ids(50, "r"), 100)

    def test_empty(self):
        base = DatasetManifest((ManifestEntry("a", "a.png"),))
        assert not [e for e in balanced_validation(base, [], [], 0).entries if e.split == "val"]


class TestSplits:
    def test_stratified(self):
        items = [(i, "clear") for i in ids(2000, "c")] + [(i, "rain") for i in ids(1000, "r")]
        out = split_dataset(items, (0.5, 0.25, 0.25), 0)
        train = Counter(dict(items)[i] for i, s in out.items() if s == "train")
        assert train == {"clear": 1000, "rain": 500}
        assert len(out) == 3000

    def test_all_train(self):
        out = split_dataset([(i, "clear") for i in ids(7)], (1, 0, 0))
        assert set(out.values()) == {"train"}

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 60), st.integers(0, 30), st.integers(0, 2**32))
    def test_partition_and_proportion(self, n_clear, n_rain, seed):
        items = [(i, "clear") for i in ids(n_clear, "c")] + [(i, "rain") for i in ids(n_rain, "r")]
        out = split_dataset(items, (0.6, 0.2, 0.2), seed)
        assert set(out) == {i for i, _ in items}
        for tag, n in (("clear", n_clear), ("rain", n_rain)):
            got = sum(1 for i, t in items if t == tag and out[i] == "train")
            assert abs(got - 0.6 * n) <= 1
        assert out == split_dataset(items, (0.6, 0.2, 0.2), seed)


class TestFolds:
    def test_partition(self):
        folds = cv_folds(ids(10), 5, 0)
        holdouts = [set(h) for _, h in folds]
        assert all(len(h) == 2 for h in holdouts)
        assert set().union(*holdouts) == set(ids(10))
        assert folds == cv_folds(ids(10), 5, 0)

    def test_parents_co_travel(self):
        m = build_ratio_manifest(ids(12), "1:3", "rain", SPACE, 0)
        for train, hold in manifest_folds(m, 4, 9):
            for e in m.entries:
                if e.parent_id is not None:
                    assert (e.entry_id in hold) == (e.parent_id in hold)
            assert not set(train) & set(hold)

    def test_too_few(self):
        with pytest.raises(TooFewItems):
            cv_folds(ids(3), 5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 40), st.integers(0, 1000))
    def test_sizes_balanced(self, k, extra, seed):
        folds = cv_folds(ids(k + extra), k, seed)
        sizes = [len(h) for _, h in folds]
        assert max(sizes) - min(sizes) <= 1 and sum(sizes) == k + extra
