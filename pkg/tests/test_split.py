from __future__ import annotations

import numpy as np
import pytest

from conftest import ingest_text, make_csv
from oracles import brute_stratified_quota, brute_top_x
from flowbench import (
    AppSelection,
    AppSelectionMode,
    DatasetConfig,
    SizeTier,
    Store,
    ValApproach,
    materialize,
    materialize_cached,
    select_apps,
    validate,
)
from flowbench.errors import CapExceedsAvailable, SplitError
from flowbench.split import (
    build_test_index,
    build_train_index,
    class_counts_over,
    load_split,
    persist_split,
    split_validation,
)


def top_x(x: int) -> AppSelection:
    return AppSelection(mode=AppSelectionMode.TOP_X, top_x=x)


class TestSelectApps:
    def test_top_x_forced_ordering(self):
        cm = select_apps({"A": 50, "B": 30, "C": 20, "D": 10}, top_x(2))
        assert cm.known == ("A", "B")
        assert cm.unknown == {"C", "D"}
        assert cm.unknown_id == 2

    def test_top_x_tie_breaks_lexicographically(self):
        cm = select_apps({"A": 10, "B": 10, "C": 5}, top_x(1))
        assert cm.known == ("A",)

    def test_all_known_keeps_everything(self):
        counts = {f"c{i:03d}": i + 1 for i in range(102)}
        cm = select_apps(counts, AppSelection())
        assert len(cm.known) == 102
        assert cm.unknown == frozenset()
        assert cm.unknown_id == 102

    def test_top_x_too_large(self):
        with pytest.raises(SplitError):
            select_apps({"A": 1, "B": 2}, top_x(3))

    def test_explicit_unknown(self):
        sel = AppSelection(mode=AppSelectionMode.EXPLICIT_UNKNOWN, unknown_list=("B",))
        cm = select_apps({"A": 5, "B": 3, "C": 1}, sel)
        assert cm.known == ("A", "C")
        assert cm.unknown == {"B"}

    def test_explicit_unknown_unobserved_warns(self):
        sel = AppSelection(mode=AppSelectionMode.EXPLICIT_UNKNOWN, unknown_list=("ghost",))
        with pytest.warns(UserWarning, match="never observed"):
            cm = select_apps({"A": 5}, sel)
        assert cm.known == ("A",)

    def test_fixed_strays_become_unknown_with_warning(self):
        sel = AppSelection(mode=AppSelectionMode.FIXED, known_list=("A",), unknown_list=("B",))
        with pytest.warns(UserWarning, match="neither set"):
            cm = select_apps({"A": 5, "B": 3, "C": 2}, sel)
        assert cm.known == ("A",)
        assert cm.unknown == {"B", "C"}

    def test_novel_test_only_classes_are_unknown_under_top_x(self):
        cm = select_apps({"A": 5, "B": 3}, top_x(2), observed_classes=["A", "B", "N"])
        assert cm.known == ("A", "B")
        assert cm.unknown == {"N"}

    def test_top_x_matches_brute_force(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            n = int(rng.integers(1, 50))
            counts = {f"app{i:04d}": int(rng.integers(0, 40)) for i in range(n)}
            x = int(rng.integers(1, n + 1))
            cm = select_apps(counts, top_x(x))
            assert set(cm.known) == brute_top_x(counts, x)


def weighted_store(tmp_path, per_date: dict[str, int], label="a") -> Store:
    rows = []
    for date, n in per_date.items():
        rows.extend(
            {"date": date, "label": label, "sizes": [10], "ipt": [1.0], "dirs": [1], "stats": [1, 1]}
            for _ in range(n)
        )
    ingest_text(make_csv(rows), "w", tmp_path / "w")
    return Store.open(tmp_path / "w")


class TestBuildTrainIndex:
    def test_proportional_rounding(self, tmp_path):
        store = weighted_store(tmp_path, {"2023-01-01": 100, "2023-01-02": 100})
        cm = select_apps({"a": 200}, AppSelection())
        tier = store.all_row_ids()
        idx = build_train_index(store, tier, list(store.manifest.dates), [0.75, 0.25], 8, cm, seed=1)
        dates = store.date_of_rows(idx)
        assert int((dates == "2023-01-01").sum()) == 6
        assert int((dates == "2023-01-02").sum()) == 2

    def test_saturation_redistribution(self, tmp_path):
        # hand-worked: quotas 5/5 over availability 3/100 -> saturate d1 at 3,
        # shortfall of 2 moves to d2 -> (3, 7)
        store = weighted_store(tmp_path, {"2023-01-01": 3, "2023-01-02": 100})
        cm = select_apps({"a": 103}, AppSelection())
        tier = store.all_row_ids()
        idx = build_train_index(store, tier, list(store.manifest.dates), [0.5, 0.5], 10, cm, seed=1)
        dates = store.date_of_rows(idx)
        assert int((dates == "2023-01-01").sum()) == 3
        assert int((dates == "2023-01-02").sum()) == 7

    def test_no_cap_takes_all_eligible(self, tmp_path):
        store = weighted_store(tmp_path, {"2023-01-01": 40, "2023-01-02": 60})
        cm = select_apps({"a": 100}, AppSelection())
        idx = build_train_index(store, store.all_row_ids(), list(store.manifest.dates), None, None, cm, seed=1)
        assert len(idx) == 100

    def test_cap_exceeds_available(self, tmp_path):
        store = weighted_store(tmp_path, {"2023-01-01": 5})
        cm = select_apps({"a": 5}, AppSelection())
        with pytest.raises(CapExceedsAvailable, match="maximum achievable 5"):
            build_train_index(store, store.all_row_ids(), ["2023-01-01"], None, 6, cm, seed=1)

    def test_unknown_classes_excluded(self, store_small):
        counts = class_counts_over(store_small, store_small.all_row_ids(), store_small.manifest.dates)
        cm = select_apps(counts, top_x(2))
        idx = build_train_index(
            store_small, store_small.all_row_ids(), list(store_small.manifest.dates), None, None, cm, seed=1
        )
        labels = set(store_small.labels_of_rows(idx).tolist())
        assert labels <= set(cm.known)


class TestSplitValidation:
    def make_labeled_store(self, tmp_path, sizes: dict[str, int]) -> Store:
        rows = []
        for label, n in sizes.items():
            rows.extend(
                {"date": "2023-01-01", "label": label, "sizes": [10], "ipt": [1.0], "dirs": [1], "stats": [1, 1]}
                for _ in range(n)
            )
        ingest_text(make_csv(rows), "lab", tmp_path / "lab")
        return Store.open(tmp_path / "lab")

    def test_exact_proportions(self, tmp_path):
        store = self.make_labeled_store(tmp_path, {"A": 80, "B": 20})
        cm = select_apps({"A": 80, "B": 20}, AppSelection())
        train = store.all_row_ids()
        train2, val = split_validation(
            store, train, ValApproach.SPLIT_FROM_TRAIN, fraction=0.2, class_map=cm, seed=3
        )
        labels = store.labels_of_rows(val)
        assert int((labels == "A").sum()) == 16
        assert int((labels == "B").sum()) == 4
        assert len(train2) == 80
        assert len(np.intersect1d(train2, val)) == 0

    def test_singleton_class_stays_in_train(self, tmp_path):
        store = self.make_labeled_store(tmp_path, {"A": 10, "B": 1})
        cm = select_apps({"A": 10, "B": 1}, AppSelection())
        with pytest.warns(UserWarning, match="one training row"):
            train2, val = split_validation(
                store, store.all_row_ids(), ValApproach.SPLIT_FROM_TRAIN,
                fraction=0.5, class_map=cm, seed=3,
            )
        assert "B" not in set(store.labels_of_rows(val).tolist())
        assert "B" in set(store.labels_of_rows(train2).tolist())

    def test_tiny_fraction_empty_val_warns(self, tmp_path):
        store = self.make_labeled_store(tmp_path, {"A": 3})
        cm = select_apps({"A": 3}, AppSelection())
        with pytest.warns(UserWarning, match="empty"):
            train2, val = split_validation(
                store, store.all_row_ids(), ValApproach.SPLIT_FROM_TRAIN,
                fraction=0.05, class_map=cm, seed=3,
            )
        assert len(val) == 0
        assert len(train2) == 3

    def test_deterministic(self, store_small):
        cm = select_apps(
            class_counts_over(store_small, store_small.all_row_ids(), store_small.manifest.dates),
            AppSelection(),
        )
        rows = store_small.all_row_ids()
        a = split_validation(store_small, rows, ValApproach.SPLIT_FROM_TRAIN, fraction=0.25, class_map=cm, seed=9)
        b = split_validation(store_small, rows, ValApproach.SPLIT_FROM_TRAIN, fraction=0.25, class_map=cm, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_matches_quota_oracle(self, tmp_path):
        sizes = {"A": 37, "B": 11, "C": 5, "D": 2, "E": 1}
        store = self.make_labeled_store(tmp_path, sizes)
        cm = select_apps(sizes, AppSelection())
        for fraction in (0.1, 0.2, 0.33):
            with pytest.warns(UserWarning):
                _, val = split_validation(
                    store, store.all_row_ids(), ValApproach.SPLIT_FROM_TRAIN,
                    fraction=fraction, class_map=cm, seed=1,
                )
            labels = store.labels_of_rows(val)
            want = brute_stratified_quota(sizes, fraction)
            got = {c: int((labels == c).sum()) for c in sizes}
            for c in sizes:
                assert got[c] == want.get(c, 0)

    def test_separate_dates_excludes_unknown(self, store_two_weeks):
        store = store_two_weeks
        tier = store.all_row_ids()
        counts = class_counts_over(store, tier, store.manifest.dates[:4])
        cm = select_apps(counts, top_x(3))
        train = build_train_index(store, tier, list(store.manifest.dates[:4]), None, None, cm, seed=2)
        train2, val = split_validation(
            store, train, ValApproach.SEPARATE_DATES,
            val_dates=list(store.manifest.dates[4:6]), tier_rows=tier, class_map=cm, seed=2,
        )
        assert np.array_equal(train2, train)
        val_labels = set(store.labels_of_rows(val).tolist())
        assert val_labels <= set(cm.known)
        assert set(store.date_of_rows(val).tolist()) <= set(store.manifest.dates[4:6])

    def test_separate_dates_overlap_rejected(self, store_two_weeks):
        store = store_two_weeks
        tier = store.all_row_ids()
        cm = select_apps(class_counts_over(store, tier, store.manifest.dates), AppSelection())
        train = build_train_index(store, tier, list(store.manifest.dates[:3]), None, None, cm, seed=2)
        with pytest.raises(SplitError, match="overlap"):
            split_validation(
                store, train, ValApproach.SEPARATE_DATES,
                val_dates=[store.manifest.dates[2]], tier_rows=tier, class_map=cm, seed=2,
            )


class TestBuildTestIndex:
    def test_includes_known_and_unknown(self, tmp_path):
        rows = []
        for label, n in (("K", 10), ("U", 5)):
            rows.extend(
                {"date": "2023-01-02", "label": label, "sizes": [10], "ipt": [1.0], "dirs": [1], "stats": [1, 1]}
                for _ in range(n)
            )
        ingest_text(make_csv(rows), "t", tmp_path / "t")
        store = Store.open(tmp_path / "t")
        cm = select_apps({"K": 10, "U": 5}, AppSelection(mode=AppSelectionMode.EXPLICIT_UNKNOWN, unknown_list=("U",)))
        idx = build_test_index(store, store.all_row_ids(), ["2023-01-02"], None, cm, seed=1)
        assert len(idx) == 15

    def test_cap_proportional(self, tmp_path):
        # hand-worked largest remainder: cap 6 over availability (10, 2)
        # -> exact quotas 5.0 and 1.0 -> (5, 1)
        store = weighted_store(tmp_path, {"2023-01-01": 10, "2023-01-02": 2})
        cm = select_apps({"a": 12}, AppSelection())
        idx = build_test_index(store, store.all_row_ids(), list(store.manifest.dates), 6, cm, seed=1)
        dates = store.date_of_rows(idx)
        assert len(idx) == 6
        assert int((dates == "2023-01-02").sum()) == 1

    def test_cap_exceeds(self, tmp_path):
        store = weighted_store(tmp_path, {"2023-01-01": 4})
        cm = select_apps({"a": 4}, AppSelection())
        with pytest.raises(CapExceedsAvailable):
            build_test_index(store, store.all_row_ids(), ["2023-01-01"], 5, cm, seed=1)


class TestMaterialize:
    def cfg(self, **kw) -> DatasetConfig:
        defaults = dict(
            dataset_id="twoweeks",
            train_period="W-2022-44",
            test_period="W-2022-45",
            size_tier=SizeTier.ORIG,
        )
        defaults.update(kw)
        return DatasetConfig(**defaults)

    def test_listing_shape_end_to_end(self, store_two_weeks):
        v = validate(self.cfg(), store_two_weeks.manifest)
        split = materialize(v, store_two_weeks)
        assert len(split.train) and len(split.val) and len(split.test)
        train_dates = set(store_two_weeks.date_of_rows(split.train).tolist())
        val_dates = set(store_two_weeks.date_of_rows(split.val).tolist())
        test_dates = set(store_two_weeks.date_of_rows(split.test).tolist())
        assert max(train_dates | val_dates) < min(test_dates)

    def test_rerun_byte_identical(self, store_two_weeks, tmp_path):
        v = validate(self.cfg(), store_two_weeks.manifest)
        s1 = materialize(v, store_two_weeks)
        p1 = persist_split(s1, store_two_weeks)
        blob1 = p1.read_bytes()
        sidecar1 = p1.with_suffix(".json").read_bytes()
        p1.unlink()
        s2 = materialize(v, store_two_weeks)
        p2 = persist_split(s2, store_two_weeks)
        assert p2.read_bytes() == blob1
        assert p2.with_suffix(".json").read_bytes() == sidecar1

    def test_top_x_label_audit(self, tmp_path):
        from flowbench import SynthSpec, date_range, generate

        spec = SynthSpec(
            n_classes=10, dates=date_range("2022-10-31", 14), rows_per_date=400,
            seed=21, dataset_id="audit",
        )
        generate(spec, tmp_path / "audit")
        store = Store.open(tmp_path / "audit")
        sel = AppSelection(mode=AppSelectionMode.TOP_X, top_x=5)
        v = validate(self.cfg(dataset_id="audit", app_selection=sel), store.manifest)
        split = materialize(v, store)
        known = set(split.class_map.known)
        unknown = set(split.class_map.unknown)
        assert len(known) == 5 and len(unknown) == 5
        # brute-force audit of every split
        for rows, allow_unknown in ((split.train, False), (split.val, False), (split.test, True)):
            labels = set(store.labels_of_rows(rows).tolist())
            if allow_unknown:
                assert labels & unknown, "test must surface unknown classes"
            else:
                assert labels <= known
        ids = split.class_map.ids_for(store.labels_of_rows(split.test))
        assert set(ids.tolist()) >= {split.class_map.unknown_id}

    def test_cache_round_trip(self, store_two_weeks):
        v = validate(self.cfg(), store_two_weeks.manifest)
        s1, hit1 = materialize_cached(v, store_two_weeks)
        s2, hit2 = materialize_cached(v, store_two_weeks)
        assert not hit1 and hit2
        assert np.array_equal(s1.train, s2.train)
        assert np.array_equal(s1.val, s2.val)
        assert np.array_equal(s1.test, s2.test)
        assert s1.class_map == s2.class_map
        assert s1.per_date_counts == s2.per_date_counts

    def test_load_missing_returns_none(self, store_two_weeks):
        assert load_split(store_two_weeks, "0" * 64) is None

    def test_weight_fidelity(self, store_two_weeks):
        v = validate(
            self.cfg(
                train_period=["2022-10-31", "2022-11-01", "2022-11-02"],
                train_date_weights=[0.5, 0.3, 0.2],
                train_size=200,
            ),
            store_two_weeks.manifest,
        )
        split = materialize(v, store_two_weeks)
        pool = np.sort(np.concatenate([split.train, split.val]))
        dates = store_two_weeks.date_of_rows(pool)
        for d, w in zip(v.train_dates, v.train_weights):
            got = int((dates == d).sum())
            assert abs(got - 200 * w) <= 1
