"""Acceptance gate: every release-blocking property in one module.

Each test covers one criterion at its stated tolerance and prints one
PASS line on success (run with -s or -rP to see them). The suite builds its
own synthetic stores; nothing here needs network access or real captures.
"""

from __future__ import annotations

import bisect
import time

import numpy as np
import pytest

from baseline import fit_centroids, predict
from oracles import brute_mean_std, brute_median_iqr, brute_min_range, brute_quantile, brute_top_x
from flowbench import (
    AppSelection,
    AppSelectionMode,
    DatasetConfig,
    DriftEvent,
    ScalerKind,
    ScalingConfig,
    SizeTier,
    Store,
    SynthSpec,
    ValApproach,
    date_range,
    generate,
    iter_batches,
    select_apps,
    to_table,
    validate,
)
from flowbench.cli import main as cli_main
from flowbench.errors import TimeOrderViolation
from flowbench.metrics import join_predictions, ood_tpr_at_fpr, per_date_accuracy
from flowbench.scaling import _fit_group, fit_scalers, quantile_linear
from flowbench.split import materialize, persist_split, split_validation
from flowbench.store import derive_size_tier


def _pass(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


@pytest.fixture(scope="module")
def acceptance_store(tmp_path_factory) -> Store:
    """~10^4-row store: 20 dates x 500 rows, 8 classes, one novel arrival."""
    from flowbench import NovelArrival

    out = tmp_path_factory.mktemp("acc") / "accstore"
    spec = SynthSpec(
        n_classes=8,
        dates=date_range("2022-10-31", 20),
        rows_per_date=500,
        popularity_exponent=0.8,
        novel_arrivals=(NovelArrival("app_007", "2022-11-10"),),
        seed=1234,
        dataset_id="acc",
    )
    generate(spec, out)
    return Store.open(out)


def random_config(rng: np.random.Generator, store: Store, force_valid: bool = True) -> DatasetConfig:
    dates = store.manifest.dates
    n = len(dates)
    if force_valid:
        t0 = int(rng.integers(0, n - 4))
        t1 = int(rng.integers(t0, n - 3))
        val_gap = int(rng.integers(0, 2))
        test0 = int(rng.integers(t1 + 1 + val_gap, n - 1))
        test1 = int(rng.integers(test0, n - 1))
    else:
        t0 = int(rng.integers(0, n - 2))
        t1 = int(rng.integers(t0, n - 1))
        test0 = int(rng.integers(0, n - 1))
        test1 = int(rng.integers(test0, n - 1))
    train_dates = list(dates[t0 : t1 + 1])
    test_dates = list(dates[test0 : test1 + 1])

    approach = ValApproach.SPLIT_FROM_TRAIN
    val_period = None
    if force_valid and rng.random() < 0.3 and test0 - t1 >= 2:
        approach = ValApproach.SEPARATE_DATES
        val_period = list(dates[t1 + 1 : min(t1 + 2, test0)]) or None
        if not val_period:
            approach = ValApproach.SPLIT_FROM_TRAIN

    mode = rng.choice(
        [AppSelectionMode.ALL_KNOWN, AppSelectionMode.TOP_X, AppSelectionMode.EXPLICIT_UNKNOWN]
    )
    if mode == AppSelectionMode.TOP_X:
        sel = AppSelection(mode=AppSelectionMode.TOP_X, top_x=int(rng.integers(2, 7)))
    elif mode == AppSelectionMode.EXPLICIT_UNKNOWN:
        victim = f"app_{int(rng.integers(0, 7)):03d}"
        sel = AppSelection(mode=AppSelectionMode.EXPLICIT_UNKNOWN, unknown_list=(victim,))
    else:
        sel = AppSelection()

    # caps stay far below worst-case eligibility (500 rows/date, tier ratio
    # >= 0.4, known-class share >= ~0.35 under TOP_X x=2)
    use_weights = force_valid and rng.random() < 0.3
    train_cap_bound = max(60, 60 * len(train_dates))
    train_size = int(rng.integers(40, train_cap_bound)) if (use_weights or rng.random() < 0.3) else None
    weights = None
    if use_weights:
        weights = [float(w) for w in rng.random(len(train_dates)) + 0.05]

    if rng.random() < 0.5:
        tier_kw = dict(size_tier=SizeTier.S, tier_targets={"S": int(rng.integers(4000, 9000))})
    else:
        tier_kw = dict(size_tier=SizeTier.ORIG)

    return DatasetConfig(
        dataset_id="acc",
        train_period=train_dates,
        test_period=test_dates,
        train_date_weights=weights,
        val_approach=approach,
        val_period=val_period,
        val_fraction=float(rng.uniform(0.1, 0.35)),
        app_selection=sel,
        scaling=ScalingConfig(),
        seed=int(rng.integers(0, 2**32)),
        train_size=train_size,
        test_size=int(rng.integers(40, max(60, 150 * len(test_dates)))) if rng.random() < 0.3 else None,
        **tier_kw,
    )


@pytest.fixture(scope="module")
def fifty_configs(acceptance_store):
    rng = np.random.default_rng(20221031)
    configs = []
    while len(configs) < 50:
        cfg = random_config(rng, acceptance_store)
        try:
            validated = validate(cfg, acceptance_store.manifest)
            materialize(validated, acceptance_store)  # feasibility probe
        except Exception:
            continue
        configs.append(validated)
    return configs


def test_determinism_suite(acceptance_store, fifty_configs):
    """50 randomized configs: byte-identical persisted splits, identical batch order."""
    start = time.monotonic()
    store = acceptance_store
    for i, validated in enumerate(fifty_configs):
        s1 = materialize(validated, store)
        p1 = persist_split(s1, store)
        blob1 = p1.read_bytes()
        side1 = p1.with_suffix(".json").read_bytes()
        p1.unlink()
        p1.with_suffix(".json").unlink()
        s2 = materialize(validated, store)
        p2 = persist_split(s2, store)
        assert p2.read_bytes() == blob1, f"config {i}: split index bytes differ"
        assert p2.with_suffix(".json").read_bytes() == side1, f"config {i}: sidecar differs"
        a = [b.row_id for b in iter_batches(store, s1, "train", 256, shuffle=True, seed=validated.seed, epoch=3)]
        b = [b.row_id for b in iter_batches(store, s2, "train", 256, shuffle=True, seed=validated.seed, epoch=3)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b)) and len(a) == len(b)
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"determinism suite took {elapsed:.1f}s (budget 60s)"
    _pass(f"determinism suite (50 configs, {elapsed:.1f}s)")


def test_time_consistency(acceptance_store):
    """Exhaustive over 100 random configs: strict ordering holds or rejects."""
    store = acceptance_store
    rng = np.random.default_rng(44)
    checked_valid = checked_rejected = 0
    attempts = 0
    while checked_valid + checked_rejected < 100:
        attempts += 1
        assert attempts < 2000
        cfg = random_config(rng, store, force_valid=bool(rng.random() < 0.5))
        expanded_train = list(cfg.train_period)
        expanded_val = list(cfg.val_period or [])
        expanded_test = list(cfg.test_period)
        violates = max(expanded_train + expanded_val) >= min(expanded_test)
        try:
            validated = validate(cfg, store.manifest)
        except TimeOrderViolation:
            assert violates, "rejected a config that satisfies time order"
            checked_rejected += 1
            continue
        except Exception:
            continue  # invalid for unrelated reasons
        assert not violates, "accepted a config violating strict time order"
        try:
            split = materialize(validated, store)
        except Exception:
            continue  # infeasible cap; the time-order check already passed
        trainish = np.concatenate([split.train, split.val])
        if len(trainish) and len(split.test):
            last_fit = max(store.date_of_rows(trainish))
            first_test = min(store.date_of_rows(split.test))
            assert last_fit < first_test
        checked_valid += 1
    assert checked_rejected > 0 and checked_valid > 0
    _pass(f"time consistency ({checked_valid} valid, {checked_rejected} rejected)")


def test_no_leak_and_disjointness(acceptance_store, fifty_configs):
    """Across the 50 configs: pairwise disjoint, no unknown label in train/val."""
    store = acceptance_store
    for i, validated in enumerate(fifty_configs):
        split = materialize(validated, store)
        train_set = set(split.train.tolist())
        val_set = set(split.val.tolist())
        test_set = set(split.test.tolist())
        assert not (train_set & val_set), f"config {i}: train/val overlap"
        assert not (train_set & test_set), f"config {i}: train/test overlap"
        assert not (val_set & test_set), f"config {i}: val/test overlap"
        unknown = split.class_map.unknown
        for rows in (split.train, split.val):
            if len(rows) == 0:
                continue
            labels = store.labels_of_rows(rows)
            leaked = {l for l in labels.tolist() if l in unknown}
            assert not leaked, f"config {i}: unknown classes leaked into train/val: {leaked}"
    _pass("no-leak & disjointness (50 configs, brute-force audit)")


def test_stratification(tmp_path):
    """|val_c - round(f*n_c)| <= 1 for fractions 0.1/0.2/0.33 on skewed mixes."""
    from conftest import ingest_text, make_csv

    mixes = [
        {"A": 1000, "B": 317, "C": 100, "D": 31, "E": 10, "F": 3, "G": 1},
        {"A": 500, "B": 499, "C": 2},
        {"A": 37, "B": 11, "C": 5, "D": 2},
    ]
    for m_idx, sizes in enumerate(mixes):
        rows = []
        for label, n in sizes.items():
            rows.extend(
                {"date": "2023-01-01", "label": label, "sizes": [10], "ipt": [1.0], "dirs": [1], "stats": [1, 1]}
                for _ in range(n)
            )
        store_dir = tmp_path / f"mix{m_idx}"
        ingest_text(make_csv(rows), "mix", store_dir)
        store = Store.open(store_dir)
        cm = select_apps(sizes, AppSelection())
        for fraction in (0.1, 0.2, 0.33):
            import warnings as _w

            with _w.catch_warnings():
                _w.simplefilter("ignore")
                _, val = split_validation(
                    store, store.all_row_ids(), ValApproach.SPLIT_FROM_TRAIN,
                    fraction=fraction, class_map=cm, seed=7,
                )
            labels = store.labels_of_rows(val) if len(val) else np.empty(0, dtype=str)
            for c, n_c in sizes.items():
                val_c = int((labels == c).sum())
                assert abs(val_c - round(fraction * n_c)) <= 1, (
                    f"mix {m_idx} f={fraction} class {c}: val_c={val_c}, n_c={n_c}"
                )
    _pass("stratification (fractions 0.1/0.2/0.33, skewed mixes)")


def test_top_x_oracle():
    """1000 random count maps (<= 50 classes) against the brute-force prefix."""
    rng = np.random.default_rng(555)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        counts = {f"app{i:04d}": int(rng.integers(0, 100)) for i in range(n)}
        x = int(rng.integers(1, n + 1))
        got = set(select_apps(counts, AppSelection(mode=AppSelectionMode.TOP_X, top_x=x)).known)
        assert got == brute_top_x(counts, x)
    _pass("TOP_X oracle (1000 random count maps)")


def test_scaler_oracles(tmp_path):
    """Fitted parameters match brute force to 1e-12 rel; invariants to 1e-9."""
    rng = np.random.default_rng(77)
    for _ in range(40):
        n = int(rng.integers(2, 1001))
        values = rng.normal(100, 35, size=n) * float(rng.choice([0.01, 1.0, 1e4]))
        g = _fit_group(ScalerKind.STANDARD, values.copy(), 1)
        mean, std = brute_mean_std(values)
        assert g.center[0] == pytest.approx(mean, rel=1e-12)
        assert g.scale[0] == pytest.approx(std if std else 1.0, rel=1e-12)
        g = _fit_group(ScalerKind.ROBUST, values.copy(), 1)
        med, iqr = brute_median_iqr(values)
        assert g.center[0] == pytest.approx(med, rel=1e-12)
        assert g.scale[0] == pytest.approx(iqr if iqr else 1.0, rel=1e-12)
        g = _fit_group(ScalerKind.MINMAX, values.copy(), 1)
        lo, span = brute_min_range(values)
        assert g.center[0] == pytest.approx(lo, rel=1e-12)
        assert g.scale[0] == pytest.approx(span if span else 1.0, rel=1e-12)
        q = float(rng.uniform(0.5, 0.99))
        assert quantile_linear(values, q) == pytest.approx(brute_quantile(values, q), rel=1e-12)

    # post-fit invariants on a real store fit
    spec = SynthSpec(n_classes=5, dates=date_range("2023-06-01", 4), rows_per_date=400, seed=8, dataset_id="sc")
    generate(spec, tmp_path / "sc")
    store = Store.open(tmp_path / "sc")
    cfg = ScalingConfig(
        fit_fraction=1.0,
        psizes_scaler=ScalerKind.STANDARD,
        ipt_scaler=ScalerKind.ROBUST,
        fstats_scaler=ScalerKind.MINMAX,
        fstats_quantile_clip_q=0.95,
    )
    sc = fit_scalers(store, store.all_row_ids(), cfg, 3, "f" * 64)
    from flowbench.batching import gather_rows
    from flowbench.scaling import transform_arrays

    data = gather_rows(store, store.all_row_ids())
    sizes, ipt, stats = transform_arrays(sc, data["ppi_sizes"], data["ppi_ipt"], data["valid_len"], data["flow_stats"])
    mask = np.arange(sizes.shape[1])[None, :] < data["valid_len"][:, None]
    assert abs(sizes[mask].mean()) < 1e-9
    assert abs(sizes[mask].var() - 1.0) < 1e-9
    assert abs(np.median(ipt[mask])) < 1e-9
    assert stats.min() >= -1e-9 and stats.max() <= 1.0 + 1e-9
    # resolved quantile thresholds match the brute oracle per feature
    for j in range(data["flow_stats"].shape[1]):
        assert sc.fstats_clip[j] == pytest.approx(
            brute_quantile(data["flow_stats"][:, j], 0.95), rel=1e-12
        )
    _pass("scaler oracles (params 1e-12 rel, invariants 1e-9)")


def _brute_ood_large(known: np.ndarray, unknown: np.ndarray, target: float):
    ks = sorted(known.tolist())
    n = len(ks)
    candidates = sorted(set(ks))
    candidates.append(np.nextafter(ks[-1], np.inf))
    for t in candidates:
        fpr = (n - bisect.bisect_left(ks, t)) / n
        if fpr <= target:
            us = unknown
            tpr = float((us >= t).sum()) / len(us)
            return tpr, float(t), fpr
    raise AssertionError("unreachable")


def test_ood_metric_oracle():
    """Exact match with an exhaustive sweep on 10^4-row score sets."""
    from test_metrics import preds_from

    # the worked example first
    op = ood_tpr_at_fpr(preds_from([0.1, 0.2, 0.3, 0.9], [0.8, 0.95]), 0.25)
    assert (op.tpr, op.threshold, op.achieved_fpr) == (0.5, 0.9, 0.25)

    rng = np.random.default_rng(404)
    for trial in range(8):
        n_known = int(rng.integers(4000, 9001))
        n_unknown = 10_000 - n_known
        decimals = int(rng.integers(1, 4))  # coarse rounding forces heavy ties
        known = np.round(rng.normal(0, 1, n_known), decimals)
        unknown = np.round(rng.normal(0.8, 1.2, n_unknown), decimals)
        target = float(rng.uniform(0.005, 0.3))
        op = ood_tpr_at_fpr(preds_from(known, unknown), target)
        tpr, thr, fpr = _brute_ood_large(known, unknown, target)
        assert op.tpr == tpr and op.threshold == thr and op.achieved_fpr == fpr
    _pass("OOD metric oracle (worked example + 10^4-row sweeps)")


def test_drift_scenario(tmp_path):
    """Fig.-2-style directional check: post-drift accuracy drops >= 10pp."""
    start = time.monotonic()
    dates = date_range("2022-10-31", 14)
    spec = SynthSpec(
        n_classes=10,
        dates=dates,
        rows_per_date=2000,
        popularity_exponent=0.0,  # uniform class shares
        size_spread_range=(20.0, 40.0),
        drift_events=(DriftEvent(dates[7], 0.3, 400.0),),  # drift at date 8
        seed=2022,
        dataset_id="drift",
    )
    generate(spec, tmp_path / "drift")
    store = Store.open(tmp_path / "drift")

    cfg = DatasetConfig(
        dataset_id="drift",
        train_period=list(dates[:6]),  # dates 1-6
        test_period=list(dates[6:]),  # date 7 is the held-out pre-drift slice
        size_tier=SizeTier.ORIG,
        val_fraction=0.2,
        scaling=ScalingConfig(
            fit_fraction=0.5,
            psizes_scaler=ScalerKind.STANDARD,
            ipt_scaler=ScalerKind.STANDARD,
            fstats_scaler=ScalerKind.STANDARD,
        ),
        seed=99,
    )
    validated = validate(cfg, store.manifest)
    split = materialize(validated, store)
    pool = np.sort(np.concatenate([split.train, split.val]))
    scalers = fit_scalers(store, pool, validated.scaling, validated.seed, "f" * 64)

    train_table = to_table(store, split, "train", scalers=scalers)
    test_table = to_table(store, split, "test", scalers=scalers)
    # nearest-centroid over the two class-discriminative statistics
    names = list(store.manifest.stat_names)
    cols = [names.index("mean_pkt_size"), names.index("mean_ipt_ms")]
    centroids = fit_centroids(
        train_table["flow_stats"][:, cols], train_table["label_id"], len(split.class_map.known)
    )
    pred, scores = predict(test_table["flow_stats"][:, cols], centroids)
    preds = join_predictions(store, split, test_table["row_id"], pred, scores)
    series = {d.date: d.accuracy for d in per_date_accuracy(preds)}

    pre = series[dates[6]]  # held-out pre-drift date
    post = float(np.mean([series[d] for d in dates[7:]]))
    drop = pre - post
    elapsed = time.monotonic() - start
    assert pre > 0.5, f"baseline fixture accuracy too low ({pre:.3f}) to be meaningful"
    assert drop >= 0.10, f"drift drop {drop:.3f} below the 10pp gate (pre={pre:.3f}, post={post:.3f})"
    assert elapsed < 120.0, f"drift scenario took {elapsed:.1f}s (budget 120s)"
    _pass(f"drift scenario (pre={pre:.3f}, post={post:.3f}, drop={drop * 100:.1f}pp, {elapsed:.1f}s)")


def test_scaler_cache_across_compatible_configs(tmp_path, capsys):
    """Second fit-scalers run with a different test period: cache hit, same bytes."""
    store_dir = tmp_path / "cachestore"
    assert cli_main([
        "synth", "--out", str(store_dir), "--dataset-id", "cache",
        "--dates", "2022-10-31..2022-11-13", "--n-classes", "5",
        "--rows-per-date", "150", "--seed", "6",
    ]) == 0
    capsys.readouterr()  # drop the synth output
    common = [
        "fit-scalers", "--store", str(store_dir),
        "--train-period", "W-2022-44", "--size-tier", "ORIG",
        "--psizes-scaler", "robust", "--seed", "11",
    ]
    assert cli_main(common + ["--test-period", "W-2022-45"]) == 0
    first = capsys.readouterr().out
    assert first.startswith("fitted scalers ")
    fp = first.split()[2]
    entry = store_dir / "scalers" / f"{fp}.scalers.json"
    blob = entry.read_bytes()
    assert cli_main(common + ["--test-period", "2022-11-10..2022-11-13"]) == 0
    second = capsys.readouterr().out
    assert second.startswith("cache hit "), second
    assert second.split()[2] == fp
    assert entry.read_bytes() == blob
    _pass("scaler cache (compatible configs share bit-identical parameters)")


@pytest.mark.parametrize("n_dates,rows_per_date", [(20, 500), (20, 5000)])
def test_size_tiers(tmp_path, n_dates, rows_per_date):
    """Nested subsets and +-1-per-date proportionality on 10^4..10^5 rows."""
    total = n_dates * rows_per_date
    spec = SynthSpec(
        n_classes=6, dates=date_range("2023-07-01", n_dates), rows_per_date=rows_per_date,
        popularity_exponent=1.2, seed=31, dataset_id="tiers",
    )
    out = tmp_path / f"tiers{rows_per_date}"
    generate(spec, out)
    store = Store.open(out)
    targets = {
        SizeTier.XS: total // 10,
        SizeTier.S: total // 4,
        SizeTier.M: total // 2,
        SizeTier.L: (3 * total) // 4,
    }
    picked = {
        tier: derive_size_tier(store, tier, seed=77, targets=targets)
        for tier in (SizeTier.XS, SizeTier.S, SizeTier.M, SizeTier.L)
    }
    sets = {tier: set(rows.tolist()) for tier, rows in picked.items()}
    assert sets[SizeTier.XS] < sets[SizeTier.S] < sets[SizeTier.M] < sets[SizeTier.L]
    for tier, rows in picked.items():
        assert len(rows) == targets[tier]
        dates = store.date_of_rows(rows)
        for d in store.manifest.dates:
            exact = targets[tier] * store.manifest.date_rows[d] / total
            got = int((dates == d).sum())
            assert abs(got - exact) <= 1 + 1e-9, f"{tier} date {d}: {got} vs {exact}"
    _pass(f"size tiers (nested + proportional at {total} rows)")
