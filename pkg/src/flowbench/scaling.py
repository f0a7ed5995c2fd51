"""Fit, cache, and apply the three feature-group scalers.

One scaler per feature group: packet sizes and inter-packet times pool every
non-padding sequence element into a single scalar population; flow statistics
are scaled per feature. Clipping always happens before fitting and before
transforming: min/max clips for the two sequence groups, per-feature
q-quantile thresholds (resolved on the fit sample, then frozen) for flow
statistics.

Conventions, chosen once so caches are portable:
* standard scaling uses the population (divide-by-n) deviation;
* quantiles interpolate linearly between order statistics at h = q*(n-1);
* a degenerate scale (zero std/IQR/range) is replaced by 1;
* min-max transforms clamp inputs into the fitted range, so outputs stay in
  [0, 1] on unseen data.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .config import ScalerKind, ScalingConfig
from .errors import ScalingError
from .hashing import PURPOSE_SCALERS, derive_key, take_lowest
from .store import Store
from .table import Table


@dataclass(frozen=True)
class GroupScaler:
    """Fitted parameters for one feature group.

    center/scale semantics per kind: STANDARD mean/std, ROBUST median/IQR,
    MINMAX min/(max-min), NONE 0/1. Arrays have one entry per feature
    (length 1 for the pooled sequence groups).
    """

    kind: ScalerKind
    center: np.ndarray
    scale: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        if self.kind is ScalerKind.NONE:
            return values.astype(np.float64, copy=True)
        x = values.astype(np.float64, copy=True)
        if self.kind is ScalerKind.MINMAX:
            x = np.clip(x, self.center, self.center + self.scale)
        return (x - self.center) / self.scale


@dataclass(frozen=True)
class FittedScalers:
    psizes: GroupScaler
    ipt: GroupScaler
    fstats: GroupScaler
    psizes_max_clip: float | None
    ipt_min_clip: float | None
    ipt_max_clip: float | None
    fstats_clip: np.ndarray | None  # per-feature thresholds resolved at fit time
    fit_sample_size: int
    fingerprint: str
    stat_names: tuple[str, ...]

    def equals(self, other: "FittedScalers") -> bool:
        def group_eq(a: GroupScaler, b: GroupScaler) -> bool:
            return (
                a.kind is b.kind
                and np.array_equal(a.center, b.center)
                and np.array_equal(a.scale, b.scale)
            )

        clips_eq = (
            self.psizes_max_clip == other.psizes_max_clip
            and self.ipt_min_clip == other.ipt_min_clip
            and self.ipt_max_clip == other.ipt_max_clip
            and (
                (self.fstats_clip is None and other.fstats_clip is None)
                or (
                    self.fstats_clip is not None
                    and other.fstats_clip is not None
                    and np.array_equal(self.fstats_clip, other.fstats_clip)
                )
            )
        )
        return (
            group_eq(self.psizes, other.psizes)
            and group_eq(self.ipt, other.ipt)
            and group_eq(self.fstats, other.fstats)
            and clips_eq
            and self.fit_sample_size == other.fit_sample_size
            and self.fingerprint == other.fingerprint
            and self.stat_names == other.stat_names
        )


def quantile_linear(values: np.ndarray, q: float) -> float:
    """Quantile by linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))


def _fit_group(kind: ScalerKind, values: np.ndarray, n_features: int) -> GroupScaler:
    """Fit one group on a pooled 1-D array or a 2-D [n, F] matrix."""
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if kind is ScalerKind.NONE or values.shape[0] == 0:
        if kind is not ScalerKind.NONE and values.shape[0] == 0:
            warnings.warn("empty fit population for a scaler group; using identity parameters")
        return GroupScaler(kind, np.zeros(n_features), np.ones(n_features))
    values = values.astype(np.float64)
    if kind is ScalerKind.STANDARD:
        center = values.mean(axis=0)
        scale = values.std(axis=0)  # population std
    elif kind is ScalerKind.ROBUST:
        center = np.quantile(values, 0.5, axis=0, method="linear")
        q25 = np.quantile(values, 0.25, axis=0, method="linear")
        q75 = np.quantile(values, 0.75, axis=0, method="linear")
        scale = q75 - q25
    elif kind is ScalerKind.MINMAX:
        center = values.min(axis=0)
        scale = values.max(axis=0) - center
    else:  # pragma: no cover
        raise ScalingError(f"unhandled scaler kind {kind}")
    scale = np.where(scale == 0.0, 1.0, scale)
    return GroupScaler(kind, np.atleast_1d(center), np.atleast_1d(scale))


def _valid_mask(valid_len: np.ndarray, l_ppi: int) -> np.ndarray:
    return np.arange(l_ppi)[None, :] < valid_len.astype(np.int64)[:, None]


def _clip_sequences(
    sizes: np.ndarray,
    ipt: np.ndarray,
    mask: np.ndarray,
    cfg_psizes_max: float | None,
    cfg_ipt_min: float | None,
    cfg_ipt_max: float | None,
) -> tuple[np.ndarray, np.ndarray]:
    sizes = sizes.astype(np.float64, copy=True)
    ipt = ipt.astype(np.float64, copy=True)
    if cfg_psizes_max is not None:
        sizes = np.where(mask, np.minimum(sizes, cfg_psizes_max), sizes)
    if cfg_ipt_min is not None:
        ipt = np.where(mask, np.maximum(ipt, cfg_ipt_min), ipt)
    if cfg_ipt_max is not None:
        ipt = np.where(mask, np.minimum(ipt, cfg_ipt_max), ipt)
    return sizes, ipt


def fit_scalers(
    store: Store,
    train_index: np.ndarray,
    cfg: ScalingConfig,
    seed: int,
    fingerprint: str,
) -> FittedScalers:
    """Fit the three group scalers on a stable-priority train subsample.

    The fit sample has ceil(fit_fraction * len(train_index)) rows. Clipping
    happens before fitting: min/max clips for the sequence groups, and for
    flow statistics the per-feature q-quantile thresholds are computed on
    the fit sample, frozen, and applied. Scaler parameters then come from
    the clipped values; padding positions never enter any population.
    """
    from .batching import gather_rows  # local import to avoid a cycle

    train_index = np.asarray(train_index, dtype=np.uint64)
    if len(train_index) == 0:
        raise ScalingError("cannot fit scalers on an empty train index")
    n_fit = int(np.ceil(cfg.fit_fraction * len(train_index)))
    fit_rows = take_lowest(derive_key(PURPOSE_SCALERS, seed), train_index, n_fit)
    data = gather_rows(store, fit_rows)

    for name in ("ppi_ipt", "flow_stats"):
        arr = data[name]
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            row = int(data["row_id"][bad[0]])
            raise ScalingError(f"non-finite value in field {name} at row_id {row}")

    l_ppi = data["ppi_sizes"].shape[1]
    mask = _valid_mask(data["valid_len"], l_ppi)
    sizes, ipt = _clip_sequences(
        data["ppi_sizes"], data["ppi_ipt"], mask,
        cfg.psizes_max_clip, cfg.ipt_min_clip, cfg.ipt_max_clip,
    )
    stats = data["flow_stats"].astype(np.float64, copy=True)
    fstats_clip = None
    if cfg.fstats_quantile_clip_q is not None and stats.shape[0] > 0:
        fstats_clip = np.quantile(stats, cfg.fstats_quantile_clip_q, axis=0, method="linear")
        stats = np.minimum(stats, fstats_clip)

    psizes_scaler = _fit_group(cfg.psizes_scaler, sizes[mask], 1)
    ipt_scaler = _fit_group(cfg.ipt_scaler, ipt[mask], 1)
    fstats_scaler = _fit_group(cfg.fstats_scaler, stats, stats.shape[1])

    return FittedScalers(
        psizes=psizes_scaler,
        ipt=ipt_scaler,
        fstats=fstats_scaler,
        psizes_max_clip=cfg.psizes_max_clip,
        ipt_min_clip=cfg.ipt_min_clip,
        ipt_max_clip=cfg.ipt_max_clip,
        fstats_clip=fstats_clip,
        fit_sample_size=int(n_fit),
        fingerprint=fingerprint,
        stat_names=store.manifest.stat_names,
    )


def transform_arrays(
    sc: FittedScalers,
    sizes: np.ndarray,
    ipt: np.ndarray,
    valid_len: np.ndarray,
    stats: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Clip-then-scale one batch; returns float64 (sizes, ipt, stats).

    Padding positions stay exactly 0 and valid_len is untouched by contract.
    """
    if sizes.shape != ipt.shape or len(valid_len) != sizes.shape[0] or stats.shape[0] != sizes.shape[0]:
        raise ScalingError("shape mismatch between feature arrays")
    if stats.shape[1] != len(sc.stat_names):
        raise ScalingError(
            f"flow_stats has {stats.shape[1]} features, scalers were fitted on {len(sc.stat_names)}"
        )
    mask = _valid_mask(valid_len, sizes.shape[1])
    sizes_c, ipt_c = _clip_sequences(
        sizes, ipt, mask, sc.psizes_max_clip, sc.ipt_min_clip, sc.ipt_max_clip
    )
    stats_c = stats.astype(np.float64, copy=True)
    if sc.fstats_clip is not None:
        stats_c = np.minimum(stats_c, sc.fstats_clip)

    sizes_out = np.where(mask, sc.psizes.apply(sizes_c), 0.0)
    ipt_out = np.where(mask, sc.ipt.apply(ipt_c), 0.0)
    stats_out = sc.fstats.apply(stats_c)
    return sizes_out, ipt_out, stats_out


def scale_table(table: Table, sc: FittedScalers) -> Table:
    """A copy of the table with scaled feature columns."""
    sizes, ipt, stats = transform_arrays(
        sc, table["ppi_sizes"], table["ppi_ipt"], table["valid_len"], table["flow_stats"]
    )
    cols = dict(table.columns)
    cols["ppi_sizes"] = sizes
    cols["ppi_ipt"] = ipt
    cols["flow_stats"] = stats
    return Table(cols, table.stat_names)


def scaler_cache_dir(store: Store) -> Path:
    return store.path / "scalers"


def _group_to_doc(g: GroupScaler) -> dict:
    return {"kind": g.kind.value, "center": g.center.tolist(), "scale": g.scale.tolist()}


def _group_from_doc(doc: dict) -> GroupScaler:
    return GroupScaler(
        kind=ScalerKind(doc["kind"]),
        center=np.asarray(doc["center"], dtype=np.float64),
        scale=np.asarray(doc["scale"], dtype=np.float64),
    )


def cache_put(store: Store, sc: FittedScalers) -> Path | None:
    """Persist fitted scalers under their fingerprint; atomic via rename.

    An unwritable cache directory is a warning, not an error: the fit result
    is still returned to the caller, just not reused later.
    """
    doc = {
        "fingerprint": sc.fingerprint,
        "psizes": _group_to_doc(sc.psizes),
        "ipt": _group_to_doc(sc.ipt),
        "fstats": _group_to_doc(sc.fstats),
        "psizes_max_clip": sc.psizes_max_clip,
        "ipt_min_clip": sc.ipt_min_clip,
        "ipt_max_clip": sc.ipt_max_clip,
        "fstats_clip": None if sc.fstats_clip is None else sc.fstats_clip.tolist(),
        "fit_sample_size": sc.fit_sample_size,
        "stat_names": list(sc.stat_names),
    }
    try:
        cache = scaler_cache_dir(store)
        cache.mkdir(parents=True, exist_ok=True)
        path = cache / f"{sc.fingerprint}.scalers.json"
        tmp = cache / f".{sc.fingerprint}.scalers.json.tmp-{os.getpid()}"
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(path)
        return path
    except OSError as exc:
        warnings.warn(f"scaler cache not writable ({exc}); proceeding uncached")
        return None


def cache_get(store: Store, fingerprint: str) -> FittedScalers | None:
    """Fetch cached scalers; corrupt or missing entries return None."""
    path = scaler_cache_dir(store) / f"{fingerprint}.scalers.json"
    if not path.is_file():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return FittedScalers(
            psizes=_group_from_doc(doc["psizes"]),
            ipt=_group_from_doc(doc["ipt"]),
            fstats=_group_from_doc(doc["fstats"]),
            psizes_max_clip=doc["psizes_max_clip"],
            ipt_min_clip=doc["ipt_min_clip"],
            ipt_max_clip=doc["ipt_max_clip"],
            fstats_clip=None if doc["fstats_clip"] is None else np.asarray(doc["fstats_clip"]),
            fit_sample_size=int(doc["fit_sample_size"]),
            fingerprint=doc["fingerprint"],
            stat_names=tuple(doc["stat_names"]),
        )
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        warnings.warn(f"ignoring corrupt scaler cache entry {path.name}: {exc}")
        return None


def fit_scalers_cached(
    store: Store,
    train_index: np.ndarray,
    cfg: ScalingConfig,
    seed: int,
    fingerprint: str,
) -> tuple[FittedScalers, bool]:
    """Cache-aware fit; returns (scalers, from_cache)."""
    cached = cache_get(store, fingerprint)
    if cached is not None:
        return cached, True
    fitted = fit_scalers(store, train_index, cfg, seed, fingerprint)
    cache_put(store, fitted)
    return fitted, False
