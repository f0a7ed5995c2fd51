"""Independent brute-force oracles the real implementations are checked against.

Everything here is deliberately naive pure Python (sorting, loops, two-pass
sums) and must stay free of the package's own numerics so the dual-route
checks keep meaning.
"""

from __future__ import annotations

import math


def brute_top_x(counts: dict[str, int], x: int) -> set[str]:
    """Top-x classes by (count desc, name asc)."""
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {name for name, _ in ranked[:x]}


def brute_quantile(values, q: float) -> float:
    """Quantile with linear interpolation between order statistics."""
    data = sorted(float(v) for v in values)
    if not data:
        raise ValueError("empty")
    h = q * (len(data) - 1)
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return data[lo]
    return data[lo] + (h - lo) * (data[hi] - data[lo])


def brute_mean_std(values) -> tuple[float, float]:
    """Two-pass mean and population standard deviation."""
    data = [float(v) for v in values]
    n = len(data)
    mean = sum(data) / n
    var = sum((v - mean) ** 2 for v in data) / n
    return mean, math.sqrt(var)


def brute_median_iqr(values) -> tuple[float, float]:
    return brute_quantile(values, 0.5), brute_quantile(values, 0.75) - brute_quantile(values, 0.25)


def brute_min_range(values) -> tuple[float, float]:
    data = [float(v) for v in values]
    return min(data), max(data) - min(data)


def brute_ood_sweep(known, unknown, fpr_target: float) -> tuple[float, float, float]:
    """Exhaustive sweep over candidate thresholds; returns (tpr, threshold, fpr).

    Candidates are the distinct known scores plus the cut just above the
    largest known score (flags nothing known, always admissible). The chosen
    threshold is the smallest candidate whose FPR stays within target.
    """
    known = [float(v) for v in known]
    unknown = [float(v) for v in unknown]
    candidates = sorted(set(known))
    candidates.append(math.nextafter(max(known), math.inf))
    for t in candidates:
        fpr = sum(1 for v in known if v >= t) / len(known)
        if fpr <= fpr_target:
            tpr = sum(1 for v in unknown if v >= t) / len(unknown)
            return tpr, t, fpr
    raise AssertionError("the above-max candidate is always admissible")


def brute_stratified_quota(class_sizes: dict[str, int], fraction: float) -> dict[str, int]:
    """Reference per-class validation counts for the stratified split."""
    target = math.floor(fraction * sum(class_sizes.values()) + 0.5)
    eligible = {c: n for c, n in class_sizes.items() if n > 1}
    quota = {c: math.floor(fraction * n) for c, n in eligible.items()}
    remainder = target - sum(quota.values())
    order = sorted(
        eligible, key=lambda c: (-(fraction * eligible[c] - quota[c]), c)
    )
    for c in order:
        if remainder <= 0:
            break
        if quota[c] < eligible[c]:
            quota[c] += 1
            remainder -= 1
    return quota
