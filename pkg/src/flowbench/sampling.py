"""Proportional quota rounding for date- and class-stratified subsampling.

Two rounding schemes live here:

* largest_remainder: exact-total rounding of a single target across groups.
  Used wherever one fixed cap is split (train caps, test caps, stratified
  validation counts).
* nested_counts: sequential quota-method apportionment, used for size tiers
  where subsets drawn at growing targets must be nested. Largest-remainder
  is not monotone in the total (the Alabama paradox), so tiers use this
  instead; every prefix stays within one row of exact proportionality per
  group.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Round `total * weights / sum(weights)` to integers summing to `total`.

    Groups get the floor of their exact quota; the remainder goes one unit at
    a time to the largest fractional parts, ties broken by lower index. The
    caller orders groups so that the tie-break is meaningful (dates ascending,
    class names ascending).
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) == 0:
        if total > 0:
            raise ValueError("cannot distribute a positive total over zero groups")
        return []
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("weights must sum to a positive value")
    quotas = total * (w / wsum)
    base = np.floor(quotas).astype(np.int64)
    remainder = int(total - base.sum())
    if remainder > 0:
        frac = quotas - base
        order = np.lexsort((np.arange(len(w)), -frac))
        base[order[:remainder]] += 1
    return [int(b) for b in base]


def nested_counts(populations: Sequence[int], targets: Sequence[int]) -> list[list[int]]:
    """Per-group counts at each target, monotone across targets and within
    one row of exact proportionality per group.

    Sequential quota-method apportionment: rows are assigned one at a time;
    a group is eligible for the t-th row only while taking it keeps the
    group at or below the ceiling of its exact quota at total t, and among
    eligible groups the one with the largest population-per-assigned-row
    quotient wins (ties to the lower index). Counts at target T are a prefix
    of one fixed assignment sequence, so counts(T1) <= counts(T2)
    elementwise whenever T1 <= T2, which is what makes size tiers nested;
    staying within the quota floor and ceiling bounds the deviation by one
    row per group. Simple largest-remainder rounding cannot serve here: it
    is not monotone in the total. All comparisons use exact integer
    arithmetic, so results are identical across platforms.
    """
    pops = [int(p) for p in populations]
    if any(p < 0 for p in pops):
        raise ValueError("populations must be non-negative")
    n_total = sum(pops)
    if any(t < 0 or t > n_total for t in targets):
        raise ValueError("targets must lie in [0, sum(populations)]")
    wanted = sorted(set(t for t in targets if t > 0))
    snapshots: dict[int, list[int]] = {0: [0] * len(pops)}
    if wanted:
        assigned = [0] * len(pops)
        want_set = set(wanted)
        for t in range(1, wanted[-1] + 1):
            # eligible: assigned_d + 1 <= ceil(t * pops_d / n_total), which for
            # integers is exactly assigned_d * n_total < t * pops_d
            best = -1
            for d, (s, p) in enumerate(zip(assigned, pops)):
                if s * n_total >= t * p:
                    continue
                if best < 0 or p * (assigned[best] + 1) > pops[best] * (s + 1):
                    best = d
            # someone is always eligible: sum(assigned) = t-1 < t = sum quotas
            assigned[best] += 1
            if t in want_set:
                snapshots[t] = list(assigned)
    return [list(snapshots[t]) for t in targets]


def saturating_quotas(available: Sequence[int], weights: Sequence[float], cap: int) -> list[int]:
    """Integer per-group quotas for a weighted cap, with saturation.

    Real quotas are cap * weight. A group whose quota meets or exceeds its
    available rows is saturated (takes everything it has) and the shortfall
    is re-distributed proportionally over the remaining weights; the final
    integer rounding uses largest_remainder. Requires cap <= sum(available).

    If every remaining group has zero weight while rows remain to place, the
    leftover is spread proportionally to availability instead.
    """
    avail = np.asarray(available, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if len(avail) != len(w):
        raise ValueError("available and weights must have the same length")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    if cap > avail.sum():
        raise ValueError("cap exceeds available rows")
    saturated = np.zeros(len(avail), dtype=bool)
    while True:
        remaining = cap - int(avail[saturated].sum())
        unsat = np.flatnonzero(~saturated)
        if remaining <= 0 or len(unsat) == 0:
            break
        wsum = w[unsat].sum()
        if wsum > 0:
            quotas = remaining * (w[unsat] / wsum)
        else:
            quotas = remaining * (avail[unsat] / avail[unsat].sum())
        newly = unsat[quotas >= avail[unsat]]
        if len(newly) == 0:
            break
        saturated[newly] = True
    result = np.where(saturated, avail, 0).astype(np.int64)
    remaining = cap - int(result.sum())
    unsat = np.flatnonzero(~saturated)
    if remaining > 0 and len(unsat) > 0:
        wsum = w[unsat].sum()
        use = w[unsat] if wsum > 0 else avail[unsat].astype(np.float64)
        for i, q in zip(unsat, largest_remainder(use, remaining)):
            result[i] = q
    return [int(r) for r in result]
