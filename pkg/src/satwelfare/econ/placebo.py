"""Placebo re-randomization under the two-tier saturation design."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..ingest import HouseholdRecord, VillageRecord
from ..rasterize import CellTable, WinsorSpec
from .conley import SpatialKernel
from .effects import BinnedEffects, EffectEstimate, estimate_binned, estimate_pooled

HIGH_SATURATION = 2.0 / 3.0
LOW_SATURATION = 1.0 / 3.0


def n_treated_villages(n_villages: int, share: float) -> int:
    """Villages to treat in a group: nearest integer, halves rounded up."""
    return int(math.floor(n_villages * share + 0.5))


def assign_two_tier(villages: Sequence[VillageRecord], rng: np.random.Generator,
                    high: float = HIGH_SATURATION, low: float = LOW_SATURATION):
    """Draw saturation groups and treated villages.

    ``n_groups // 2`` groups are high saturation (the smaller half when the
    count is odd). Returns ``(high_groups, treated_village_ids)`` as sorted lists.
    """
    groups: dict[str, list[str]] = {}
    for v in villages:
        groups.setdefault(v.saturation_group_id, []).append(v.village_id)
    gids = sorted(groups)
    perm = rng.permutation(len(gids))
    high_groups = sorted(gids[i] for i in perm[: len(gids) // 2])
    high_set = set(high_groups)
    treated = []
    for g in gids:
        vids = sorted(groups[g])
        k = n_treated_villages(len(vids), high if g in high_set else low)
        pick = rng.choice(len(vids), size=k, replace=False)
        treated.extend(vids[i] for i in pick)
    return high_groups, sorted(treated)


@dataclass
class PlaceboDraw:
    seed: tuple[int, int]
    high_groups: list
    treated_villages: list
    binned: Optional[BinnedEffects]
    pooled: EffectEstimate


def placebo_run(villages: Sequence[VillageRecord], census: Sequence[HouseholdRecord],
                cells: CellTable, outcome: str = "y_footprint", n_sims: int = 100, seed: int = 0,
                cutoff_m: float = 3000.0, winsor: Optional[WinsorSpec] = WinsorSpec(upper_pct=99.0),
                spatial: Optional[SpatialKernel] = None, threads: int = 1,
                binned: bool = True) -> list[PlaceboDraw]:
    """Re-estimate the cell regressions under placebo treatment assignments.

    Draw ``d`` uses its own generator seeded from ``(seed, d)``; every
    eligible household in a placebo-treated village counts as treated.
    Results come back in draw order regardless of ``threads``.
    """
    vindex = {v.village_id: k for k, v in enumerate(villages)}
    hv = np.array([vindex[h.village_id] for h in census], dtype=np.int64)
    elig = np.array([h.eligible for h in census], dtype=bool)
    hcell = cells.locate(np.array([h.location.lon for h in census]),
                         np.array([h.location.lat for h in census]))
    usable = elig & (hcell >= 0)
    hv, hcell = hv[usable], hcell[usable]
    if spatial is None:
        spatial = SpatialKernel(cells.lon, cells.lat, cutoff_m)

    def one(d: int) -> PlaceboDraw:
        rng = np.random.default_rng([seed, d])
        high, treated = assign_two_tier(villages, rng)
        tv = np.zeros(len(villages), dtype=bool)
        tv[[vindex[v] for v in treated]] = True
        x = np.bincount(hcell[tv[hv]], minlength=len(cells))
        b = estimate_binned(cells, outcome, cutoff_m, winsor, spatial, x=x) if binned else None
        p = estimate_pooled(cells, outcome, cutoff_m, winsor, spatial, x=x)
        return PlaceboDraw((seed, d), high, treated, b, p)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(n_sims)))
    return [one(d) for d in range(n_sims)]
