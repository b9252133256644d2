"""Binned and pooled treatment-intensity regressions on grid cells."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ..rasterize import CellTable, WinsorSpec, winsorize
from .conley import SpatialKernel, conley_vcov
from .ols import OLSFit, ols_with_categorical_controls

Z95 = 1.96
BIN_LABELS = ("1", "2", "2+")


@dataclass(frozen=True)
class EffectEstimate:
    coefficient: float
    se: float
    ci95: tuple[float, float]
    t_stat: float
    p_value: float
    df: int
    n: int
    term: str = "x"
    outcome: str = ""

    @classmethod
    def from_fit(cls, fit: OLSFit, V: np.ndarray, term: str, outcome: str = "") -> "EffectEstimate":
        j = fit.index(term)
        b = float(fit.coef[j])
        se = float(np.sqrt(max(V[j, j], 0.0)))
        t = b / se if se > 0 else (np.inf if b != 0 else np.nan)
        p = float(2.0 * stats.t.sf(abs(t), fit.df)) if np.isfinite(t) else (0.0 if t else np.nan)
        return cls(b, se, (b - Z95 * se, b + Z95 * se), float(t), p, fit.df, fit.n, term, outcome)


@dataclass
class BinnedEffects:
    """Effects of 1, 2 and more than 2 treated households relative to none."""

    effects: dict
    outcome: str = ""
    dropped_bins: list = field(default_factory=list)
    n: int = 0

    def coefficient(self, label: str) -> float:
        if label == "0":
            return 0.0
        return self.effects[label].coefficient


def _prepare(cells: CellTable, outcome: str, x: Optional[np.ndarray],
             winsor: Optional[WinsorSpec], spatial: Optional[SpatialKernel]):
    y = np.asarray(cells.outcome(outcome), dtype=float)
    x = np.asarray(cells.x if x is None else x)
    keep = np.isfinite(y)
    lon, lat = cells.lon, cells.lat
    if spatial is not None and not keep.all():
        spatial = spatial.subset(keep)
    y, x, e, lon, lat = y[keep], x[keep], cells.e[keep], lon[keep], lat[keep]
    if winsor is not None:
        y = winsorize(y, winsor)
    return y, x, e, lon, lat, spatial


def estimate_pooled(cells: CellTable, outcome: str = "y_footprint", cutoff_m: float = 3000.0,
                    winsor: Optional[WinsorSpec] = WinsorSpec(upper_pct=99.0),
                    spatial: Optional[SpatialKernel] = None, x=None,
                    method: str = "fast") -> EffectEstimate:
    """Linear effect of one more treated household (one $1,000 transfer) per cell.

    The outcome is winsorized first; eligible-count levels enter as
    indicators; the standard error is Conley with a uniform kernel. ``x``
    overrides the cell treatment counts (placebo runs).
    """
    y, x, e, lon, lat, spatial = _prepare(cells, outcome, x, winsor, spatial)
    fit = ols_with_categorical_controls(y, x.astype(float), e, ["x"])
    V = conley_vcov(fit, lon, lat, cutoff_m, spatial=spatial, method=method)
    return EffectEstimate.from_fit(fit, V, "x", outcome)


def bin_indicators(x) -> tuple[np.ndarray, list[str]]:
    x = np.asarray(x)
    cols = np.column_stack([x == 1, x == 2, x >= 3]).astype(float)
    return cols, list(BIN_LABELS)


def identified_columns(D: np.ndarray, levels, rtol: float = 1e-8) -> np.ndarray:
    """Mask of columns of ``D`` that stay independent after absorbing level indicators.

    Columns are taken greedily in order, so an earlier bin is kept in
    preference to a later one.
    """
    levels = np.asarray(levels)
    _, inv = np.unique(levels, return_inverse=True)
    inv = inv.ravel()
    counts = np.bincount(inv).astype(float)
    Z = np.empty_like(D, dtype=float)
    for j in range(D.shape[1]):
        means = np.bincount(inv, weights=D[:, j]) / counts
        Z[:, j] = D[:, j] - means[inv]
    keep = np.zeros(D.shape[1], dtype=bool)
    basis: list[np.ndarray] = []
    for j in range(D.shape[1]):
        z = Z[:, j].copy()
        for b in basis:
            z -= (b @ z) * b
        nz = np.linalg.norm(z)
        if nz > rtol * max(np.linalg.norm(D[:, j]), 1.0):
            basis.append(z / nz)
            keep[j] = True
    return keep


def estimate_binned(cells: CellTable, outcome: str = "y_footprint", cutoff_m: float = 3000.0,
                    winsor: Optional[WinsorSpec] = WinsorSpec(upper_pct=99.0),
                    spatial: Optional[SpatialKernel] = None, x=None,
                    method: str = "fast") -> BinnedEffects:
    """Nonparametric effects for cells with 1, 2 or more than 2 treated households.

    Bins with no observations, or whose cells coincide with whole
    eligible-count levels, are dropped with a warning.
    """
    y, x, e, lon, lat, spatial = _prepare(cells, outcome, x, winsor, spatial)
    D, labels = bin_indicators(x)
    present = D.sum(axis=0) > 0
    dropped = [lab for lab, ok in zip(labels, present) if not ok]
    if dropped:
        warnings.warn(f"{outcome}: no cells in treatment bins {dropped}; bins dropped",
                      stacklevel=2)
    D = D[:, present]
    labels = [lab for lab, ok in zip(labels, present) if ok]
    ident = identified_columns(D, e)
    if not ident.all():
        lost = [lab for lab, ok in zip(labels, ident) if not ok]
        warnings.warn(f"{outcome}: treatment bins {lost} do not vary within any eligible-count "
                      "level; bins dropped", stacklevel=2)
        dropped += lost
        D = D[:, ident]
        labels = [lab for lab, ok in zip(labels, ident) if ok]
    if not labels:
        return BinnedEffects({}, outcome, dropped, int(y.size))
    fit = ols_with_categorical_controls(y, D, e, labels)
    V = conley_vcov(fit, lon, lat, cutoff_m, spatial=spatial, method=method)
    effects = {lab: EffectEstimate.from_fit(fit, V, lab, outcome) for lab in labels}
    return BinnedEffects(effects, outcome, dropped, fit.n)
