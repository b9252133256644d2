"""Least squares with categorical level controls, solved by QR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg


class RankDeficiencyError(ValueError):
    def __init__(self, columns: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; collinear columns: {list(columns)}")
        self.columns = list(columns)


@dataclass
class OLSFit:
    coef: np.ndarray
    names: list[str]
    X: np.ndarray
    y: np.ndarray
    resid: np.ndarray
    R: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def df(self) -> int:
        return self.n - self.p

    def index(self, name: str) -> int:
        return self.names.index(name)

    def bread(self) -> np.ndarray:
        """(X'X)^-1 from the triangular factor."""
        Rinv = linalg.solve_triangular(self.R, np.eye(self.p))
        return Rinv @ Rinv.T

    def scores(self) -> np.ndarray:
        """Per-observation score contributions x_i * e_i, shape (n, p)."""
        return self.X * self.resid[:, None]


def lstsq_qr(X: np.ndarray, y: np.ndarray, names: Sequence[str], rtol: float = 1e-10) -> OLSFit:
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more observations than parameters (n={n}, p={p})")
    Q, R = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(R))
    scale = np.linalg.norm(X, axis=0)
    if np.any((d <= rtol * scale) | (scale == 0.0)):
        # name every column that takes part in a linear dependency
        Xs = X / np.where(scale > 0, scale, 1.0)
        _, s, vt = np.linalg.svd(Xs, full_matrices=False)
        null = vt[s <= rtol * max(s[0], 1e-300) * max(n, p)]
        if null.size == 0:
            null = vt[-1:]
        involved = np.any(np.abs(null) > 1e-6, axis=0) | (scale == 0.0)
        raise RankDeficiencyError([names[j] for j in np.flatnonzero(involved)])
    coef = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    return OLSFit(coef, list(names), X, y, resid, R)


def level_indicators(levels) -> tuple[np.ndarray, list[str]]:
    """One 0/1 column per distinct level, in sorted level order."""
    levels = np.asarray(levels)
    uniq = np.unique(levels)
    D = (levels[:, None] == uniq[None, :]).astype(float)
    return D, [f"e={u}" for u in uniq.tolist()]


def ols_with_categorical_controls(y, x_terms, control_levels, x_names: Optional[Sequence[str]] = None
                                  ) -> OLSFit:
    """Regress ``y`` on ``x_terms`` plus one indicator per distinct control level.

    There is no separate intercept: the level indicators span it. Raises
    :class:`RankDeficiencyError` naming the offending columns when the
    design is singular.
    """
    y = np.asarray(y, dtype=float)
    xt = np.asarray(x_terms, dtype=float)
    if xt.ndim == 1:
        xt = xt[:, None]
    if x_names is None:
        x_names = [f"x{j}" for j in range(xt.shape[1])]
    D, dnames = level_indicators(control_levels)
    X = np.hstack([xt, D])
    return lstsq_qr(X, y, list(x_names) + dnames)
