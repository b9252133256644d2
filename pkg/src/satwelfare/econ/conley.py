"""Conley spatial HAC standard errors with a uniform distance kernel.

The meat of the sandwich is sum_i sum_j 1{d(i, j) <= cutoff} s_i s_j' with
s_i = x_i * e_i and d the haversine distance; i = j terms are included.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..geo import ConfigurationError, chord_for_distance, haversine, unit_vectors
from .ols import OLSFit


class SpatialKernel:
    """Sparse 0/1 neighbourhood matrix for a fixed set of coordinates.

    Built once per coordinate set and reused across regressions (outcomes,
    specifications, placebo draws).
    """

    def __init__(self, lon, lat, cutoff_m: float = 3000.0, kernel: str = "uniform"):
        if cutoff_m < 0:
            raise ConfigurationError(f"Conley cutoff must be non-negative, got {cutoff_m}")
        if kernel != "uniform":
            raise ConfigurationError(f"unsupported kernel {kernel!r}; only 'uniform'")
        self.lon = np.asarray(lon, dtype=float)
        self.lat = np.asarray(lat, dtype=float)
        self.cutoff_m = float(cutoff_m)
        n = self.lon.size
        tree = cKDTree(unit_vectors(self.lon, self.lat))
        bound = chord_for_distance(cutoff_m) * (1 + 1e-9) + 1e-15
        pairs = tree.query_pairs(bound, output_type="ndarray")
        if len(pairs):
            i, j = pairs[:, 0], pairs[:, 1]
            d = haversine(self.lon[i], self.lat[i], self.lon[j], self.lat[j])
            keep = d <= cutoff_m
            i, j = i[keep], j[keep]
        else:
            i = j = np.zeros(0, dtype=np.int64)
        self.n_pairs = int(i.size)
        rows = np.concatenate([np.arange(n), i, j])
        cols = np.concatenate([np.arange(n), j, i])
        self.K = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))

    def __len__(self) -> int:
        return self.lon.size

    def subset(self, mask) -> "SpatialKernel":
        """Kernel restricted to the observations selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        out = object.__new__(SpatialKernel)
        out.lon, out.lat, out.cutoff_m = self.lon[mask], self.lat[mask], self.cutoff_m
        out.K = self.K[mask][:, mask].tocsr()
        out.n_pairs = int((out.K.nnz - out.lon.size) // 2)
        return out

    def meat(self, S: np.ndarray) -> np.ndarray:
        M = S.T @ (self.K @ S)
        return 0.5 * (M + M.T)


def conley_meat_bruteforce(S: np.ndarray, lon, lat, cutoff_m: float) -> np.ndarray:
    """Reference O(n^2) double sum, one row of the distance matrix at a time."""
    if cutoff_m < 0:
        raise ConfigurationError(f"Conley cutoff must be non-negative, got {cutoff_m}")
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    p = S.shape[1]
    M = np.zeros((p, p))
    for i in range(len(lon)):
        w = haversine(lon[i], lat[i], lon, lat) <= cutoff_m
        M += np.outer(S[i], w.astype(float) @ S)
    return 0.5 * (M + M.T)


def hc0_vcov(fit: OLSFit) -> np.ndarray:
    B = fit.bread()
    S = fit.scores()
    return B @ (S.T @ S) @ B


def conley_vcov(fit: OLSFit, lon=None, lat=None, cutoff_m: float = 3000.0,
                kernel: str = "uniform", spatial: SpatialKernel | None = None,
                method: str = "fast") -> np.ndarray:
    """Conley variance matrix for the coefficients of ``fit``.

    ``method='fast'`` uses a k-d tree neighbourhood (or a prebuilt
    ``spatial`` kernel); ``method='brute'`` evaluates the full double sum.
    """
    B = fit.bread()
    S = fit.scores()
    if method == "brute":
        M = conley_meat_bruteforce(S, lon, lat, cutoff_m)
    elif method == "fast":
        if spatial is None:
            spatial = SpatialKernel(lon, lat, cutoff_m, kernel)
        elif len(spatial) != fit.n:
            raise ValueError("spatial kernel size does not match the regression")
        M = spatial.meat(S)
    else:
        raise ValueError(f"unknown method {method!r}")
    V = B @ M @ B
    return 0.5 * (V + V.T)


def conley_se(fit: OLSFit, lon=None, lat=None, cutoff_m: float = 3000.0,
              kernel: str = "uniform", spatial: SpatialKernel | None = None,
              method: str = "fast") -> np.ndarray:
    V = conley_vcov(fit, lon, lat, cutoff_m, kernel, spatial, method)
    return np.sqrt(np.clip(np.diag(V), 0.0, None))
