"""Linear compression of log-DLV panels for the compressed generators.

The projection keeps the top principal directions of the (by default
centered) log-level matrix; because the rows of the projection are
orthonormal, reconstruction is just the transpose plus the mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_COMPONENTS = 5


class PcaError(ValueError):
    pass


@dataclass
class CompressionMap:
    mean: np.ndarray                      # (N_X,), zeros when uncentered
    projection: np.ndarray                # (N_P, N_X), orthonormal rows
    explained_variance_ratio: np.ndarray  # (N_X,), descending, sums to 1
    centered: bool = True
    rank_deficient: bool = False

    @property
    def n_components(self) -> int:
        return self.projection.shape[0]

    @property
    def n_dims(self) -> int:
        return self.projection.shape[1]

    @property
    def reconstruction(self) -> np.ndarray:
        # pseudo-inverse; equals the transpose for orthonormal rows
        return self.projection.T

    def to_json(self) -> str:
        return json.dumps({
            "kind": "compression_map",
            "mean": self.mean.tolist(),
            "projection": self.projection.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "centered": self.centered,
            "rank_deficient": self.rank_deficient,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CompressionMap":
        d = json.loads(text)
        if d.get("kind") != "compression_map":
            raise PcaError("not a compression_map JSON document")
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   projection=np.asarray(d["projection"], dtype=np.float64),
                   explained_variance_ratio=np.asarray(
                       d["explained_variance_ratio"], dtype=np.float64),
                   centered=bool(d["centered"]),
                   rank_deficient=bool(d["rank_deficient"]))


def fit_pca(lp, n_components: int = DEFAULT_COMPONENTS,
            centered: bool = True) -> CompressionMap:
    """Fit the compression on a LogPanel (or bare matrix) of log levels."""
    data = lp.values if hasattr(lp, "values") else np.asarray(lp, dtype=np.float64)
    T, n_dims = data.shape
    if not 1 <= n_components <= n_dims:
        raise PcaError(f"n_components must be in [1, {n_dims}], got {n_components}")
    if T <= n_dims:
        raise PcaError(f"need more rows than dimensions (T={T}, N_X={n_dims})")

    mean = data.mean(axis=0) if centered else np.zeros(n_dims)
    centered_data = data - mean
    # SVD of the data matrix; rows of Vt are the principal directions
    _, s, vt = np.linalg.svd(centered_data, full_matrices=False)
    variances = s ** 2
    total = variances.sum()
    if total <= 0:
        raise PcaError("data has zero variance; nothing to compress")
    ratio = variances / total

    rank = int(np.sum(s > s[0] * 1e-12)) if s[0] > 0 else 0
    rank_deficient = rank < n_components
    keep = min(n_components, max(rank, 1))
    return CompressionMap(mean=mean, projection=vt[:keep].copy(),
                          explained_variance_ratio=ratio,
                          centered=centered, rank_deficient=rank_deficient)


def compress(cm: CompressionMap, rows: np.ndarray) -> np.ndarray:
    """Project (k, N_X) rows into the (k, N_P) latent space."""
    rows = np.asarray(rows, dtype=np.float64)
    squeeze = rows.ndim == 1
    mat = rows[None, :] if squeeze else rows
    if mat.shape[1] != cm.n_dims:
        raise PcaError(f"compress: expected {cm.n_dims} columns, got {mat.shape[1]}")
    out = (mat - cm.mean) @ cm.projection.T
    return out[0] if squeeze else out


def decompress(cm: CompressionMap, rows: np.ndarray) -> np.ndarray:
    """Map (k, N_P) latent rows back to the full (k, N_X) grid."""
    rows = np.asarray(rows, dtype=np.float64)
    squeeze = rows.ndim == 1
    mat = rows[None, :] if squeeze else rows
    if mat.shape[1] != cm.n_components:
        raise PcaError(f"decompress: expected {cm.n_components} columns, got {mat.shape[1]}")
    out = mat @ cm.projection + cm.mean
    return out[0] if squeeze else out
