"""Shape descriptors and clustering over them.

The shape descriptor is a D2 distribution: a 64-bin histogram of the
pairwise distances between surface samples, normalized by the mesh AABB
diagonal so the descriptor is scale free. Descriptors feed a seeded
k-means used both for diversity scoring and for restricting selection to
geometry clusters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .catalog import TriangleMesh

logger = logging.getLogger(__name__)

DESCRIPTOR_BINS = 64
DEFAULT_SAMPLE_COUNT = 2048

_CACHE_VERSION = 1


class FeatureError(ValueError):
    """Raised on invalid descriptor or clustering inputs."""


def sample_surface(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` area-weighted uniform samples from the mesh surface."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise FeatureError("mesh has no surface area")
    tri = rng.choice(len(areas), size=count, p=areas / total)
    corners = mesh.triangle_corners()[tri]
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (corners[:, 0] * w0[:, None] + corners[:, 1] * w1[:, None] + corners[:, 2] * w2[:, None])


def compute_descriptor(mesh: TriangleMesh, sample_count: int = DEFAULT_SAMPLE_COUNT,
                       seed: int = 0) -> np.ndarray:
    """D2 shape distribution of a mesh.

    Returns a (64,) float64 histogram over all pairwise sample distances
    divided by the AABB diagonal, normalized to sum to 1. Deterministic
    for a given seed.
    """
    if sample_count < 2:
        raise FeatureError("sample_count must be at least 2")
    lo, hi = mesh.aabb()
    diagonal = float(np.linalg.norm(hi - lo))
    if diagonal < 1e-9:
        raise FeatureError("mesh AABB diagonal is degenerate")
    rng = np.random.default_rng(seed)
    points = sample_surface(mesh, sample_count, rng)
    dists = pdist(points) / diagonal
    np.clip(dists, 0.0, 1.0, out=dists)
    hist, _ = np.histogram(dists, bins=DESCRIPTOR_BINS, range=(0.0, 1.0))
    return hist.astype(np.float64) / hist.sum()


@dataclass
class ClusterModel:
    """k-means centroids over shape descriptors."""

    centroids: np.ndarray  # (k, 64)
    k: int

    def assign(self, descriptors) -> np.ndarray:
        """Nearest-centroid labels; ties go to the lowest centroid index."""
        X = _as_matrix(descriptors)
        d2 = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def _as_matrix(descriptors) -> np.ndarray:
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or len(X) == 0:
        raise FeatureError("descriptors must be a non-empty 2-D array")
    return X


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int = 100,
           tol: float = 1e-6) -> tuple[np.ndarray, list[float]]:
    """Lloyd iterations; returns final centroids and the objective history."""
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), labels].sum()))
        new = centroids.copy()
        for c in range(len(centroids)):
            mask = labels == c
            if mask.any():
                new[c] = X[mask].mean(axis=0)
        move = float(np.linalg.norm(new - centroids, axis=1).max())
        centroids = new
        if move < tol:
            break
    return centroids, history


def kmeans(descriptors, k: int, seed: int = 0) -> ClusterModel:
    """Seeded k-means++ initialization followed by Lloyd iterations.

    Deterministic for a given seed. Raises if ``k`` is not in [1, n].
    """
    X = _as_matrix(descriptors)
    n = len(X)
    if k < 1:
        raise FeatureError("k must be at least 1")
    if k > n:
        raise FeatureError(f"k={k} exceeds the number of descriptors ({n}); use a smaller k")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    if k > 1:
        d2 = ((X - centroids[0]) ** 2).sum(axis=1)
        for c in range(1, k):
            total = d2.sum()
            if total <= 0:
                idx = int(rng.integers(n))
            else:
                idx = int(rng.choice(n, p=d2 / total))
            centroids[c] = X[idx]
            d2 = np.minimum(d2, ((X - centroids[c]) ** 2).sum(axis=1))
    centroids, _ = _lloyd(X, centroids)
    return ClusterModel(centroids=centroids, k=k)


def entropy_of_assignments(model: ClusterModel, descriptors) -> float:
    """Shannon entropy (natural log) of the cluster assignment frequencies."""
    labels = model.assign(descriptors)
    counts = np.bincount(labels, minlength=model.k).astype(np.float64)
    freq = counts[counts > 0] / counts.sum()
    return float(-(freq * np.log(freq)).sum())


@dataclass
class DomainSplit:
    """Query indices split by the reference-set distance rule."""

    in_domain: np.ndarray
    out_of_domain: np.ndarray


def out_of_domain_split(query_features, reference_features) -> DomainSplit:
    """Split query descriptors against a reference set.

    A query is out of domain iff its distance to the reference mean
    exceeds the maximum reference-to-mean distance (strictly).
    """
    Q = _as_matrix(query_features)
    R = _as_matrix(reference_features)
    center = R.mean(axis=0)
    d_max = float(np.linalg.norm(R - center, axis=1).max())
    d = np.linalg.norm(Q - center, axis=1)
    out = d > d_max
    idx = np.arange(len(Q))
    return DomainSplit(in_domain=idx[~out], out_of_domain=idx[out])


def save_descriptor_cache(path: str | Path, descriptors: dict[str, np.ndarray],
                          sample_count: int = DEFAULT_SAMPLE_COUNT, seed: int = 0) -> None:
    """Persist per-asset descriptors keyed by asset id."""
    payload = {
        "format_version": _CACHE_VERSION,
        "params": {"sample_count": sample_count, "seed": seed, "bins": DESCRIPTOR_BINS},
        "descriptors": {k: [float(x) for x in v] for k, v in sorted(descriptors.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_descriptor_cache(path: str | Path, sample_count: int = DEFAULT_SAMPLE_COUNT,
                          seed: int = 0) -> dict[str, np.ndarray] | None:
    """Load a descriptor cache; returns None when absent or parameters differ."""
    path = Path(path)
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError:
        logger.warning("descriptor cache %s is corrupt; recomputing", path)
        return None
    if payload.get("format_version") != _CACHE_VERSION:
        return None
    if payload.get("params") != {"sample_count": sample_count, "seed": seed, "bins": DESCRIPTOR_BINS}:
        return None
    return {k: np.asarray(v, dtype=np.float64) for k, v in payload["descriptors"].items()}
