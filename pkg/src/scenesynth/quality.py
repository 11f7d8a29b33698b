"""Dataset-quality metrics: co-occurrence complexity, shape-cluster
entropy and externally scored layout reasonability.

The first two are pure computations. Layout scoring posts preview
renders of each scene to an HTTP backend and treats any failure as a
missing score rather than inventing one.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import requests

from .features import entropy_of_assignments, kmeans
from .relations import API_KEY_ENV, TransportError
from .scanner import LabeledPointCloud

logger = logging.getLogger(__name__)

DEFAULT_DIVERSITY_CLUSTERS = 32
DEFAULT_SCORE_WORKERS = 4
_VIEW_AXES = {"top": (0, 1, 2, -1), "front": (0, 2, 1, +1), "side": (1, 2, 0, +1)}


class MetricsError(ValueError):
    """Raised on metric preconditions that the data cannot satisfy."""


@dataclass
class SceneClassSet:
    """The set of object classes present in one scene."""

    scene_id: str
    classes: frozenset[str]

    def __post_init__(self) -> None:
        self.classes = frozenset(self.classes)
        if not self.classes:
            raise MetricsError(f"scene {self.scene_id!r} has an empty class set")


@dataclass
class MetricsReport:
    """The three dataset-quality numbers, with per-scene layout scores."""

    geometry_diversity_entropy: float
    context_complexity: float
    layout_scores: dict[str, int | None] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def mean_layout_score(self) -> float | None:
        if not self.layout_scores:
            return None
        present = [s for s in self.layout_scores.values() if s is not None]
        return float(np.mean(present)) if present else None

    def to_json(self) -> dict:
        out = {
            "geometry_diversity_entropy": self.geometry_diversity_entropy,
            "context_complexity": self.context_complexity,
        }
        if self.layout_scores is not None:
            out["layout_scores"] = dict(sorted(self.layout_scores.items()))
            out["mean_layout_score"] = self.mean_layout_score
        out.update(self.extras)
        return out


def context_complexity(scene_sets: list[SceneClassSet]) -> float:
    """Mean over classes of the strongest conditional co-occurrence.

    For each class c, P(c'|c) is the fraction of scenes containing c
    that also contain c'; each class contributes its maximum over all
    other classes, and the score is the mean of those maxima. Lower
    values mean object contexts are harder to predict.
    """
    if not scene_sets:
        raise MetricsError("context_complexity needs at least one scene")
    classes = sorted(set().union(*(s.classes for s in scene_sets)))
    if len(classes) < 2:
        raise MetricsError("context_complexity needs at least two distinct classes")
    index = {c: i for i, c in enumerate(classes)}
    n = len(classes)
    with_c = np.zeros(n)
    both = np.zeros((n, n))
    for s in scene_sets:
        ids = sorted(index[c] for c in s.classes)
        for i in ids:
            with_c[i] += 1
        for a_pos, i in enumerate(ids):
            for j in ids[a_pos + 1:]:
                both[i, j] += 1
                both[j, i] += 1
    maxima = np.zeros(n)
    for i in range(n):
        if with_c[i] > 0:
            maxima[i] = both[i].max() / with_c[i]
    return float(maxima.mean())


def geometry_diversity(descriptors, k: int = DEFAULT_DIVERSITY_CLUSTERS,
                       seed: int = 0) -> float:
    """Entropy (nats) of the k-means cluster assignment of the descriptors.

    Descriptors are sorted lexicographically first, so the value depends
    only on the multiset. Higher entropy means placed objects span
    shapes more evenly.
    """
    arr = np.asarray(descriptors, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricsError("descriptors must be a (n, bins) array")
    if len(arr) < k:
        raise MetricsError(
            f"geometry_diversity needs at least k={k} descriptors, got {len(arr)}; "
            f"pass a smaller k")
    order = np.lexsort(arr.T[::-1])
    canon = arr[order]
    model = kmeans(canon, k, seed)
    return entropy_of_assignments(model, canon)


def render_cloud_image(cloud: LabeledPointCloud, view: str = "top",
                       image_size: int = 256) -> np.ndarray:
    """Orthographic splat render of a cloud, as an (S, S, 3) uint8 image.

    Views: "top" (looking down -z), "front" (along +y), "side" (along
    +x). Per pixel the point nearest the camera wins.
    """
    if view not in _VIEW_AXES:
        raise MetricsError(f"unknown view {view!r}; choose from {sorted(_VIEW_AXES)}")
    img = np.full((image_size, image_size, 3), 24, dtype=np.uint8)
    if len(cloud) == 0:
        return img
    ax_u, ax_v, ax_depth, depth_sign = _VIEW_AXES[view]
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = (image_size - 1) / span[[ax_u, ax_v]].max()
    u = np.round((pts[:, ax_u] - lo[ax_u]) * scale).astype(np.int64)
    v = np.round((pts[:, ax_v] - lo[ax_v]) * scale).astype(np.int64)
    v = image_size - 1 - v
    depth = depth_sign * pts[:, ax_depth]
    colors = cloud.colors if cloud.colors is not None \
        else np.full((len(pts), 3), 200, dtype=np.uint8)
    order = np.lexsort((depth, v, u))
    pix = u[order] * image_size + v[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    sel = order[first]
    img[v[sel], u[sel]] = colors[sel]
    return img


def encode_png(image: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def render_scene_previews(cloud: LabeledPointCloud, image_size: int = 256) -> list[bytes]:
    """The three standard preview renders of a scene, PNG-encoded."""
    return [encode_png(render_cloud_image(cloud, view, image_size))
            for view in ("top", "front", "side")]


def default_score_prompt() -> str:
    from importlib import resources

    return resources.files("scenesynth").joinpath(
        "templates/layout_score_prompt.txt").read_text()


class LayoutScoreBackend:
    """HTTP scoring backend: posts preview images, expects a number back.

    Request body: {"images": [base64 PNG, ...], "prompt": str}; reply
    {"score": number}. The API key, if set in the environment, is sent
    as a bearer token.
    """

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 3,
                 session: requests.Session | None = None):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()

    def score(self, images: list[bytes], prompt: str) -> float:
        body = {"images": [base64.b64encode(b).decode("ascii") for b in images],
                "prompt": prompt}
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self.session.post(self.url, json=body, headers=headers,
                                         timeout=self.timeout)
                resp.raise_for_status()
                return float(resp.json()["score"])
            except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(min(0.2 * 2 ** attempt, 2.0))
        raise TransportError(f"layout scoring failed after {self.retries} attempts: {last}")


def layout_score(images: list[bytes], backend: LayoutScoreBackend,
                 prompt: str | None = None) -> int:
    """Score one scene's renders; clamps out-of-range replies to [0, 100]."""
    raw = backend.score(images, prompt if prompt is not None else default_score_prompt())
    score = int(round(raw))
    if not 0 <= score <= 100:
        clamped = min(max(score, 0), 100)
        logger.warning("layout score %s outside [0, 100]; clamped to %s", score, clamped)
        score = clamped
    return score


def score_dataset_layouts(scene_renders: dict[str, list[bytes]],
                          backend: LayoutScoreBackend, prompt: str | None = None,
                          max_workers: int = DEFAULT_SCORE_WORKERS) -> dict[str, int | None]:
    """Per-scene layout scores; a scene whose request fails scores None."""
    resolved = prompt if prompt is not None else default_score_prompt()

    def one(item: tuple[str, list[bytes]]) -> tuple[str, int | None]:
        scene_id, images = item
        try:
            return scene_id, layout_score(images, backend, resolved)
        except TransportError as exc:
            logger.warning("scene %s: layout score absent (%s)", scene_id, exc)
            return scene_id, None

    items = sorted(scene_renders.items())
    if max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            pairs = list(pool.map(one, items))
    else:
        pairs = [one(it) for it in items]
    return dict(pairs)


def write_metrics(path, report: MetricsReport) -> None:
    from pathlib import Path

    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
