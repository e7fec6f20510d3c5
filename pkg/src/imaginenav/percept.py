"""Panorama capture and the deterministic view encoder.

A feature vector has ``n_classes + 4`` components: an inverse-depth weighted
hit histogram over classes, followed by mean, min and max depth and the
fraction of rays that reached max range.  Vectors are L2-normalised; an
all-zero raw vector stays all-zero (the "zero sentinel").
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .world import (
    DEFAULT_MAX_RANGE,
    DEFAULT_RAYS,
    VIEW_FOV,
    GridWorld,
    Pose,
    ViewObservation,
    raycast_view,
)

N_VIEWS = 6
VIEW_OFFSETS = tuple(i * VIEW_FOV for i in range(N_VIEWS))
DEFAULT_CLASSES = 12

__all__ = [
    "N_VIEWS",
    "VIEW_OFFSETS",
    "Panorama",
    "ViewObservation",
    "capture_panorama",
    "encode_view",
    "feature_dim",
    "mean_depth",
    "write_embeddings",
    "read_embeddings",
]


@dataclass(frozen=True)
class Panorama:
    views: tuple[ViewObservation, ...]
    timestep: int = 0

    def __post_init__(self):
        if len(self.views) != N_VIEWS:
            raise ValueError(f"a panorama has exactly {N_VIEWS} views, got {len(self.views)}")

    @property
    def forward(self) -> ViewObservation:
        return self.views[0]


def capture_panorama(world: GridWorld, pose: Pose, timestep: int = 0,
                     n_rays: int = DEFAULT_RAYS, max_range: float = DEFAULT_MAX_RANGE) -> Panorama:
    views = tuple(
        raycast_view(world, pose, off, n_rays=n_rays, max_range=max_range, timestep=timestep)
        for off in VIEW_OFFSETS
    )
    return Panorama(views, timestep)


def feature_dim(n_classes: int) -> int:
    return n_classes + 4


def mean_depth(view: ViewObservation) -> float:
    return math.fsum(view.depths) / len(view.depths)


def encode_view(view: ViewObservation, n_classes: int = DEFAULT_CLASSES) -> np.ndarray:
    """Unit-norm feature: per-class inverse-depth histogram then four depth terms.

    Histogram slots hold the per-ray mean of ``1 / max(depth, resolution)``
    over rays hitting that class.  The tail is mean, min and max depth and
    the fraction of rays at max range.
    """
    depths = np.asarray(view.depths, dtype=np.float64)
    classes = np.asarray(view.classes, dtype=np.int64)
    raw = np.zeros(feature_dim(n_classes), dtype=np.float64)
    if depths.size == 0:
        return raw
    if classes.min() < 0 or classes.max() >= n_classes:
        raise ValueError(f"ray class outside [0, {n_classes})")
    weights = 1.0 / np.maximum(depths, view.resolution)
    # sorting first makes the summation order independent of ray order
    order = np.lexsort((weights, classes))
    np.add.at(raw, classes[order], weights[order])
    # per-ray average keeps the histogram on the same scale as the depth terms
    raw[:n_classes] /= depths.size
    sd = np.sort(depths)
    raw[n_classes] = math.fsum(sd) / sd.size
    raw[n_classes + 1] = sd[0]
    raw[n_classes + 2] = sd[-1]
    raw[n_classes + 3] = np.count_nonzero(depths >= view.max_range) / depths.size
    norm = math.sqrt(math.fsum(raw * raw))
    if norm == 0.0:
        return raw
    return raw / norm


# ---------------------------------------------------------------------------
# embedding dump (JSONL): {timestep, heading, values}


def write_embeddings(path, records: Iterable[tuple[int, float, np.ndarray]]) -> None:
    with open(path, "w") as fh:
        for timestep, heading, values in records:
            fh.write(json.dumps({"timestep": int(timestep), "heading": float(heading),
                                 "values": [float(v) for v in values]}) + "\n")


def read_embeddings(path) -> Iterator[tuple[int, float, np.ndarray]]:
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            yield int(rec["timestep"]), float(rec["heading"]), np.asarray(rec["values"], dtype=np.float64)
