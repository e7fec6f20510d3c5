"""Selective foveation memory.

The observation stream is cut into semantic segments wherever the cosine
similarity of consecutive frames drops to the threshold or below; each
segment contributes the frame nearest its feature centroid as a keyframe.
Tiers are built by a backward sweep from the newest frame: a dense recent
tier, a medium tier, and a sparse distant tier covering everything older.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .world import Pose

TIERS = ("distant", "medium", "recent")


class MemoryConfigError(ValueError):
    pass


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb))))


def consecutive_similarities(features: Sequence) -> np.ndarray:
    """``s[i]`` = cosine similarity of frames ``i`` and ``i + 1``."""
    if len(features) < 2:
        return np.zeros(0)
    F = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(F, axis=1)
    dots = np.einsum("ij,ij->i", F[:-1], F[1:])
    denom = norms[:-1] * norms[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


@dataclass(frozen=True)
class Segment:
    frame_indices: tuple[int, ...]
    centroid: np.ndarray = field(compare=False)

    @property
    def start(self) -> int:
        return self.frame_indices[0]

    @property
    def end(self) -> int:
        return self.frame_indices[-1]

    def __len__(self) -> int:
        return len(self.frame_indices)


def _make_segment(F: np.ndarray, start: int, end: int) -> Segment:
    return Segment(tuple(range(start, end + 1)), F[start : end + 1].mean(axis=0))


def segment_sequence(features: Sequence, tau: float) -> list[Segment]:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if len(features) == 0:
        return []
    F = np.asarray(features, dtype=np.float64)
    sims = consecutive_similarities(F)
    segments = []
    start = 0
    for i, s in enumerate(sims):
        if not s > tau:
            segments.append(_make_segment(F, start, i))
            start = i + 1
    segments.append(_make_segment(F, start, len(F) - 1))
    return segments


KEYFRAME_TIE_EPS = 1e-12


def select_keyframe(segment_features: Sequence) -> int:
    """Local index of the frame closest to the segment centroid (earliest on ties)."""
    if len(segment_features) == 0:
        raise ValueError("cannot select a keyframe from an empty segment")
    F = np.asarray(segment_features, dtype=np.float64)
    mu = F.mean(axis=0)
    dists = np.linalg.norm(F - mu, axis=1)
    # centroid distances that differ only by rounding count as ties
    lo = dists.min()
    return int(np.flatnonzero(dists <= lo + KEYFRAME_TIE_EPS * max(1.0, lo))[0])


@dataclass(frozen=True)
class Frame:
    feature: np.ndarray
    pose: Pose | None
    timestep: int


@dataclass(frozen=True)
class Keyframe:
    frame_index: int  # position in the history
    timestep: int
    feature: np.ndarray = field(compare=False)
    pose_at_capture: Pose | None
    segment: tuple[int, int]  # inclusive history range it summarises


@dataclass(frozen=True)
class MemoryConfig:
    """Tier thresholds and capacities.

    ``mode`` selects the ablation variant: ``selective`` uses the three
    thresholds, ``uniform`` forces ``tau_r`` on every tier, ``full`` keeps
    every frame and ``off`` keeps nothing.  A tier whose quota fills does so
    at a segment boundary: the segment being swept is always completed.
    """

    tau_r: float = 0.8
    tau_m: float = 0.73
    tau_d: float = 0.6
    n_recent: int = 15
    n_medium: int = 10
    mode: str = "selective"

    def __post_init__(self):
        if self.mode not in ("selective", "uniform", "full", "off"):
            raise MemoryConfigError(f"unknown memory mode {self.mode!r}")
        for t in (self.tau_r, self.tau_m, self.tau_d):
            if not 0.0 <= t <= 1.0:
                raise MemoryConfigError("thresholds must lie in [0, 1]")
        if not self.tau_d <= self.tau_m <= self.tau_r:
            raise MemoryConfigError("thresholds must satisfy tau_d <= tau_m <= tau_r")
        if self.n_recent < 1 or self.n_medium < 0:
            raise MemoryConfigError("need n_recent >= 1 and n_medium >= 0")

    @property
    def enabled(self) -> bool:
        return self.mode != "off"

    def thresholds(self) -> tuple[float, float, float]:
        if self.mode == "full":
            # cosine similarity is clipped to 1, so nothing ever exceeds it
            return (1.0, 1.0, 1.0)
        if self.mode == "uniform":
            return (self.tau_r, self.tau_r, self.tau_r)
        return (self.tau_r, self.tau_m, self.tau_d)


@dataclass(frozen=True)
class FoveationMemory:
    recent: tuple[Keyframe, ...] = ()
    medium: tuple[Keyframe, ...] = ()
    distant: tuple[Keyframe, ...] = ()
    thresholds: tuple[float, float, float] = (0.8, 0.73, 0.6)
    capacities: tuple[int, int] = (15, 10)
    segments: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.recent) + len(self.medium) + len(self.distant)


def _sweep(F, sims, end: int, tau: float, quota: int | None) -> tuple[list[tuple[int, int]], int]:
    """Backward segmentation from ``end``; returns segments (newest first) and next end."""
    out = []
    i = end
    while i >= 0 and (quota is None or len(out) < quota):
        start = i
        while start > 0 and sims[start - 1] > tau:
            start -= 1
        out.append((start, i))
        i = start - 1
    return out, i


def build_memory(history: Sequence, cfg: MemoryConfig | None = None) -> FoveationMemory:
    """Rebuild the tiered memory from scratch.

    ``history`` holds :class:`Frame` objects or ``(feature, pose, timestep)``
    tuples in temporal order.
    """
    cfg = cfg or MemoryConfig()
    frames = [h if isinstance(h, Frame) else Frame(np.asarray(h[0], dtype=np.float64), h[1], int(h[2])) for h in history]
    tau_r, tau_m, tau_d = cfg.thresholds()
    caps = (cfg.n_recent, cfg.n_medium)
    if not cfg.enabled or not frames:
        return FoveationMemory(thresholds=(tau_r, tau_m, tau_d), capacities=caps)
    F = np.asarray([f.feature for f in frames], dtype=np.float64)
    sims = consecutive_similarities(F)

    rec, i = _sweep(F, sims, len(F) - 1, tau_r, cfg.n_recent)
    med, i = _sweep(F, sims, i, tau_m, cfg.n_medium) if cfg.n_medium > 0 else ([], i)
    dist, _ = _sweep(F, sims, i, tau_d, None)

    def keyframes(spans):
        kfs = []
        for start, end in reversed(spans):
            k = start + select_keyframe(F[start : end + 1])
            fr = frames[k]
            kfs.append(Keyframe(k, fr.timestep, fr.feature, fr.pose, (start, end)))
        return tuple(kfs)

    return FoveationMemory(
        recent=keyframes(rec),
        medium=keyframes(med),
        distant=keyframes(dist),
        thresholds=(tau_r, tau_m, tau_d),
        capacities=caps,
        segments={"recent": sorted(rec), "medium": sorted(med), "distant": sorted(dist)},
    )


def memory_snapshot(memory: FoveationMemory) -> list[tuple[str, Keyframe]]:
    """Tier-labelled keyframes, distant first, in ascending time."""
    out = [("distant", k) for k in memory.distant]
    out += [("medium", k) for k in memory.medium]
    out += [("recent", k) for k in memory.recent]
    return out


def memory_summary(memory: FoveationMemory) -> dict:
    """JSON-ready summary used by the inspection CLI."""
    return {
        "segments": {tier: [list(s) for s in memory.segments.get(tier, [])] for tier in TIERS},
        "keyframes": {tier: [k.timestep for k in getattr(memory, tier)] for tier in TIERS},
        "total": len(memory),
    }


def history_from_features(features: Iterable, timesteps: Iterable[int] | None = None) -> list[Frame]:
    feats = [np.asarray(f, dtype=np.float64) for f in features]
    ts = list(timesteps) if timesteps is not None else list(range(len(feats)))
    return [Frame(f, None, t) for f, t in zip(feats, ts)]
