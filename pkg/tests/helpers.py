"""Independent reference implementations and synthetic data for the tests."""

import math

import numpy as np


def ref_cos(a, b) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return max(-1.0, min(1.0, sum(x * y for x, y in zip(a, b)) / (na * nb)))


def ref_segments(features, tau):
    """Explicit loop over break points: a pair with similarity <= tau splits."""
    n = len(features)
    if n == 0:
        return []
    breaks = [i for i in range(n - 1) if not ref_cos(features[i], features[i + 1]) > tau]
    segs, start = [], 0
    for b in breaks:
        segs.append(list(range(start, b + 1)))
        start = b + 1
    segs.append(list(range(start, n)))
    return segs


def ref_keyframe(features) -> int:
    m = len(features)
    dim = len(features[0])
    mu = [sum(f[k] for f in features) / m for k in range(dim)]
    best, best_d = 0, None
    for j, f in enumerate(features):
        d = math.sqrt(sum((f[k] - mu[k]) ** 2 for k in range(dim)))
        if best_d is None or d < best_d - 1e-12 * max(1.0, best_d):
            best, best_d = j, d
    return best


def ref_tiers(features, taus, caps):
    """Backward tier sweep written as a plain list walk.

    Returns {tier: [(start, end), ...]} in ascending time.
    """
    sims = [ref_cos(features[i], features[i + 1]) for i in range(len(features) - 1)]
    end = len(features) - 1
    out = {}
    for tier, tau, cap in zip(("recent", "medium", "distant"), taus, caps):
        segs = []
        while end >= 0 and (cap is None or len(segs) < cap):
            start = end
            while start > 0 and sims[start - 1] > tau:
                start -= 1
            segs.append((start, end))
            end = start - 1
        out[tier] = sorted(segs)
    return out


def room_trajectory(rng: np.random.Generator, n: int = 500, dim: int = 16, sigma: float = 0.1,
                    dwell=(10, 60)) -> np.ndarray:
    """Frames that dwell in one "room" at a time, jittering around its prototype."""
    frames = []
    while len(frames) < n:
        proto = rng.normal(size=dim)
        proto /= np.linalg.norm(proto)
        for _ in range(int(rng.integers(*dwell))):
            f = proto + sigma * rng.normal(size=dim)
            frames.append(f / np.linalg.norm(f))
    return np.asarray(frames[:n])


def ref_encode(depths, classes, n_classes, max_range=5.0, resolution=0.25):
    """Direct transcription of the encoder layout, in plain Python."""
    n = len(depths)
    raw = [0.0] * (n_classes + 4)
    for d, c in zip(depths, classes):
        raw[c] += 1.0 / max(d, resolution) / n
    raw[n_classes] = sum(depths) / n
    raw[n_classes + 1] = min(depths)
    raw[n_classes + 2] = max(depths)
    raw[n_classes + 3] = sum(1 for d in depths if d >= max_range) / n
    norm = math.sqrt(sum(v * v for v in raw))
    return [v / norm for v in raw]
