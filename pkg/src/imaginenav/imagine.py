"""Imagined observations at predicted waypoints.

The oracle renderer simply ray casts the true world at the waypoint.  The
degraded renderer corrupts that view the way a synthesis model might:
hallucinated classes and jittered depth, drawn from a seeded stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .percept import N_VIEWS, VIEW_OFFSETS
from .where2imagine import RelativeWaypoint, body_to_world
from .world import (
    DEFAULT_MAX_RANGE,
    DEFAULT_RAYS,
    FLOOR,
    GridWorld,
    Pose,
    ViewObservation,
    nearest_free_cell,
    raycast_view,
)

FIXED_RADIUS = 2.0
MODES = ("oracle", "degraded")


@dataclass(frozen=True)
class DegradeParams:
    p_swap: float = 0.15
    depth_jitter: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_swap <= 1.0:
            raise ValueError("p_swap must lie in [0, 1]")
        if not 0.0 <= self.depth_jitter < 1.0:
            raise ValueError("depth_jitter must lie in [0, 1)")


@dataclass(frozen=True)
class ImaginedView:
    view: ViewObservation
    source_waypoint: RelativeWaypoint
    mode: str
    realized_pose: Pose
    seed: int | None = None


def waypoint_to_pose(world: GridWorld | None, pose: Pose, waypoint: RelativeWaypoint) -> Pose:
    """World pose of ``waypoint``; blocked landings snap to the nearest free cell."""
    vals = (waypoint.dx, waypoint.dy, waypoint.dtheta)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("waypoint must be finite")
    target = body_to_world(pose, waypoint)
    if world is None:
        return target
    cell = world.cell_of(target.x, target.y)
    if world.is_free(cell):
        return target
    cx, cy = world.cell_center(nearest_free_cell(world, (target.x, target.y)))
    return Pose(cx, cy, target.theta)


def degrade_view(view: ViewObservation, n_classes: int, params: DegradeParams, seed: int) -> ViewObservation:
    """Per-ray class swaps and multiplicative depth noise from a seeded stream.

    For every ray, in order, the stream yields one uniform for the swap
    decision, one integer for the replacement class and one uniform for the
    depth factor.
    """
    rng = np.random.default_rng(seed)
    depths, classes = [], []
    for d, c in zip(view.depths, view.classes):
        choices = [k for k in range(FLOOR, n_classes) if k != c]
        swap = rng.random() < params.p_swap
        pick = int(rng.integers(len(choices)))
        eps = (2.0 * rng.random() - 1.0) * params.depth_jitter
        if swap:
            c = choices[pick]
        d = min(view.max_range, max(1e-9, d * (1.0 + eps)))
        depths.append(d)
        classes.append(c)
    return ViewObservation(tuple(depths), tuple(classes), view.heading, view.timestep, view.max_range,
                           view.resolution)


def imagine_view(world: GridWorld, pose: Pose, waypoint: RelativeWaypoint, mode: str = "oracle",
                 noise: DegradeParams | None = None, seed: int = 0, n_rays: int = DEFAULT_RAYS,
                 max_range: float = DEFAULT_MAX_RANGE, timestep: int = 0) -> ImaginedView:
    if mode not in MODES:
        raise ValueError(f"unknown imagine mode {mode!r}")
    realized = waypoint_to_pose(world, pose, waypoint)
    view = raycast_view(world, realized, 0.0, n_rays=n_rays, max_range=max_range, timestep=timestep)
    if mode == "degraded":
        view = degrade_view(view, world.n_classes, noise or DegradeParams(), seed)
    return ImaginedView(view, waypoint, mode, realized, seed if mode == "degraded" else None)


def fixed_radius_waypoints(pose: Pose | None = None, radius: float = FIXED_RADIUS) -> list[RelativeWaypoint]:
    """Six waypoints ``radius`` metres out, one per panorama sector, facing outward."""
    out = []
    for off in VIEW_OFFSETS:
        out.append(RelativeWaypoint(-radius * math.sin(off), radius * math.cos(off), off))
    assert len(out) == N_VIEWS
    return out
