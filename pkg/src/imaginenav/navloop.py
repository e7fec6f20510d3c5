"""The episode loop: imagine, select, navigate, repeat.

Each planning cycle captures a panorama, predicts (or fixes) six waypoints,
renders the imagined views there, asks the planner for one of them and
hands the chosen pose to the point-goal controller.  On arrival the agent
turns to the waypoint heading with whatever budget is left.  A new cycle
starts when the controller arrives or exhausts its budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .control import DEFAULT_BUDGET, STEP_LENGTH, Action, apply_action, point_goal_controller
from .imagine import DegradeParams, fixed_radius_waypoints, imagine_view, waypoint_to_pose
from .memory import Frame, MemoryConfig, build_memory, memory_snapshot
from .percept import N_VIEWS, Panorama, capture_panorama, encode_view
from .planner import (
    DEFAULT_TIE_TOL,
    EndpointConfig,
    PlannerConfigError,
    PlannerDecision,
    RemotePlanner,
    Telemetry,
    build_prompt,
    choose_heuristic,
    choose_random,
    goal_descriptor,
)
from .where2imagine import Regressor, RelativeWaypoint, predict_waypoint
from .world import HEADING_STEP, GridWorld, Pose, ViewObservation, raycast_view

__all__ = [
    "Action",
    "apply_action",
    "point_goal_controller",
    "check_success",
    "Components",
    "EpisodeConfig",
    "EpisodeResult",
    "run_episode",
    "ComponentConfigError",
]

PLANNERS = ("heuristic", "remote", "random", "oracle")


class ComponentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Components:
    imagination: bool = True
    where2imagine: bool = True
    imagine_mode: str | None = "oracle"
    memory: MemoryConfig = MemoryConfig()
    planner: str = "heuristic"
    degrade: DegradeParams = DegradeParams()
    lam: float = 0.3
    tie_tol: float = DEFAULT_TIE_TOL
    endpoint: EndpointConfig | None = None

    def validate(self, regressor: Regressor | None = None, check_regressor: bool = True) -> None:
        if self.planner not in PLANNERS:
            raise ComponentConfigError(f"unknown planner {self.planner!r}")
        if not self.imagination:
            if self.imagine_mode is not None:
                raise ComponentConfigError("imagine_mode must be unset when imagination is off")
            if self.where2imagine:
                raise ComponentConfigError("where2imagine requires imagination")
        elif self.imagine_mode not in ("oracle", "degraded"):
            raise ComponentConfigError(f"imagine_mode must be oracle or degraded, got {self.imagine_mode!r}")
        if check_regressor and self.where2imagine and regressor is None:
            raise ComponentConfigError("where2imagine needs a trained regressor")
        if self.planner == "remote" and (self.endpoint is None or not self.endpoint.base_url):
            raise PlannerConfigError("remote planner needs an endpoint")

    def to_dict(self) -> dict:
        return {
            "imagination": self.imagination,
            "where2imagine": self.where2imagine,
            "imagine_mode": self.imagine_mode,
            "memory": self.memory.__dict__.copy(),
            "planner": self.planner,
            "degrade": self.degrade.__dict__.copy(),
            "lam": self.lam,
            "tie_tol": self.tie_tol,
        }

    @classmethod
    def from_dict(cls, d: dict, endpoint: EndpointConfig | None = None) -> "Components":
        return cls(
            imagination=bool(d["imagination"]),
            where2imagine=bool(d["where2imagine"]),
            imagine_mode=d["imagine_mode"],
            memory=MemoryConfig(**d["memory"]),
            planner=d["planner"],
            degrade=DegradeParams(**d["degrade"]),
            lam=float(d["lam"]),
            tie_tol=float(d.get("tie_tol", DEFAULT_TIE_TOL)),
            endpoint=endpoint,
        )


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 500
    budget: int = DEFAULT_BUDGET
    success_distance: float = 1.0
    n_rays: int = 32
    max_range: float = 5.0
    fixed_radius: float = 2.0
    min_start_distance: float = 3.0


@dataclass
class EpisodeResult:
    success: int
    path_length: float
    shortest_length: float
    steps: int
    trace: list[dict]
    final_memory_size: int = 0
    cycles: int = 0
    telemetry: Telemetry = field(default_factory=Telemetry)
    seed: int = 0

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


def _goal_visible(world: GridWorld, pano: Panorama) -> bool:
    cat = world.goal_spec.category_id
    return any(c == cat for v in pano.views for c in v.classes)


def check_success(world: GridWorld, pose: Pose, goal=None, threshold: float = 1.0,
                  panorama: Panorama | None = None) -> bool:
    """Strictly within ``threshold`` geodesic metres of a goal cell, with the goal in sight."""
    if goal is not None and goal is not world.goal_spec:
        world = _with_goal(world, goal)
    if not world.goal_distance(world.cell_of(pose.x, pose.y)) < threshold:
        return False
    pano = panorama if panorama is not None else capture_panorama(world, pose)
    return _goal_visible(world, pano)


def shortest_success_path(world: GridWorld, cell, threshold: float = 1.0) -> float:
    """Geodesic metres from ``cell`` to the nearest cell inside the success radius."""
    d = world.goal_distance(cell)
    if not math.isfinite(d):
        return d
    # the success region is every cell fewer than ``inner`` steps from a goal cell
    inner = math.ceil(threshold / world.resolution - 1e-9)
    steps = round(d / world.resolution)
    return max(0, steps - inner + 1) * world.resolution


def _with_goal(world: GridWorld, goal) -> GridWorld:
    return GridWorld(world.occupancy, world.semantics, goal, world.resolution, world.rng_seed, world.n_classes)


def sample_start(world: GridWorld, rng: np.random.Generator, min_distance: float) -> Pose:
    """Random free floor cell at least ``min_distance`` from the goal, lattice heading."""
    cand = [c for c in world.free_cells()
            if math.isfinite(world.goal_distance(c)) and world.goal_distance(c) >= min_distance]
    if not cand:
        cand = [c for c in world.free_cells() if math.isfinite(world.goal_distance(c))]
    cell = cand[int(rng.integers(len(cand)))]
    x, y = world.cell_center(cell)
    return Pose(x, y, int(rng.integers(12)) * (math.pi / 6))


def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _pose_rec(p: Pose) -> list[float]:
    return [p.x, p.y, p.theta]


def run_episode(world: GridWorld, components: Components, config: EpisodeConfig | None = None,
                seed: int = 0, regressor: Regressor | None = None, start: Pose | None = None,
                remote_factory: Callable[[EndpointConfig], RemotePlanner] | None = None,
                meta: dict | None = None) -> EpisodeResult:
    """Run one episode; ``meta`` is copied verbatim into the trace header."""
    config = config or EpisodeConfig()
    components.validate(regressor)
    if world.goal_spec is None:
        raise ComponentConfigError("world has no goal")
    nc = world.n_classes
    goal = goal_descriptor(world.goal_spec, nc)
    rng_start = np.random.default_rng(_sub_seed(seed, 0))
    rng_plan = np.random.default_rng(_sub_seed(seed, 1))
    pose = start if start is not None else sample_start(world, rng_start, config.min_start_distance)
    if not world.pose_valid(pose):
        raise ComponentConfigError("start pose is not on a free cell")
    remote = None
    if components.planner == "remote":
        remote = (remote_factory or RemotePlanner)(components.endpoint)

    shortest = shortest_success_path(world, world.cell_of(pose.x, pose.y), config.success_distance)
    trace: list[dict] = [{
        "type": "episode", "seed": seed, "world_seed": world.rng_seed,
        "start": _pose_rec(pose), "components": components.to_dict(),
        "config": config.__dict__.copy(),
    }]
    if meta is not None:
        trace[0]["meta"] = meta
    history: list[Frame] = []
    track_memory = components.memory.enabled

    def observe(step: int) -> None:
        if track_memory:
            v = raycast_view(world, pose, 0.0, config.n_rays, config.max_range, step)
            history.append(Frame(encode_view(v, nc), pose, step))

    def near_goal() -> bool:
        return world.goal_distance(world.cell_of(pose.x, pose.y)) < config.success_distance

    def succeeded(pano: Panorama | None = None) -> bool:
        if not near_goal():
            return False
        pano = pano or capture_panorama(world, pose, steps, config.n_rays, config.max_range)
        return _goal_visible(world, pano)

    steps = 0
    path = 0.0
    cycle = 0
    success = 0
    observe(0)
    try:
        while steps < config.max_steps:
            pano = capture_panorama(world, pose, steps, config.n_rays, config.max_range)
            if succeeded(pano):
                steps += 1
                trace.append({"type": "step", "step": steps, "pose": _pose_rec(pose),
                              "action": Action.STOP.value, "blocked": False})
                success = 1
                break
            snapshot = memory_snapshot(build_memory(history, components.memory)) if track_memory else []
            waypoints, targets, views, seeds = _candidates(world, pose, pano, components, config,
                                                           regressor, seed, cycle, steps)
            decision = _decide(components, world, goal, snapshot, views, targets, rng_plan, remote, nc)
            target = targets[decision.choice - 1]
            actions, reached = point_goal_controller(world, pose, target, config.budget)
            if reached:
                actions = actions + _face(pose, actions, target.theta, config.budget - len(actions))
            if not actions:
                # a candidate at the current cell would otherwise stall the clock
                actions = [Action.TURN_LEFT]
            trace.append({
                "type": "cycle", "cycle": cycle, "step": steps,
                "waypoints": [[w.dx, w.dy, w.dtheta] for w in waypoints],
                "targets": [_pose_rec(t) for t in targets],
                "imagined_seeds": seeds,
                "decision": {"choice": decision.choice, "reason": decision.reason},
                "source": decision.source, "planned_actions": len(actions), "reached": reached,
            })
            cycle += 1
            for a in actions:
                if steps >= config.max_steps:
                    break
                pose2, blocked = apply_action(world, pose, a)
                if a is Action.MOVE_AHEAD and not blocked:
                    path += STEP_LENGTH
                pose = pose2
                steps += 1
                trace.append({"type": "step", "step": steps, "pose": _pose_rec(pose),
                              "action": a.value, "blocked": blocked})
                observe(steps)
                if steps < config.max_steps and succeeded():
                    steps += 1
                    trace.append({"type": "step", "step": steps, "pose": _pose_rec(pose),
                                  "action": Action.STOP.value, "blocked": False})
                    success = 1
                    break
            if success:
                break
    finally:
        if remote is not None:
            remote.close()

    final_mem = len(build_memory(history, components.memory)) if track_memory else 0
    telemetry = remote.telemetry if remote is not None else Telemetry()
    trace.append({"type": "result", "success": success, "path_length": path,
                  "shortest_length": shortest, "steps": steps, "memory_size": final_mem,
                  "cycles": cycle})
    return EpisodeResult(success, path, shortest, steps, trace, final_mem, cycle, telemetry, seed)


def _candidates(world, pose, pano, components: Components, config: EpisodeConfig,
                regressor, seed, cycle, step):
    """Six (waypoint, realised pose, view, seed) candidates for one cycle."""
    if not components.imagination:
        wp = RelativeWaypoint(0.0, config.fixed_radius, 0.0)
        waypoints = [wp] * N_VIEWS
        targets = [waypoint_to_pose(world, Pose(pose.x, pose.y, v.heading), wp) for v in pano.views]
        return waypoints, targets, list(pano.views), [None] * N_VIEWS
    if components.where2imagine:
        bases = [Pose(pose.x, pose.y, v.heading) for v in pano.views]
        waypoints = [predict_waypoint(regressor, encode_view(v, world.n_classes)) for v in pano.views]
    else:
        bases = [pose] * N_VIEWS
        waypoints = fixed_radius_waypoints(pose, config.fixed_radius)
    seeds = [_sub_seed(seed, 2, cycle, i) for i in range(N_VIEWS)]
    imagined = [imagine_view(world, b, w, components.imagine_mode, components.degrade, s,
                             config.n_rays, config.max_range, step)
                for b, w, s in zip(bases, waypoints, seeds)]
    return waypoints, [iv.realized_pose for iv in imagined], imagined, \
        (seeds if components.imagine_mode == "degraded" else [None] * N_VIEWS)


def _face(pose: Pose, actions: list[Action], heading: float, room: int) -> list[Action]:
    """Turns that bring the post-``actions`` heading onto the lattice step nearest ``heading``."""
    k = round(pose.theta / HEADING_STEP)
    for a in actions:
        k += 1 if a is Action.TURN_LEFT else -1 if a is Action.TURN_RIGHT else 0
    d = (round(heading / HEADING_STEP) - k) % 12
    turns = [Action.TURN_LEFT] * d if d <= 6 else [Action.TURN_RIGHT] * (12 - d)
    return turns[:max(room, 0)]


def choose_geodesic(world: GridWorld, targets) -> PlannerDecision:
    """Cheating planner: the candidate closest to the goal by geodesic distance."""
    d = [world.goal_distance(world.cell_of(t.x, t.y)) for t in targets]
    best = min(range(len(d)), key=lambda i: (d[i], i))
    return PlannerDecision(best + 1, f"geodesic {d[best]:.2f} m", "oracle")


def _decide(components: Components, world, goal, snapshot, views, targets, rng, remote, nc) -> PlannerDecision:
    if components.planner == "random":
        return choose_random(rng)
    if components.planner == "oracle":
        return choose_geodesic(world, targets)

    def heuristic() -> PlannerDecision:
        return choose_heuristic(views, goal, snapshot, components.lam, nc, components.tie_tol)

    if components.planner == "remote":
        return remote.decide(build_prompt(goal, snapshot, views, nc), heuristic)
    return heuristic()


def replay_matches(result: EpisodeResult, trace_text: str) -> bool:
    return result.trace_jsonl() == trace_text
