"""Discrete action kinematics and the replanning point-goal controller."""

from __future__ import annotations

import enum
import math

from .world import HEADING_STEP, Cell, GridWorld, Pose, nearest_free_cell, normalize_angle

STEP_LENGTH = 0.25
DEFAULT_BUDGET = 40

# exact unit vectors for the four axis headings keep cell-centred poses exact
_AXIS = {0: (1.0, 0.0), 3: (0.0, 1.0), 6: (-1.0, 0.0), 9: (0.0, -1.0)}


class Action(str, enum.Enum):
    STOP = "Stop"
    MOVE_AHEAD = "MoveAhead"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"


def heading_vector(theta: float) -> tuple[float, float]:
    k = round(theta / HEADING_STEP)
    if k * HEADING_STEP == theta and k % 12 in _AXIS:
        return _AXIS[k % 12]
    return (math.cos(theta), math.sin(theta))


def apply_action(world: GridWorld, pose: Pose, action: Action) -> tuple[Pose, bool]:
    """Advance one step; a blocked MoveAhead leaves the pose unchanged."""
    action = Action(action)
    if action is Action.MOVE_AHEAD:
        ux, uy = heading_vector(pose.theta)
        nx, ny = pose.x + STEP_LENGTH * ux, pose.y + STEP_LENGTH * uy
        if not world.is_free(world.cell_of(nx, ny)):
            return pose, True
        return Pose(nx, ny, pose.theta), False
    if action is Action.TURN_LEFT:
        return Pose(pose.x, pose.y, normalize_angle(pose.theta + HEADING_STEP)), False
    if action is Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, normalize_angle(pose.theta - HEADING_STEP)), False
    return pose, False


def _wrap(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


_NEIGHBOURS = (((1, 0), 0.0), ((0, 1), math.pi / 2), ((-1, 0), math.pi), ((0, -1), 1.5 * math.pi))


def plan_to_cell(world: GridWorld, pose: Pose, target: Cell, budget: int,
                 prefer_doors: bool = False) -> tuple[list[Action], list[Pose], bool]:
    """Greedy descent of the target's distance field, replanned every step.

    Returns the actions, the pose after each action and whether the target
    cell was reached.
    """
    field = world.distance_field([target])
    doors = world.door_cells() if prefer_doors else frozenset()
    actions: list[Action] = []
    poses: list[Pose] = []
    p = pose
    while True:
        c = world.cell_of(p.x, p.y)
        if c == target:
            return actions, poses, True
        if len(actions) >= budget:
            return actions, poses, False
        d = field[c[1], c[0]] if world.in_bounds(c) else -1
        if d < 0:
            return actions, poses, False
        best = None
        for (dx, dy), heading in _NEIGHBOURS:
            n = (c[0] + dx, c[1] + dy)
            if world.in_bounds(n) and field[n[1], n[0]] == d - 1:
                rank = (0 if n in doors else 1, abs(_wrap(heading - p.theta)))
                if best is None or rank < best[0]:
                    best = (rank, heading)
        diff = _wrap(best[1] - p.theta)
        if abs(diff) < HEADING_STEP / 2:
            a = Action.MOVE_AHEAD
        elif diff > 0:
            a = Action.TURN_LEFT
        else:
            a = Action.TURN_RIGHT
        p, blocked = apply_action(world, p, a)
        actions.append(a)
        poses.append(p)
        if blocked:
            return actions, poses, False


def point_goal_controller(world: GridWorld, pose: Pose, target: Pose,
                          budget: int = DEFAULT_BUDGET) -> tuple[list[Action], bool]:
    """Actions driving ``pose`` into the cell of ``target`` within ``budget`` steps."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cell = world.cell_of(target.x, target.y)
    if not world.is_free(cell):
        cell = nearest_free_cell(world, (target.x, target.y))
    actions, _, reached = plan_to_cell(world, pose, cell, budget)
    return actions, reached
