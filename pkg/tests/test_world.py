import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imaginenav.world import (
    FLOOR,
    WALL,
    GridWorld,
    Pose,
    WorldGenerationError,
    WorldParams,
    generate_world,
    geodesic_distance,
    nearest_free_cell,
    normalize_angle,
    ray_angles,
    raycast_view,
    world_from_ascii,
)

CORRIDOR = ["#" * 24, "#" + "." * 22 + "#", "#" * 24]


def test_generation_is_deterministic():
    p = WorldParams()
    a, b = generate_world(1, p), generate_world(1, p)
    assert a == b
    assert a.to_json() == b.to_json()


def test_different_seeds_differ():
    assert not np.array_equal(generate_world(1).occupancy, generate_world(2).occupancy)


@pytest.mark.parametrize("kw", [{"rooms": 0}, {"rooms": 1}, {"width": 8}, {"n_classes": 4},
                                {"objects_per_room": 500}])
def test_bad_params_raise(kw):
    with pytest.raises((WorldGenerationError, ValueError)):
        generate_world(1, WorldParams(**kw))


@pytest.mark.parametrize("seed", range(8))
def test_generated_world_invariants(seed):
    w = generate_world(seed)
    assert w.resolution > 0
    blocked = w.occupancy
    assert np.all(w.semantics[blocked] == WALL)
    assert np.all(w.semantics[~blocked] != WALL)
    cells = w.goal_spec.goal_cells
    assert all(w.is_free(c) for c in cells)
    assert all(w.semantics[c[1], c[0]] == w.goal_spec.category_id for c in cells)
    # every free cell is reachable from the goal: one connected free region
    field = w.distance_field(cells)
    assert np.all(field[~blocked] >= 0)


def test_instance_goal_has_reference_view():
    w = generate_world(3, WorldParams(goal_kind="instance"))
    gs = w.goal_spec
    assert gs.kind == "instance" and gs.instance_view is not None
    assert any(c == gs.category_id for c in gs.instance_view.classes)


def test_json_round_trip_is_byte_stable():
    w = generate_world(4, WorldParams(goal_kind="instance"))
    text = w.to_json()
    w2 = GridWorld.from_json(text)
    assert w2 == w and w2.to_json() == text
    doc = json.loads(text)
    for key in ("version", "seed", "resolution", "width", "height", "occupancy", "semantics", "goal_spec"):
        assert key in doc
    assert set(doc["occupancy"]) <= {"0", "1"}
    assert len(doc["occupancy"]) == w.width * w.height


def test_geodesic_simple_cases(room):
    assert geodesic_distance(room, (1, 1), (2, 1)) == pytest.approx(0.25)
    assert geodesic_distance(room, (3, 3), (3, 3)) == 0.0


def test_geodesic_l_corridor():
    w = world_from_ascii(["####", "#..#", "##.#", "####"])
    # (1,2) -> (2,2) -> (2,1)
    assert geodesic_distance(w, (1, 2), (2, 1)) == pytest.approx(0.5)


def test_geodesic_unreachable():
    w = world_from_ascii(["#####", "#.#.#", "#####"])
    assert geodesic_distance(w, (1, 1), (3, 1)) == math.inf
    assert geodesic_distance(w, (1, 1), (2, 1)) == math.inf
    with pytest.raises(ValueError):
        geodesic_distance(w, (1, 1), (9, 9))


@given(st.data())
def test_geodesic_symmetry_and_triangle(small_world, data):
    free = small_world.free_cells()
    idx = st.integers(0, len(free) - 1)
    a, b, c = (free[data.draw(idx)] for _ in range(3))
    ab = geodesic_distance(small_world, a, b)
    assert ab == geodesic_distance(small_world, b, a)
    assert (ab == 0.0) == (a == b)
    assert geodesic_distance(small_world, a, c) <= ab + geodesic_distance(small_world, b, c) + 1e-12


def test_ray_hits_flat_wall_at_one_metre():
    w = world_from_ascii(CORRIDOR)
    # agent centred in cell 1 facing +x; the wall cell 23 starts at x = 23 * 0.25
    x = 5.75 - 1.0
    view = raycast_view(w, Pose(x, 0.375, 0.0), n_rays=33)
    centre = view.depths[16]
    assert abs(centre - 1.0) <= w.resolution / 2
    assert view.classes[16] == WALL


def test_open_corridor_clamps_to_max_range():
    w = world_from_ascii(["#" * 40, "#" + "." * 38 + "#", "#" * 40])
    view = raycast_view(w, Pose(0.375, 0.375, 0.0), n_rays=33)
    assert view.depths[16] == 5.0
    assert view.classes[16] == WALL


def test_raycast_deterministic(small_world):
    p = Pose(*small_world.cell_center(small_world.free_cells()[10]), 0.5)
    assert raycast_view(small_world, p) == raycast_view(small_world, p)


@given(st.data())
def test_rays_never_pass_through_blocked_cells(small_world, data):
    free = small_world.free_cells()
    c = free[data.draw(st.integers(0, len(free) - 1))]
    theta = data.draw(st.floats(0, 2 * math.pi, exclude_max=True))
    pose = Pose(*small_world.cell_center(c), theta)
    view = raycast_view(small_world, pose)
    for angle, d in zip(ray_angles(view.heading, len(view)), view.depths):
        assert 0 < d <= view.max_range
        # re-walk the ray in small increments up to just short of the hit
        for t in np.linspace(0.0, d - 1e-6, 200):
            cell = small_world.cell_of(pose.x + t * math.cos(angle), pose.y + t * math.sin(angle))
            assert small_world.in_bounds(cell)
            assert not small_world.occupancy[cell[1], cell[0]]


def test_view_spans_sixty_degrees():
    angles = ray_angles(1.0, 32)
    assert angles[-1] - angles[0] == pytest.approx(math.pi / 3 * 31 / 32)
    assert np.mean(angles) == pytest.approx(1.0)


def test_nearest_free_cell_cases():
    w = world_from_ascii(["###", "#.#", "###"])
    assert nearest_free_cell(w, (0.375, 0.375)) == (1, 1)
    # centre of blocked (0,1) whose only free neighbour is (1,1)
    assert nearest_free_cell(w, (0.125, 0.375)) == (1, 1)
    two = world_from_ascii(["####", "#..#", "####"])
    # exactly between (1,1) and (2,1): row-major first is (1,1)
    assert nearest_free_cell(two, (0.5, 0.375)) == (1, 1)
    vertical = world_from_ascii(["###", "#.#", "#.#", "###"])
    # between (1,1) and (1,2): row index 1 comes first
    assert nearest_free_cell(vertical, (0.375, 0.5)) == (1, 1)
    with pytest.raises(ValueError):
        nearest_free_cell(world_from_ascii(["##", "##"]), (0.1, 0.1))


def test_normalize_angle_snaps_to_lattice():
    assert normalize_angle(-math.pi / 6) == 11 * math.pi / 6
    assert normalize_angle(2 * math.pi) == 0.0
    assert 0.0 <= normalize_angle(-1e-20) < 2 * math.pi


def test_ascii_fixture_classes():
    w = world_from_ascii(["#3.", "..."])
    assert w.semantics[1, 1] == 3 and w.semantics[0, 0] == FLOOR and w.is_free((1, 1))
