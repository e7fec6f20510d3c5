import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imaginenav.memory import cosine_similarity
from imaginenav.percept import (
    N_VIEWS,
    VIEW_OFFSETS,
    capture_panorama,
    encode_view,
    feature_dim,
    mean_depth,
    read_embeddings,
    write_embeddings,
)
from imaginenav.world import Pose, ViewObservation, world_from_ascii

NC = 8


def view(depths, classes, heading=0.0):
    return ViewObservation(tuple(depths), tuple(classes), heading)


@st.composite
def views(draw, min_rays=1):
    n = draw(st.integers(min_rays, 40))
    depths = draw(st.lists(st.floats(0.01, 5.0), min_size=n, max_size=n))
    classes = draw(st.lists(st.integers(0, NC - 1), min_size=n, max_size=n))
    return view(depths, classes)


def test_panorama_has_six_views_at_fixed_offsets(small_world):
    pose = Pose(*small_world.cell_center(small_world.free_cells()[0]), 0.0)
    pano = capture_panorama(small_world, pose)
    assert len(pano.views) == N_VIEWS
    assert VIEW_OFFSETS == pytest.approx(tuple(k * math.pi / 3 for k in range(6)), abs=1e-12)
    assert [v.heading for v in pano.views] == pytest.approx(list(VIEW_OFFSETS))
    assert pano == capture_panorama(small_world, pose)


def test_rotation_by_sixty_degrees_shifts_views():
    # slot k of the rotated panorama looks where slot k+1 of the original does
    w = world_from_ascii(["#" * 15] + ["#" + "." * 13 + "#"] * 13 + ["#" * 15])
    p = Pose(*w.cell_center((7, 7)), 0.0)
    base = capture_panorama(w, p)
    rotated = capture_panorama(w, Pose(p.x, p.y, math.pi / 3))
    for k in range(6):
        assert rotated.views[k].depths == base.views[(k + 1) % 6].depths
        assert rotated.views[k].classes == base.views[(k + 1) % 6].classes


def test_max_range_view_encoding():
    v = view([5.0] * 10, [0] * 10)
    f = encode_view(v, NC)
    raw_hist = np.zeros(NC)
    raw_hist[0] = 1 / 5.0
    raw = np.concatenate([raw_hist, [5.0, 5.0, 5.0, 1.0]])
    np.testing.assert_allclose(f, raw / np.linalg.norm(raw), rtol=0, atol=1e-12)
    assert np.count_nonzero(f[:NC]) == 1


def test_distinct_single_class_views_separate():
    a = encode_view(view([1.0] * 16, [1] * 16), NC)
    b = encode_view(view([1.0] * 16, [2] * 16), NC)
    # by hand: raw = e_k + [1, 1, 1, 0] in the tail, so cos = 3 / 4
    assert cosine_similarity(a, b) == pytest.approx(0.75)
    assert cosine_similarity(a, b) < 0.9


def test_empty_view_is_zero_sentinel():
    f = encode_view(view([], []), NC)
    assert f.shape == (feature_dim(NC),) and not f.any()


def test_out_of_range_class_rejected():
    with pytest.raises(ValueError):
        encode_view(view([1.0], [NC]), NC)


@given(views())
def test_encoder_is_unit_norm_and_pure(v):
    f = encode_view(v, NC)
    assert abs(np.linalg.norm(f) - 1.0) < 1e-9
    assert np.array_equal(f, encode_view(v, NC))


@given(views(), st.randoms(use_true_random=False))
def test_ray_permutation_invariance(v, rnd):
    order = list(range(len(v)))
    rnd.shuffle(order)
    w = view([v.depths[i] for i in order], [v.classes[i] for i in order])
    np.testing.assert_array_equal(encode_view(v, NC), encode_view(w, NC))


def test_mean_depth_examples():
    assert mean_depth(view([0.2] * 4, [1] * 4)) == pytest.approx(0.2)
    assert mean_depth(view([1.0, 3.0], [1, 1])) == 2.0
    assert mean_depth(view([5.0] * 7, [0] * 7)) == 5.0


def test_embedding_dump_round_trip(tmp_path):
    recs = [(t, 0.5 * t, np.arange(feature_dim(NC)) / (t + 1)) for t in range(4)]
    path = tmp_path / "emb.jsonl"
    write_embeddings(path, recs)
    back = list(read_embeddings(path))
    assert [(t, h) for t, h, _ in back] == [(t, h) for t, h, _ in recs]
    for (_, _, a), (_, _, b) in zip(back, recs):
        np.testing.assert_array_equal(a, b)
