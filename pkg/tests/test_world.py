import json
import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmap.geometry import point_polyline_distance
from mgmap.world import (DataFormatError, DomainError, Vocab, WorldParams, ambiguous_objects, generate_scene,
                         geodesic_distance, geodesic_field, read_episodes, read_scene, sample_episode,
                         sample_episodes, write_episodes, write_scene)
from mgmap.world.io import scene_to_dict

from conftest import box_scene


def test_generation_is_deterministic(tmp_path):
    a, b = generate_scene(7), generate_scene(7)
    assert a == b
    write_scene(tmp_path / "a.json", a)
    write_scene(tmp_path / "b.json", b)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert generate_scene(8) != a


def _same_category_pairs_within(scene, radius):
    return [(i, j) for (i, a), (j, b) in combinations(enumerate(scene.objects), 2)
            if a.category_id == b.category_id and math.dist(a.center, b.center) < radius]


@pytest.mark.parametrize("seed", range(5))
def test_no_ambiguity_means_no_close_same_category_pairs(seed):
    scene = generate_scene(seed, WorldParams(ambiguity=0.0))
    assert _same_category_pairs_within(scene, 4.0) == []


@pytest.mark.parametrize("seed", range(5))
def test_ambiguity_fraction_met_by_exhaustive_pair_scan(seed):
    scene = generate_scene(seed, WorldParams(ambiguity=0.33, objects=12))
    flagged = set()
    for i, j in _same_category_pairs_within(scene, 4.0):
        if scene.objects[i].attributes != scene.objects[j].attributes:
            flagged |= {i, j}
    assert len(flagged) >= math.ceil(0.33 * 12)
    assert sorted(flagged) == ambiguous_objects(scene)


def test_objects_inside_bounds_and_categories_valid(scene0):
    xmin, ymin, xmax, ymax = scene0.bounds
    for o in scene0.objects:
        assert xmin < o.center[0] < xmax and ymin < o.center[1] < ymax
        assert 0 < o.category_id < scene0.n_categories
        assert len(o.attributes) == scene0.n_features
        assert all(0.0 <= a <= 1.0 for a in o.attributes)


def test_free_space_mostly_connected(scene0):
    assert scene0.grid.largest_component_fraction() >= 0.9


def test_geodesic_straight_line_in_empty_room():
    scene = box_scene()
    field = geodesic_field(scene, (5.0, 5.0))
    assert abs(field.at((8.0, 5.0)) - 3.0) <= 0.05
    assert abs(field.at((5.0, 8.0)) - 3.0) <= 0.05
    c = scene.grid.cell_of(np.array([5.0, 5.0]))
    assert field.values[c[0], c[1]] == 0.0


def test_geodesic_blocked_by_full_wall():
    scene = box_scene(walls=[(5.0, 0.0, 5.0, 10.0)])
    assert math.isinf(geodesic_distance(scene, (2.0, 5.0), (8.0, 5.0)))


def test_geodesic_source_in_obstacle_is_domain_error():
    from conftest import disc
    scene = box_scene(objects=[disc(5.0, 5.0, 1.0)])
    with pytest.raises(DomainError):
        geodesic_field(scene, (5.0, 5.0))


def test_geodesic_diagonal_cost():
    scene = box_scene()
    field = geodesic_field(scene, (2.0, 2.0))
    d = field.at((6.0, 6.0))
    assert abs(d - 4.0 * math.sqrt(2)) <= 0.1


@pytest.fixture(scope="module")
def scene1_cells():
    scene = generate_scene(1)
    cells = np.argwhere(scene.grid.largest_component())
    return scene, scene.grid.centers(cells), geodesic_field(scene, scene.grid.centers(cells[0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 9), st.integers(0, 10 ** 9))
def test_geodesic_triangle_property(scene1_cells, i, j):
    scene, centers, field = scene1_cells
    a, b = centers[i % len(centers)], centers[j % len(centers)]
    gab = geodesic_distance(scene, a, b)
    assert abs(field.at(a) - field.at(b)) <= gab + 2 * scene.grid.cell


def test_episode_determinism(scene0):
    assert sample_episode(scene0, 11) == sample_episode(scene0, 11)


def test_episode_invariants(scene0, episodes0):
    for ep in episodes0:
        path = ep.path_array
        assert tuple(path[0]) == (ep.start.x, ep.start.y)
        assert tuple(path[-1]) == tuple(ep.goal)
        g = geodesic_distance(scene0, ep.goal, ep.start.xy)
        assert 3.0 < g and 5.0 - 0.1 <= g <= 10.0 + 0.1
        # consecutive path points see each other; no point of the path is inside an obstacle (1 cm sampling)
        for a, b in zip(path[:-1], path[1:]):
            n = int(np.ceil(np.linalg.norm(b - a) / 0.01)) + 1
            pts = a + np.linspace(0, 1, n)[:, None] * (b - a)
            assert not scene0.in_obstacle(pts).any()


def test_landmarks_within_radius_by_dense_sampling(scene0, episodes0):
    for ep in episodes0:
        path = ep.path_array
        seg = np.diff(path, axis=0)
        dense = np.concatenate([a + np.linspace(0, 1, int(np.linalg.norm(s) / 0.001) + 2)[:, None] * s
                                for a, s in zip(path[:-1], seg)])
        assert 2 <= len(ep.landmarks) <= 4
        for k in ep.landmarks:
            c = np.asarray(scene0.objects[k].center)
            assert np.min(np.linalg.norm(dense - c, axis=1)) <= 1.5 + 1e-3
        ids = Vocab.build(scene0.n_categories).encode(ep.instruction_text)
        assert tuple(ids) == ep.instruction_tokens
        assert ep.instruction_text.startswith("go past the ") and " then stop near the " in ep.instruction_text


def test_vocab_bijective_with_padding():
    v = Vocab.build(8)
    assert v.tokens[0] == "<pad>"
    assert len(set(v.tokens)) == len(v.tokens)
    text = "go past the red wooden chair then stop near the blue metal table"
    assert v.decode(v.encode(text) + [0, 0]) == text
    with pytest.raises(ValueError):
        v.encode("go past the purple chair")


def test_episode_round_trip(tmp_path, scene0):
    eps = sample_episodes(scene0, 100, seed=3)
    path = tmp_path / "eps.jsonl"
    write_episodes(path, eps)
    assert read_episodes(path) == eps


def test_scene_round_trip(tmp_path, scene0):
    write_scene(tmp_path / "s.json", scene0)
    assert read_scene(tmp_path / "s.json") == scene0


def test_truncated_episode_line_named(tmp_path, episodes0):
    path = tmp_path / "eps.jsonl"
    write_episodes(path, episodes0)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][: len(lines[2]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match="line 3"):
        read_episodes(path)


def test_unknown_format_rejected(tmp_path, scene0):
    d = scene_to_dict(scene0)
    d["format"] = "v9"
    (tmp_path / "s.json").write_text(json.dumps(d))
    with pytest.raises(DataFormatError):
        read_scene(tmp_path / "s.json")
