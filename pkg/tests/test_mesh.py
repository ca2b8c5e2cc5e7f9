"""Mesh construction, queries and quality metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmaop.errors import DegenerateSimplexError, InputError
from dmaop.mesh import (
    Mesh,
    barycentric_coordinates,
    load_mesh,
    locate,
    quality,
    save_mesh,
    simplex_volume,
    triangulate_polygon,
)

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


def shoelace(pts):
    """Independent polygon-area oracle."""
    x, y = np.asarray(pts, dtype=float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_unit_square_coarsest_mesh_has_two_triangles():
    mesh = triangulate_polygon(UNIT_SQUARE, 1.0)
    assert mesh.num_simplices == 2
    assert mesh.num_vertices == 4


def test_unit_square_h_half_has_eighteen_triangles():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    assert mesh.num_simplices == 18


def test_triangle_volumes_match_shoelace_oracle():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.3)
    for i in range(mesh.num_simplices):
        pts = mesh.vertices[mesh.simplices[i]]
        assert simplex_volume(mesh, i) == pytest.approx(shoelace(pts), rel=1e-12)


def test_total_volume_covers_square():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.3)
    assert mesh.volumes().sum() == pytest.approx(1.0, abs=1e-12)


def test_quality_of_structured_square_mesh():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.25)
    q = quality(mesh)
    assert q.coverage_gap <= 1e-12
    assert q.r_min == pytest.approx(np.sin(np.pi / 4), rel=1e-12)
    assert q.h_max <= 0.25
    assert q.min_volume > 0


def test_triangles_are_counterclockwise():
    mesh = triangulate_polygon([[0, 0], [2, 0], [2.5, 1.5], [0.3, 1.1]], 0.4)
    pts = mesh.vertices[mesh.simplices]
    e1, e2 = pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]
    cross = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    assert (cross > 0).all()


def test_non_axis_aligned_polygon_is_covered():
    poly = [[0, 0], [1.5, 0.2], [1.1, 1.3], [0.2, 0.9]]
    mesh = triangulate_polygon(poly, 0.3)
    q = quality(mesh)
    assert q.coverage_gap <= 1e-9
    assert mesh.volumes().sum() == pytest.approx(shoelace(poly), rel=1e-9)


def test_locate_finds_containing_triangle():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.random(2)
        i = locate(mesh, x)
        assert i is not None
        lam = barycentric_coordinates(mesh, i, x)
        assert lam.min() >= -1e-9
        assert lam.sum() == pytest.approx(1.0, abs=1e-12)
        rebuilt = lam @ mesh.vertices[mesh.simplices[i]]
        np.testing.assert_allclose(rebuilt, x, atol=1e-12)


def test_locate_outside_returns_none():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    assert locate(mesh, [2.0, 2.0]) is None
    assert locate(mesh, [-0.1, 0.5]) is None


def test_locate_tie_break_is_lowest_index():
    mesh = triangulate_polygon(UNIT_SQUARE, 1.0)
    # the shared diagonal belongs to both triangles; lowest index wins
    i = locate(mesh, [0.5, 0.5])
    assert i == 0


def test_mesh_json_round_trip(tmp_path):
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    path = tmp_path / "mesh.json"
    save_mesh(mesh, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.simplices, mesh.simplices)


def test_degenerate_simplex_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    mesh = Mesh(dim=2, vertices=verts, simplices=np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateSimplexError):
        mesh.edge_inverses()


def test_invalid_polygon_rejected():
    with pytest.raises(InputError):
        triangulate_polygon([[0, 0], [1, 0]], 0.5)
    with pytest.raises(InputError):
        triangulate_polygon(UNIT_SQUARE, -0.1)


@settings(max_examples=25, deadline=None)
@given(
    h=st.floats(min_value=0.2, max_value=1.0),
    sx=st.floats(min_value=0.5, max_value=2.0),
    sy=st.floats(min_value=0.5, max_value=2.0),
)
def test_rectangle_mesh_area_property(h, sx, sy):
    poly = [[0, 0], [sx, 0], [sx, sy], [0, sy]]
    mesh = triangulate_polygon(poly, h)
    assert mesh.volumes().sum() == pytest.approx(sx * sy, rel=1e-9)
    assert quality(mesh).r_min > 0
