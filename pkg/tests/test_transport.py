"""Transport maps, optimality oracles and the study harness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmaop.discretization import DecisionVector, objective
from dmaop.errors import InputError
from dmaop.mesh import Mesh, triangulate_polygon
from dmaop.problem import UniformDensity
from dmaop.transport import (
    DiscreteMap,
    QuadraticReference,
    assignment_oracle,
    convergence_study,
    cyclical_check,
    displacement,
    fit_cost_slope,
    identity_reference,
    scaling_reference,
    translation_reference,
    two_sided_cost,
    StudyRow,
)

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


def quadratic_dv(mesh, M):
    X = mesh.vertices
    return DecisionVector(
        psi=0.5 * np.einsum("ja,ab,jb->j", X, M, X), eta=X @ np.asarray(M).T
    )


def test_displacement_endpoints_bit_exact():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    dv = quadratic_dv(mesh, np.diag([2.0, 1.0]))
    np.testing.assert_array_equal(displacement(mesh, dv, 0.0), mesh.vertices)
    np.testing.assert_array_equal(displacement(mesh, dv, 1.0), dv.eta)


def test_displacement_identity_midpoint():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    dv = quadratic_dv(mesh, np.eye(2))
    np.testing.assert_allclose(displacement(mesh, dv, 0.5), mesh.vertices, atol=1e-15)


def test_displacement_rejects_bad_time():
    mesh = triangulate_polygon(UNIT_SQUARE, 1.0)
    dv = quadratic_dv(mesh, np.eye(2))
    with pytest.raises(InputError):
        displacement(mesh, dv, 1.5)
    with pytest.raises(InputError):
        displacement(mesh, dv, -0.1)


def test_two_sided_cost_hand_computed_single_simplex():
    # det H = 4, f/g = 1, V = 1/2: contribution |(-2) + 1| * 1/2
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh(dim=2, vertices=verts, simplices=np.array([[0, 1, 2]]))
    dv = quadratic_dv(mesh, 2.0 * np.eye(2))
    c = two_sided_cost(mesh, dv, UniformDensity(), UniformDensity())
    assert c == pytest.approx(0.5)


def test_two_sided_cost_zero_on_matching_quadratic():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    M = np.diag([2.0, 1.0])
    dv = quadratic_dv(mesh, M)
    g = UniformDensity(scale=1.0 / float(np.linalg.det(M)))
    assert two_sided_cost(mesh, dv, UniformDensity(), g) <= 1e-12


def test_two_sided_dominates_one_sided_objective():
    rng = np.random.default_rng(12)
    mesh = triangulate_polygon(UNIT_SQUARE, 0.4)
    eta = 0.5 * mesh.vertices + 0.01 * rng.standard_normal((mesh.num_vertices, 2))
    dv = DecisionVector(psi=np.zeros(mesh.num_vertices), eta=eta)
    f = g = UniformDensity()
    assert two_sided_cost(mesh, dv, f, g) >= objective(mesh, eta, f, g, "dmaop") - 1e-14


def test_assignment_oracle_monotone_map_optimal():
    mesh = triangulate_polygon(UNIT_SQUARE, 1.0)  # N = 4
    dv = quadratic_dv(mesh, np.array([[1.5, 0.4], [0.4, 0.9]]))
    dmap = DiscreteMap(sources=mesh.vertices, targets=dv.eta)
    out = assignment_oracle(dmap)
    assert out["optimal"]
    assert out["identity_cost"] == pytest.approx(out["best_cost"])


def test_assignment_oracle_detects_swapped_targets():
    mesh = triangulate_polygon(UNIT_SQUARE, 1.0)
    dv = quadratic_dv(mesh, np.eye(2))
    targets = dv.eta.copy()
    targets[[0, 2]] = targets[[2, 0]]  # swap two assignments
    out = assignment_oracle(DiscreteMap(sources=mesh.vertices, targets=targets))
    assert not out["optimal"]
    assert out["best_cost"] < out["identity_cost"]


def test_assignment_oracle_single_pair_trivially_optimal():
    dmap = DiscreteMap(sources=np.array([[0.3, 0.4]]), targets=np.array([[1.0, 2.0]]))
    assert assignment_oracle(dmap)["optimal"]


def test_assignment_oracle_rejects_large_instances():
    pts = np.random.default_rng(0).random((12, 2))
    with pytest.raises(InputError, match="cyclical_check"):
        assignment_oracle(DiscreteMap(sources=pts, targets=pts))


def test_cyclical_check_nonpositive_for_subgradient_data():
    mesh = triangulate_polygon(UNIT_SQUARE, 0.4)
    dv = quadratic_dv(mesh, np.array([[1.1, 0.3], [0.3, 2.0]]))
    dmap = DiscreteMap(sources=mesh.vertices, targets=dv.eta)
    assert cyclical_check(dmap, max_len=5, trials=5000, seed=1) <= 1e-9


def test_cyclical_check_positive_for_anti_monotone_pairs():
    # 1-D anti-monotone pairs embedded in the plane: eta = -x
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    dmap = DiscreteMap(sources=x, targets=-x)
    worst = cyclical_check(dmap, max_len=2, trials=100, seed=0)
    # <eta1, x2-x1> + <eta2, x1-x2> = (x1 - x2)^2 = 1 for eta = -x
    assert worst == pytest.approx(1.0)


def test_cyclical_check_validates_max_len():
    dmap = DiscreteMap(sources=np.zeros((3, 2)), targets=np.zeros((3, 2)))
    with pytest.raises(InputError):
        cyclical_check(dmap, max_len=1)


def test_quadratic_reference_families():
    ident = identity_reference()
    np.testing.assert_array_equal(ident.matrix, np.eye(2))
    sc = scaling_reference(2.0, 1.0)
    assert sc.density_ratio() == pytest.approx(2.0)
    tr = translation_reference([0.3, -0.2])
    np.testing.assert_allclose(tr.gradient([1.0, 1.0]), [1.3, 0.8], atol=1e-14)
    with pytest.raises(InputError):
        QuadraticReference(matrix=np.diag([1.0, -1.0]), shift=np.zeros(2))


def test_reference_potential_value_and_gradient_consistent():
    ref = QuadraticReference(matrix=np.array([[2.0, 0.5], [0.5, 1.0]]), shift=np.array([0.1, 0.0]))
    x = np.array([0.4, -0.3])
    h = 1e-6
    for c in range(2):
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        fd = (ref.value(xp) - ref.value(xm)) / (2 * h)
        assert ref.gradient(x)[c] == pytest.approx(fd, rel=1e-6)


def test_fit_cost_slope_recovers_power_law():
    rows = [
        StudyRow(N=n, h=1.0 / n, cost=3.0 * n**-0.5, two_sided=0.0, sup_err=None, runtime_s=0.0)
        for n in (25, 100, 400)
    ]
    assert fit_cost_slope(rows) == pytest.approx(-0.5, abs=1e-12)
    zero_rows = [
        StudyRow(N=n, h=1.0 / n, cost=0.0, two_sided=0.0, sup_err=None, runtime_s=0.0)
        for n in (25, 100, 400)
    ]
    assert fit_cost_slope(zero_rows) is None


def test_convergence_study_validates_h_list():
    cfg = {
        "domain": {"polygon": UNIT_SQUARE},
        "target": {"polygon": UNIT_SQUARE},
        "f": {"kind": "uniform"},
        "g": {"kind": "uniform"},
    }
    with pytest.raises(InputError):
        convergence_study(cfg, [0.5, 0.25])  # too few
    with pytest.raises(InputError):
        convergence_study(cfg, [0.25, 0.5, 0.1])  # not decreasing


def test_convergence_study_identity_reports_undefined_slope():
    cfg = {
        "domain": {"polygon": UNIT_SQUARE},
        "target": {"polygon": UNIT_SQUARE},
        "f": {"kind": "uniform"},
        "g": {"kind": "uniform"},
    }
    res = convergence_study(cfg, [1.0, 0.7, 0.5], reference=identity_reference())
    assert res.complete
    assert res.slope is None  # every cost at numerical zero
    for row in res.rows:
        assert row.cost <= 1e-6


@settings(max_examples=20, deadline=None)
@given(
    a=st.floats(min_value=0.3, max_value=3.0),
    b=st.floats(min_value=0.3, max_value=3.0),
)
def test_cyclical_check_property_for_quadratic_maps(a, b):
    mesh = triangulate_polygon(UNIT_SQUARE, 0.5)
    dv = quadratic_dv(mesh, np.diag([a, b]))
    dmap = DiscreteMap(sources=mesh.vertices, targets=dv.eta)
    assert cyclical_check(dmap, max_len=4, trials=500, seed=3) <= 1e-9
