import numpy as np
import pytest

from randersgeo.expr import parse
from randersgeo.geometry import (
    ChartDomain,
    DegenerateMetricError,
    ExcludedBall,
    ExcludedRay,
    Grid,
    MetricField,
    OneFormField,
    SkewMatrix,
    christoffel,
    constant_curvature_check,
    exterior_derivative,
    sectional_curvature,
)

SPHERE = "4/((1 + x1^2 + x2^2)^2)"
HALF_PLANE = "1/(x2^2)"


def sphere_metric():
    return MetricField([[SPHERE, "0"], ["0", SPHERE]])


def half_plane_metric():
    return MetricField([[HALF_PLANE, "0"], ["0", HALF_PLANE]])


# ---------------------------------------------------------------------------
# Domains and grids


def test_box_is_open():
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    assert dom.is_admissible((0.0, 0.0))
    assert dom.is_admissible((0.999, -0.999))
    assert not dom.is_admissible((1.0, 0.0))
    assert not dom.is_admissible((0.0, -1.0))
    assert not dom.is_admissible((2.0, 0.0))


def test_excluded_ball_margin():
    dom = ChartDomain.box(
        [(-2, 2), (-2, 2)], balls=(ExcludedBall((0.0, 0.0), 0.5),), margin=0.1
    )
    assert not dom.is_admissible((0.0, 0.0))
    assert not dom.is_admissible((0.55, 0.0))  # within margin of the ball
    assert dom.is_admissible((0.75, 0.0))


def test_excluded_ray_distance():
    # the slit {x1 = 0, x2 <= 2}
    ray = ExcludedRay(axis=0, value=0.0, half_axis=1, bound=2.0, side="below")
    dom = ChartDomain.box([(-4, 4), (-4, 4)], rays=(ray,), margin=1e-3)
    assert not dom.is_admissible((0.0, 0.0))
    assert not dom.is_admissible((0.0005, -1.0))
    assert dom.is_admissible((0.5, 0.0))
    assert not dom.is_admissible((0.0, 2.0005))  # still within margin of the tip
    assert dom.is_admissible((0.0, 2.1))  # above the ray end
    # distance oracle: point (0.3, 3) vs ray tip (0, 2)
    assert dom.exclusion_distance((0.3, 3.0)) == pytest.approx(np.hypot(0.3, 1.0))


def test_excluded_ray_above_side():
    ray = ExcludedRay(axis=1, value=0.0, half_axis=0, bound=1.0, side="above")
    dom = ChartDomain.box([(-4, 4), (-4, 4)], rays=(ray,), margin=1e-3)
    assert not dom.is_admissible((2.0, 0.0))
    assert dom.is_admissible((0.0, 0.5))


def test_default_margin_scales_with_diagonal():
    dom = ChartDomain.box([(-4, 4), (-4, 4)])
    assert dom.exclusion_margin == pytest.approx(1e-3 * np.sqrt(128))


def test_grid_avoids_box_boundary():
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    grid = Grid.build(dom, 9)
    assert grid.shape == (9, 9)
    assert np.all(np.abs(grid.points) < 1.0)
    assert grid.admissible.all()


def test_grid_respects_exclusions():
    ray = ExcludedRay(axis=0, value=0.0, half_axis=1, bound=2.0, side="below")
    dom = ChartDomain.box([(-4, 4), (-4, 4)], rays=(ray,), margin=1e-3)
    grid = Grid.build(dom, 65)
    # the lattice contains the x1 = 0 column; its lower part is excluded
    assert not grid.admissible.all()
    bad = grid.points[~grid.admissible]
    assert np.all(np.abs(bad[:, 0]) < 1e-12)
    assert np.all(bad[:, 1] <= 2.0 + 1e-3)


# ---------------------------------------------------------------------------
# Metric evaluation


def test_eval_metric_identity():
    g = MetricField.identity(2)
    gm, ginv, dg = g.eval((0.3, 0.7))
    assert np.array_equal(gm, np.eye(2))
    assert np.array_equal(ginv, np.eye(2))
    assert not dg.any()


def test_eval_metric_partials():
    g = MetricField([["1", "0"], ["0", "x1^2"]])
    gm, ginv, dg = g.eval((2.0, 0.0))
    assert np.allclose(gm, np.diag([1.0, 4.0]))
    assert np.allclose(dg[0], np.diag([0.0, 4.0]))  # d/dx1
    assert not dg[1].any()
    assert np.max(np.abs(ginv @ gm - np.eye(2))) < 1e-12


def test_inverse_accuracy_on_random_spd_field():
    g = MetricField(
        [["2 + sin(x1)^2", "0.3*x1*x2"], ["0.3*x1*x2", "2 + cos(x2)^2"]]
    )
    rng = np.random.default_rng(5)
    for p in rng.uniform(-1, 1, size=(20, 2)):
        gm, ginv, _ = g.eval(p)
        assert np.max(np.abs(ginv @ gm - np.eye(2))) < 1e-12


def test_degenerate_metric_names_point():
    g = MetricField.diagonal([-1.0, 1.0])
    with pytest.raises(DegenerateMetricError) as err:
        g((0.25, 0.5))
    assert "0.25" in str(err.value)


def test_metric_requires_symmetric_sources():
    with pytest.raises(ValueError):
        MetricField([["1", "x1"], ["x2", "1"]])


def test_second_derivatives_exactly_symmetric():
    g = MetricField(
        [["2 + sin(x1*x2)", "0.1*exp(x1 - x2)"], ["0.1*exp(x1 - x2)", "3 + x2^2"]]
    )
    _, _, d2g = g.eval2((0.4, -0.9))
    assert np.array_equal(d2g, np.transpose(d2g, (1, 0, 2, 3)))


# ---------------------------------------------------------------------------
# Christoffel symbols


def test_christoffel_flat_is_zero():
    gamma = christoffel(MetricField.identity(2), (0.4, 0.6))
    assert not gamma.any()


def test_christoffel_hyperbolic():
    gamma = christoffel(half_plane_metric(), (0.0, 1.0))
    assert gamma[0, 0, 1] == pytest.approx(-1.0)
    assert gamma[0, 1, 0] == pytest.approx(-1.0)
    assert gamma[1, 0, 0] == pytest.approx(1.0)
    assert gamma[1, 1, 1] == pytest.approx(-1.0)


def test_christoffel_polar():
    # flat metric in polar coordinates diag(1, r^2) at r = 2
    g = MetricField([["1", "0"], ["0", "x1^2"]])
    gamma = christoffel(g, (2.0, 0.9))
    assert gamma[0, 1, 1] == pytest.approx(-2.0)
    assert gamma[1, 0, 1] == pytest.approx(0.5)


def test_christoffel_symmetric_in_lower_indices():
    g = MetricField(
        [["2 + sin(x1)^2", "0.2*x1*x2"], ["0.2*x1*x2", "2 + x2^2"]]
    )
    gamma = christoffel(g, (0.7, -0.4))
    assert np.array_equal(gamma, np.transpose(gamma, (0, 2, 1)))


# ---------------------------------------------------------------------------
# Exterior derivative


def test_exterior_derivative_examples():
    w = OneFormField(["0", "x1"])
    assert np.allclose(
        exterior_derivative(w, (0.3, 0.4)).matrix, [[0, -1], [1, 0]]
    )
    w2 = OneFormField(["-x2", "0"])
    assert np.allclose(
        exterior_derivative(w2, (0.3, 0.4)).matrix, [[0, -1], [1, 0]]
    )


@pytest.mark.parametrize(
    "f_sources",
    [
        # hand differentials d f for several f
        ("x2^2", "2*x1*x2"),  # f = x1*x2^2
        ("cos(x2)", "-x1*sin(x2)"),  # f = x1*cos(x2)
        ("2*x1*exp(x1^2 + x2)", "exp(x1^2 + x2)"),  # f = exp(x1^2 + x2)
    ],
)
def test_exact_differentials_are_closed(f_sources):
    w = OneFormField(list(f_sources))
    rng = np.random.default_rng(11)
    for p in rng.uniform(-1, 1, size=(25, 2)):
        assert exterior_derivative(w, p).max_abs() < 1e-10


def test_skew_matrix_exact_antisymmetry():
    w = OneFormField(["sin(x1*x2)", "exp(x1) - x2^3"])
    m = exterior_derivative(w, (0.9, -1.2)).matrix
    assert np.array_equal(m, -m.T)


def test_skew_matrix_rejects_non_skew():
    with pytest.raises(ValueError):
        SkewMatrix.from_full(np.array([[0.0, 1.0], [1.0, 0.0]]))


# ---------------------------------------------------------------------------
# Sectional curvature


def test_sectional_curvature_flat():
    assert sectional_curvature(
        MetricField.identity(2), (0.3, 0.1), (1, 0), (1, 1)
    ) == pytest.approx(0.0, abs=1e-12)


def test_sectional_curvature_sphere():
    g = sphere_metric()
    for p in [(0.0, 0.0), (0.4, -0.3), (0.9, 0.8)]:
        assert sectional_curvature(g, p, (1, 0), (0, 1)) == pytest.approx(
            1.0, abs=1e-8
        )


def test_sectional_curvature_hyperbolic():
    g = half_plane_metric()
    for p in [(0.0, 1.0), (0.5, 0.7), (-1.0, 2.0)]:
        assert sectional_curvature(g, p, (1, 0), (0, 1)) == pytest.approx(
            -1.0, abs=1e-8
        )


def test_sectional_curvature_basis_invariance():
    g = sphere_metric()
    p = (0.3, 0.2)
    base = sectional_curvature(g, p, (1, 0), (0, 1))
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = rng.uniform(-2, 2, size=(2, 2))
        if abs(np.linalg.det(m)) < 0.1:
            continue
        u = m[0, 0] * np.array([1.0, 0.0]) + m[0, 1] * np.array([0.0, 1.0])
        v = m[1, 0] * np.array([1.0, 0.0]) + m[1, 1] * np.array([0.0, 1.0])
        k = sectional_curvature(g, p, u, v)
        assert abs(k - base) < 1e-8 * (1 + abs(base))


def test_sectional_curvature_rejects_degenerate_plane():
    with pytest.raises(ValueError):
        sectional_curvature(MetricField.identity(2), (0, 0), (1, 1), (2, 2))


def test_sectional_curvature_three_dimensional_sphere_chart():
    s3 = "4/((1 + x1^2 + x2^2 + x3^2)^2)"
    g = MetricField(
        [[s3, "0", "0"], ["0", s3, "0"], ["0", "0", s3]]
    )
    rng = np.random.default_rng(9)
    for _ in range(5):
        p = rng.uniform(-0.5, 0.5, 3)
        u, v = rng.standard_normal(3), rng.standard_normal(3)
        assert sectional_curvature(g, p, u, v) == pytest.approx(1.0, abs=1e-8)


# ---------------------------------------------------------------------------
# Constant-curvature check


def test_constant_curvature_sphere():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.8, 0.8, size=(50, 2))
    is_const, value, spread = constant_curvature_check(sphere_metric(), pts)
    assert is_const and value == pytest.approx(1.0, abs=1e-8) and spread < 1e-6


def test_constant_curvature_flat():
    pts = np.array([[0.0, 0.0], [0.5, 0.2], [-0.4, 0.8]])
    is_const, value, spread = constant_curvature_check(MetricField.identity(2), pts)
    assert is_const and value == pytest.approx(0.0, abs=1e-12) and spread < 1e-12


def test_constant_curvature_detects_variation():
    g = MetricField([["1", "0"], ["0", "1 + x1^2"]])
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.5, 1.5, size=(40, 2))
    is_const, _, spread = constant_curvature_check(g, pts)
    assert not is_const and spread > 1e-2


def test_constant_curvature_requires_two_points():
    with pytest.raises(ValueError):
        constant_curvature_check(MetricField.identity(2), [[0.0, 0.0]])
