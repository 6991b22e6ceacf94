import numpy as np
import pytest

from randersgeo.geometry import ChartDomain, Grid, MetricField, OneFormField
from randersgeo.randers import Diffeomorphism, RandersMetric, trivial_transform
from randersgeo.geodesic import integrate, curves_coincide
from randersgeo.equivalence import (
    AveragedForm,
    PointwiseInconsistentError,
    Tolerances,
    average_form,
    classify_point,
    flatness_check,
    global_verdict,
    la3_residual,
    support_set,
    tangent_sign,
    unit_directions,
)
from randersgeo import gallery

ROT = ("-0.3*x2/(1 + x1^2 + x2^2)", "0.3*x1/(1 + x1^2 + x2^2)")
SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotational_metric(half=1.0):
    dom = ChartDomain.box([(-half, half), (-half, half)])
    return RandersMetric(MetricField.identity(2), OneFormField(ROT), dom, name="rot")


def zero_metric(half=1.0):
    dom = ChartDomain.box([(-half, half), (-half, half)])
    return RandersMetric(MetricField.identity(2), OneFormField.zero(2), dom)


# ---------------------------------------------------------------------------
# la3 residual


def test_la3_zero_on_proportional_pair():
    g = np.array([[2.0, 0.3], [0.3, 1.5]])
    assert abs(la3_residual(g, 4.0 * g, SKEW, 2.0 * SKEW, (0.7, -0.3))) <= 1e-12


def test_la3_zero_when_both_skew_vanish():
    g = np.eye(2)
    assert la3_residual(g, 2.0 * g, 0.0 * SKEW, 0.0 * SKEW, (1.0, 1.0)) == 0.0


def test_la3_nonzero_on_engineered_mismatch():
    # direct evaluation oracle: g = I, gbar = diag(1,2), L = Lbar, v = (1,1):
    # K = 2, Kbar = 3, so the sides are 27*(lhs bilinear)^2 and 8*(rhs one)^2
    g = np.eye(2)
    gbar = np.diag([1.0, 2.0])
    v = np.array([1.0, 1.0])
    ybar = np.linalg.solve(gbar, SKEW @ v)
    y = np.linalg.solve(g, SKEW @ v)
    lhs = 3.0**3 * float(ybar @ g @ v) ** 2
    rhs = 2.0**3 * float(y @ gbar @ v) ** 2
    expected = (lhs - rhs) / max(abs(lhs), abs(rhs))
    got = la3_residual(g, gbar, SKEW, SKEW, v)
    assert lhs == 6.75 and rhs == 8.0
    assert got == pytest.approx(expected, abs=1e-10)
    assert abs(got) > 0.1


def test_la3_even_in_v_exactly():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((2, 2))
    g = a.T @ a + 2 * np.eye(2)
    gbar = np.diag([1.0, 3.0])
    for _ in range(20):
        v = rng.standard_normal(2)
        assert la3_residual(g, gbar, SKEW, 1.7 * SKEW, v) == la3_residual(
            g, gbar, SKEW, 1.7 * SKEW, -v
        )


def test_la3_rejects_zero_direction():
    with pytest.raises(ValueError):
        la3_residual(np.eye(2), np.eye(2), SKEW, SKEW, (0.0, 0.0))


def test_unit_directions_deterministic():
    a = unit_directions(2, 16, seed=42)
    b = unit_directions(2, 16, seed=42)
    assert np.array_equal(a, b)
    assert a.shape == (18, 2)
    assert np.allclose(np.linalg.norm(a[2:], axis=1), 1.0)


# ---------------------------------------------------------------------------
# Pointwise classification


def test_classify_trivial_pair_is_proportional_two():
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0, OneFormField(["x2", "x1"]))
    c = classify_point(f, f_bar, (0.3, -0.2))
    assert c.case == "proportional"
    assert c.alpha == pytest.approx(2.0, abs=1e-12)


def test_classify_zero_forms_is_both_closed():
    f = zero_metric()
    assert classify_point(f, f, (0.1, 0.1)).case == "both_closed"


def test_classify_skew_mismatch_is_inconsistent():
    # same metric, omega_bar with d omega_bar = 2 d omega: alpha = 1 branch
    # passes the metric ratio but fails the skew verification
    f = rotational_metric()
    f_bad = RandersMetric(f.g, f.omega.scaled(2.0), f.domain)
    c = classify_point(f, f_bad, (0.3, -0.2))
    assert c.case == "inconsistent"
    assert "proportionality" in c.detail or "dichotomy" in c.detail


def test_classify_negative_alpha_for_reversal():
    f = rotational_metric()
    c = classify_point(f, f.reversed(), (0.4, 0.1))
    assert c.case == "proportional"
    assert c.alpha == pytest.approx(-1.0, abs=1e-12)


def test_classify_collects_diagnostic_samples():
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0)
    c = classify_point(f, f_bar, (0.2, 0.5), collect_samples=True)
    assert len(c.samples) >= 18
    for s in c.samples:
        assert s.K > 0 and s.K_bar > 0
        # for a genuinely equivalent pair the eliminated multiplier equation
        # has no non-tangential defect
        assert np.max(np.abs(s.residual_la1)) < 1e-12
        assert abs(s.residual_la3) < 1e-12


def test_classify_random_nonproportional_never_proportional():
    rng = np.random.default_rng(17)
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    p = (0.25, -0.3)
    for _ in range(25):
        g, gbar = _random_nonproportional_pair(rng, 2)
        l = _random_skew(rng, 2, 0.4)
        lbar = _random_skew(rng, 2, 0.4)
        f = _linear_form_metric(g, l, dom)
        f_bar = _linear_form_metric(gbar, lbar, dom)
        c = classify_point(f, f_bar, p)
        assert c.case != "proportional"


def _random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a.T @ a + n * np.eye(n)


def _random_skew(rng, n, scale):
    c = rng.uniform(-scale, scale, size=(n, n))
    l = c - c.T
    if np.max(np.abs(l)) < 0.05:
        l[0, 1] += 0.2
        l[1, 0] -= 0.2
    return l


def _random_nonproportional_pair(rng, n):
    while True:
        g = _random_spd(rng, n)
        gbar = _random_spd(rng, n)
        t = np.sum(gbar * g) / np.sum(g * g)
        if np.max(np.abs(gbar - t * g)) > 1e-2 * np.max(np.abs(g)):
            return g, gbar


def _linear_form_metric(g, l, dom, validity_resolution=8):
    """Constant metric g with linear omega whose exterior derivative is l."""
    n = dom.dimension
    c = l / 2.0
    # scale the form so validity holds over the box
    corner = np.max(np.abs(np.asarray(dom.upper)))
    scale = 1.0
    while True:
        omega_corner = np.abs(c * scale).sum(axis=1) * corner
        gnorm = np.sqrt(omega_corner @ np.linalg.solve(g, omega_corner))
        if gnorm < 0.8:
            break
        scale *= 0.5
    sources = [
        " + ".join(f"{c[i, j] * scale!r}*x{j + 1}" for j in range(n))
        for i in range(n)
    ]
    return RandersMetric(
        MetricField(g.tolist()),
        OneFormField(sources),
        dom,
        validity_resolution=validity_resolution,
    )


# ---------------------------------------------------------------------------
# Support sets


def test_support_empty_for_closed_form():
    f = zero_metric()
    grid = Grid.build(f.domain, 17)
    ss = support_set(f.omega, grid)
    assert ss.count == 0
    assert not ss.mask.any()


def test_support_example2_two_components():
    inst = gallery.build("example-2")
    grid = Grid.build(inst.F.domain, 65)
    ss = support_set(inst.F.omega, grid)
    assert ss.count == 2
    centers = sorted(c.centroid[0] for c in ss.components)
    assert centers[0] == pytest.approx(-1.0, abs=0.1)
    assert centers[1] == pytest.approx(1.0, abs=0.1)
    for c in ss.components:
        assert abs(c.centroid[1]) < 0.05
        assert c.sample_count > 20


def test_support_sets_of_pair_coincide():
    inst = gallery.build("example-2")
    grid = Grid.build(inst.F.domain, 65)
    a = support_set(inst.F.omega, grid)
    b = support_set(inst.F_bar.omega, grid)
    assert np.array_equal(a.mask, b.mask)


# ---------------------------------------------------------------------------
# Tangent signs


def test_tangent_sign_self_is_positive():
    f = rotational_metric()
    assert tangent_sign(f, f, (0.3, 0.2), (1.0, 0.0)) == "positive"
    assert tangent_sign(f, f, (0.3, 0.2), (0.2, -1.0)) == "positive"


def test_tangent_sign_reverse_is_negative():
    f = rotational_metric()
    fr = f.reversed()
    assert tangent_sign(f, fr, (0.3, 0.2), (1.0, 0.0)) == "negative"


def test_tangent_sign_undetermined_where_domega_vanishes():
    inst = gallery.build("example-2")
    # far from both balls the differential vanishes identically
    assert (
        tangent_sign(inst.F, inst.F_bar, (2.5, 2.5), (1.0, 0.0)) == "undetermined"
    )


def test_tangent_sign_example2_balls_have_opposite_signs():
    inst = gallery.build("example-2")
    rng = np.random.default_rng(23)
    for center, expected in [((1.0, 0.0), "positive"), ((-1.0, 0.0), "negative")]:
        for _ in range(8):
            xi = rng.standard_normal(2)
            s = tangent_sign(inst.F, inst.F_bar, center, xi)
            assert s == expected


def test_tangent_sign_inconsistent_raises():
    f = rotational_metric()
    f_bad = RandersMetric(f.g, f.omega.scaled(2.0), f.domain)
    with pytest.raises(PointwiseInconsistentError):
        tangent_sign(f, f_bad, (0.3, 0.2), (1.0, 0.0))


# ---------------------------------------------------------------------------
# Global verdicts


def test_verdict_trivial_pair_oriented():
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0, OneFormField(["x2", "x1"]))
    grid = Grid.build(f.domain, 17)
    v = global_verdict(f, f_bar, grid, "oriented")
    assert v.outcome == "proportional_global"
    assert v.const == pytest.approx(2.0, abs=1e-9)
    assert v.residuals["closedness_max"] <= 1e-8
    assert v.residuals["la3_max"] <= 1e-10


def test_verdict_symmetric_under_swap():
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0)
    grid = Grid.build(f.domain, 9)
    a = global_verdict(f, f_bar, grid, "oriented")
    b = global_verdict(f_bar, f, grid, "oriented")
    assert a.const * b.const == pytest.approx(1.0, rel=1e-6)


def test_verdict_reversal_pair():
    f = rotational_metric()
    fr = f.reversed()
    grid = Grid.build(f.domain, 9)
    assert global_verdict(f, fr, grid, "oriented").outcome == "refuted"
    v = global_verdict(f, fr, grid, "unoriented")
    assert v.outcome == "mixed_signs"
    assert [c.sign for c in v.components] == [-1]
    assert v.const == pytest.approx(1.0, abs=1e-12)


def test_verdict_example2_both_modes():
    inst = gallery.build("example-2")
    grid = Grid.build(inst.F.domain, 65)
    vo = global_verdict(inst.F, inst.F_bar, grid, "oriented")
    assert vo.outcome == "refuted"
    vu = global_verdict(inst.F, inst.F_bar, grid, "unoriented")
    assert vu.outcome == "mixed_signs"
    signs = {c.id: c.sign for c in vu.components}
    assert len(signs) == 2 and sorted(signs.values()) == [-1, 1]


def test_verdict_both_closed_reduces_to_riemannian():
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    f = RandersMetric(MetricField.identity(2), OneFormField(["0.3", "0"]), dom)
    f_bar = RandersMetric(
        MetricField([["2 + x1^2", "0"], ["0", "2 + x1^2"]]),
        OneFormField.zero(2),
        dom,
    )
    grid = Grid.build(dom, 9)
    v = global_verdict(f, f_bar, grid, "oriented")
    assert v.outcome == "reduces_to_riemannian"


def test_verdict_refutes_mixed_proportionality():
    # omega supported near (+1, 0); gbar differs from g only near (-1, 0),
    # where both forms are closed: the cited rigidity step forbids this mix
    dom = ChartDomain.box([(-4, 4), (-4, 4)])
    bump_r = "bump((x1 - 1)^2 + x2^2, 0.25)"
    bump_l = "bump((x1 + 1)^2 + x2^2, 0.25)"
    omega = OneFormField([f"-0.25*x2*{bump_r}", f"0.25*(x1 - 1)*{bump_r}"])
    f = RandersMetric(MetricField.identity(2), omega, dom)
    s = f"1 + 0.3*{bump_l}"
    f_bar = RandersMetric(MetricField([[s, "0"], ["0", s]]), omega, dom)
    grid = Grid.build(dom, 33)
    v = global_verdict(f, f_bar, grid, "oriented")
    assert v.outcome == "refuted"
    assert len(v.witnesses) == 2
    assert "rigidity" in v.witnesses[1]["note"]


def test_verdict_refutes_inconsistent_constants():
    # gbar = (1 + small slope)^2 * g with omega_bar matched locally still
    # cannot produce one global constant
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    f = rotational_metric()
    s = "(1.1 + 0.05*x1)^2"
    f_bar = RandersMetric(
        MetricField([[s, "0"], ["0", s]]),
        OneFormField(ROT).scaled(1.1),
        dom,
    )
    grid = Grid.build(dom, 9)
    v = global_verdict(f, f_bar, grid, "oriented")
    assert v.outcome == "refuted"


def test_verdict_dynamic_consistency():
    # proportional_global in oriented mode implies shared forward geodesics
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0, OneFormField(["0.3*x2", "0.3*x1"]))
    grid = Grid.build(f.domain, 9)
    assert global_verdict(f, f_bar, grid, "oriented").outcome == "proportional_global"
    rng = np.random.default_rng(31)
    for _ in range(5):
        p0 = rng.uniform(-0.4, 0.4, 2)
        v0 = rng.standard_normal(2)
        a = integrate(f, p0, v0, T=0.4, h=1e-3)
        b = integrate(f_bar, p0, v0, T=0.4, h=1e-3)
        ok, dist = curves_coincide(a, b, "oriented")
        assert ok, f"geodesics diverged: {dist}"


def test_verdict_requires_same_domain():
    f = rotational_metric(1.0)
    f2 = rotational_metric(0.9)
    grid = Grid.build(f.domain, 9)
    with pytest.raises(ValueError):
        global_verdict(f, f2, grid)


def test_verdict_serialization_schema():
    f = rotational_metric()
    f_bar = trivial_transform(f, 2.0)
    grid = Grid.build(f.domain, 9)
    d = global_verdict(f, f_bar, grid, "oriented").to_dict()
    assert set(d) == {
        "mode",
        "outcome",
        "const",
        "residuals",
        "components",
        "witnesses",
        "diagnostics",
    }
    assert set(d["residuals"]) == {"la3_max", "closedness_max", "curvature_spread"}
    for comp in d["components"]:
        assert set(comp) == {"id", "sign", "sample_count"}


# ---------------------------------------------------------------------------
# Flatness


def test_flatness_flat_and_closed():
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    f = RandersMetric(MetricField.identity(2), OneFormField(["0.3", "0"]), dom)
    r = flatness_check(f, Grid.build(dom, 9))
    assert r.projectively_flat
    assert r.curvature == pytest.approx(0.0, abs=1e-10)
    assert r.closedness_residual <= 1e-10


def test_flatness_sphere():
    inst = gallery.build("sphere")
    r = flatness_check(inst.F, Grid.build(inst.F.domain, 9))
    assert r.projectively_flat
    assert r.curvature == pytest.approx(1.0, abs=1e-8)


def test_flatness_fails_on_nonclosed_form():
    inst = gallery.build("example-2")
    r = flatness_check(inst.F, Grid.build(inst.F.domain, 33))
    assert not r.projectively_flat
    assert r.curvature == pytest.approx(0.0, abs=1e-10)  # g itself is flat
    assert r.closedness_residual > 1e-3
    # the witness points into one of the bump balls
    w = np.asarray(r.witness["point"])
    assert min(np.linalg.norm(w - [1, 0]), np.linalg.norm(w - [-1, 0])) < 0.5


# ---------------------------------------------------------------------------
# Averaging


def test_average_identity_group():
    f = rotational_metric()
    grid = Grid.build(f.domain, 9)
    avg, residual = average_form(f.omega, [Diffeomorphism.identity(2)], grid)
    p = (0.3, -0.4)
    assert np.allclose(avg.at(p), f.omega(p))
    assert residual <= 1e-12


def test_average_reflection_group_odd_closed_form():
    # omega = (0.3, 0) is closed and odd under x1 -> -x1, so the average
    # vanishes and lambda-hat = omega stays closed
    dom = ChartDomain.box([(-1, 1), (-1, 1)])
    omega = OneFormField(["0.3", "0"])
    grid = Grid.build(dom, 17)
    group = [
        Diffeomorphism.identity(2),
        Diffeomorphism.from_sources(["-x1", "x2"], 2),
    ]
    avg, residual = average_form(omega, group, grid)
    assert residual <= 1e-8
    for p in [(0.0, 0.0), (0.4, -0.2), (-0.7, 0.7)]:
        assert np.max(np.abs(avg.at(p))) < 1e-14
    # invariance of omega - lambda-hat = omega-hat under the group
    phi = group[1]
    for p in grid.admissible_points[::7]:
        j = phi.jacobian(p)
        pulled = j.T @ avg.at(phi(p))
        assert np.max(np.abs(pulled - avg.at(p))) <= 1e-8


def test_average_invariant_form_unchanged():
    # the rotational form is invariant under the half-turn x -> -x
    f = rotational_metric()
    grid = Grid.build(f.domain, 9)
    group = [
        Diffeomorphism.identity(2),
        Diffeomorphism.from_sources(["-x1", "-x2"], 2),
    ]
    avg, _ = average_form(f.omega, group, grid)
    for p in [(0.3, 0.1), (-0.5, 0.6)]:
        assert np.allclose(avg.at(p), f.omega(p), atol=1e-14)


def test_average_rejects_escaping_group_element():
    f = rotational_metric()
    grid = Grid.build(f.domain, 9)
    shift = Diffeomorphism.from_sources(["x1 + 5", "x2"], 2)
    with pytest.raises(ValueError, match="inadmissible"):
        average_form(f.omega, [shift], grid)
