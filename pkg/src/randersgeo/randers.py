"""The Randers metric F(x, xi) = sqrt(g(xi, xi)) + omega(xi).

Validity (g-norm of omega below one) is enforced statistically on a sample
grid at construction and re-checked lazily at every evaluation point; an
evaluation-time violation is a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .expr import ScalarExpression
from .geometry import (
    ChartDomain,
    Grid,
    MetricField,
    OneFormField,
    exterior_derivative,
    _as_expression,
)

__all__ = [
    "RandersMetric",
    "Diffeomorphism",
    "SampledCurve",
    "PullbackMetric",
    "ValidityError",
    "curve_length",
    "trivial_transform",
    "pullback",
    "homothety_check",
    "pullback_form_value",
]


class ValidityError(ValueError):
    """The g-norm of omega reached one: F is not a Finsler metric there."""

    def __init__(self, point, norm):
        self.point = np.asarray(point, dtype=float)
        self.norm = float(norm)
        super().__init__(
            f"g-norm of omega is {self.norm:.6g} >= 1 at {self.point.tolist()}"
        )


@dataclass(frozen=True)
class RandersMetric:
    g: MetricField
    omega: OneFormField
    domain: ChartDomain
    name: str = "custom"
    validity_resolution: int = 64
    _skip_validation: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.g.n != self.domain.dimension or self.omega.n != self.domain.dimension:
            raise ValueError("metric, form and domain dimensions disagree")
        if not self._skip_validation:
            self.check_validity(self.validity_resolution)

    def check_validity(self, resolution=64):
        """Evaluate the g-norm of omega over a sample grid; error on >= 1."""
        grid = Grid.build(self.domain, resolution)
        worst = 0.0
        for p in grid.admissible_points:
            worst = max(worst, self.omega_norm(p))
        return worst

    def omega_norm(self, p) -> float:
        """sqrt(g^{ij} omega_i omega_j) at p; raises ValidityError at >= 1."""
        gm = self.g(p)
        w = self.omega(p)
        norm = float(np.sqrt(w @ np.linalg.solve(gm, w)))
        if norm >= 1.0:
            raise ValidityError(p, norm)
        return norm

    def value(self, p, xi) -> float:
        """F(p, xi) = sqrt(g(xi, xi)) + omega(xi); positive for xi != 0."""
        xi = np.asarray(xi, dtype=float)
        if not np.any(xi):
            raise ValueError("F is evaluated on nonzero tangent vectors only")
        self.domain.require_admissible(p)
        gm = self.g(p)
        w = self.omega(p)
        norm = float(np.sqrt(w @ np.linalg.solve(gm, w)))
        if norm >= 1.0:
            raise ValidityError(p, norm)
        return float(np.sqrt(xi @ gm @ xi) + w @ xi)

    def reversed(self) -> "RandersMetric":
        """Same g, negated omega: forward geodesics become backward ones."""
        return RandersMetric(
            self.g,
            self.omega.negated(),
            self.domain,
            name=f"{self.name}-reversed",
            validity_resolution=self.validity_resolution,
            _skip_validation=True,  # the g-norm of -omega equals that of omega
        )

    def g_speed(self, p, xi) -> float:
        gm = self.g(p)
        xi = np.asarray(xi, dtype=float)
        return float(np.sqrt(xi @ gm @ xi))


def reverse_metric(f: RandersMetric) -> RandersMetric:
    return f.reversed()


@dataclass(frozen=True)
class Diffeomorphism:
    """A chart self-map given by n component expressions.

    Invertibility on the domain is asserted by the caller and only
    spot-checked numerically (nonsingular Jacobian at sampled points).
    """

    components: tuple
    invertible: bool = True

    @staticmethod
    def from_sources(sources, dimension) -> "Diffeomorphism":
        comps = tuple(_as_expression(s, dimension) for s in sources)
        if len(comps) != dimension:
            raise ValueError("diffeomorphism needs one component per coordinate")
        return Diffeomorphism(comps)

    @property
    def n(self):
        return len(self.components)

    def __call__(self, p) -> np.ndarray:
        return np.array([c.value(p) for c in self.components])

    def jacobian(self, p) -> np.ndarray:
        """J[k, i] = d phi^k / d x^i."""
        j = np.stack([c.jet1(p)[1] for c in self.components])
        if abs(np.linalg.det(j)) < 1e-12:
            raise ValueError(
                f"diffeomorphism has a singular Jacobian at {np.asarray(p).tolist()}"
            )
        return j

    def spot_check(self, points):
        for p in points:
            self.jacobian(p)

    @staticmethod
    def identity(n) -> "Diffeomorphism":
        return Diffeomorphism.from_sources([f"x{i + 1}" for i in range(n)], n)


# ---------------------------------------------------------------------------
# Curves and length


@dataclass(frozen=True)
class SampledCurve:
    """A curve sampled on a parameter grid, with optional velocities.

    When velocities are not supplied they are estimated by second-order
    finite differences on the parameter grid.
    """

    t: np.ndarray
    x: np.ndarray  # (m, n)
    v: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if len(t) != len(x) or len(t) < 3:
            raise ValueError("curve needs at least 3 samples with matching t")
        if np.any(np.diff(t) <= 0):
            raise ValueError("parameter grid must be strictly increasing")
        if np.any(np.all(np.diff(x, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive curve samples must be distinct")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        if self.v is not None:
            object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    def velocities(self) -> np.ndarray:
        if self.v is not None:
            return self.v
        return np.gradient(self.x, self.t, axis=0, edge_order=2)

    @staticmethod
    def from_function(fn, t0, t1, m) -> "SampledCurve":
        """Sample fn: t -> (x, v) or t -> x on a uniform grid of m points."""
        t = np.linspace(t0, t1, m)
        first = fn(t[0])
        if isinstance(first, tuple):
            xs, vs = zip(*(fn(ti) for ti in t))
            return SampledCurve(t, np.array(xs), np.array(vs))
        return SampledCurve(t, np.array([fn(ti) for ti in t]))


def curve_length(
    f: RandersMetric, curve: SampledCurve, direction: str = "forward"
) -> float:
    """Composite-Simpson length of the curve under F.

    Forward integrates F(c, c'), backward F(c, -c').  The Richardson error
    estimate against the coarsened grid is available via
    :func:`curve_length_with_error`.
    """
    return curve_length_with_error(f, curve, direction)[0]


def curve_length_with_error(f, curve, direction="forward"):
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    sign = 1.0 if direction == "forward" else -1.0
    v = curve.velocities()
    y = np.array(
        [f.value(p, sign * vi) for p, vi in zip(curve.x, v)]
    )
    total = float(simpson(y, x=curve.t))
    estimate = np.nan
    if len(curve.t) >= 5:
        coarse = float(simpson(y[::2], x=curve.t[::2]))
        estimate = abs(total - coarse) / 15.0
    return total, estimate


def form_integral(omega: OneFormField, curve: SampledCurve) -> float:
    """Simpson quadrature of omega along the curve (used by length identities)."""
    v = curve.velocities()
    y = np.array([float(omega(p) @ vi) for p, vi in zip(curve.x, v)])
    return float(simpson(y, x=curve.t))


# ---------------------------------------------------------------------------
# Trivial projective transforms


def trivial_transform(
    f: RandersMetric,
    const: float,
    sigma: OneFormField | None = None,
    check_resolution: int = 16,
    closed_tol: float = 1e-10,
) -> RandersMetric:
    """Return const*F + sigma as a Randers metric: g' = const^2 g, w' = const*w + sigma.

    sigma must be closed (verified on a sample grid) and the combination must
    stay positive, which is re-checked through the validity invariant of the
    constructed metric.
    """
    if const <= 0:
        raise ValueError("const must be positive")
    n = f.domain.dimension
    if sigma is None:
        sigma = OneFormField.zero(n)
    if sigma.n != n:
        raise ValueError("sigma dimension mismatch")
    grid = Grid.build(f.domain, check_resolution)
    worst = 0.0
    for p in grid.admissible_points:
        worst = max(worst, exterior_derivative(sigma, p).max_abs())
    if worst > closed_tol:
        raise ValueError(
            f"sigma is not closed: max |d sigma| = {worst:.3g} > {closed_tol:g}"
        )
    c2 = const * const
    new_g = MetricField(
        [
            [f.g.entry(i, j).scaled(c2) for j in range(n)]
            for i in range(n)
        ]
    )
    new_omega = f.omega.scaled(const).plus(sigma)
    # validity of the result doubles as the positivity check:
    # |const*omega + sigma|_{g'} < 1 iff const*F + sigma > 0 on nonzero vectors
    return RandersMetric(
        new_g,
        new_omega,
        f.domain,
        name=f"{f.name}-trivial({const:g})",
        validity_resolution=f.validity_resolution,
    )


# ---------------------------------------------------------------------------
# Pullbacks under diffeomorphisms

# A symbolic pullback is not representable in the expression grammar (it
# needs symbolic Jacobians), so pullbacks are pointwise-evaluable objects;
# every consumer in this package needs only pointwise values.


@dataclass(frozen=True)
class PullbackMetric:
    base: RandersMetric
    phi: Diffeomorphism

    def metric_at(self, p) -> np.ndarray:
        """(phi* g)_ij = g_kl(phi(x)) J^k_i J^l_j."""
        j = self.phi.jacobian(p)
        q = self.phi(p)
        self.base.domain.require_admissible(q)
        return j.T @ self.base.g(q) @ j

    def form_at(self, p) -> np.ndarray:
        return pullback_form_value(self.base.omega, self.phi, p)

    def value(self, p, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        gm = self.metric_at(p)
        return float(np.sqrt(xi @ gm @ xi) + self.form_at(p) @ xi)


def pullback(f: RandersMetric, phi: Diffeomorphism) -> PullbackMetric:
    return PullbackMetric(f, phi)


def pullback_form_value(omega: OneFormField, phi: Diffeomorphism, p) -> np.ndarray:
    """(phi* omega)_i = omega_k(phi(x)) J^k_i evaluated at p."""
    j = phi.jacobian(p)
    return j.T @ omega(phi(p))


def homothety_check(f: RandersMetric, phi: Diffeomorphism, samples, tol=1e-8):
    """Decide whether phi* g = c^2 g with one constant c over the samples.

    Returns (is_homothety, const); const is the mean per-point ratio.
    """
    pb = pullback(f, phi)
    ratios = []
    ok = True
    for p in samples:
        gp = f.g(p)
        gq = pb.metric_at(p)
        c2 = float(np.sum(gq * gp) / np.sum(gp * gp))
        if c2 <= 0:
            ok = False
            break
        ratios.append(np.sqrt(c2))
        scale = np.max(np.abs(gp))
        if np.max(np.abs(gq - c2 * gp)) > tol * scale:
            ok = False
            break
    if not ok or not ratios:
        return False, float("nan")
    ratios = np.array(ratios)
    const = float(ratios.mean())
    spread = float(ratios.max() - ratios.min())
    if spread > tol * max(const, 1e-300):
        return False, const
    return True, const
