"""Chart-level tensor calculus.

Everything works in a single coordinate chart: a metric is an n x n symmetric
matrix of scalar expressions, a 1-form a row of n expressions.  Derivatives
come from the exact jets of :mod:`randersgeo.expr`, never from finite
differences, so curvature-level quantities keep full double precision.

Index conventions follow the skew field L_ik = d omega_i / d x^k
- d omega_k / d x^i used throughout the downstream equivalence formulas
(note this is the negative of the common dω sign convention; it is applied
consistently everywhere).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import ScalarExpression, parse, constant

__all__ = [
    "ChartDomain",
    "Grid",
    "MetricField",
    "OneFormField",
    "SkewMatrix",
    "DegenerateMetricError",
    "InadmissiblePointError",
    "christoffel",
    "exterior_derivative",
    "sectional_curvature",
    "constant_curvature_check",
]


class DegenerateMetricError(ArithmeticError):
    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(
            f"metric is not positive definite at point {self.point.tolist()}"
        )


class InadmissiblePointError(ValueError):
    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"point {self.point.tolist()} is outside the chart domain")


@dataclass(frozen=True)
class ExcludedBall:
    center: tuple
    radius: float


@dataclass(frozen=True)
class ExcludedRay:
    """The set {x_axis = value, x_half_axis <= bound} (side='below') or >=."""

    axis: int
    value: float
    half_axis: int
    bound: float
    side: str = "below"  # 'below' or 'above'


@dataclass(frozen=True)
class ChartDomain:
    """A box with excluded closed balls and axis-aligned rays.

    A point is admissible when it lies strictly inside the box and at
    distance greater than ``margin`` from every excluded set; the admissible
    set is therefore open.
    """

    dimension: int
    lower: tuple
    upper: tuple
    balls: tuple = ()
    rays: tuple = ()
    margin: float | None = None  # defaults to 1e-3 of the box diagonal

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("chart dimension must be at least 2")
        if len(self.lower) != self.dimension or len(self.upper) != self.dimension:
            raise ValueError("box bounds must match the chart dimension")
        if any(a >= b for a, b in zip(self.lower, self.upper)):
            raise ValueError("box must have positive extent along every axis")

    @staticmethod
    def box(bounds, balls=(), rays=(), margin=None):
        lower = tuple(float(a) for a, _ in bounds)
        upper = tuple(float(b) for _, b in bounds)
        return ChartDomain(len(bounds), lower, upper, tuple(balls), tuple(rays), margin)

    @property
    def diagonal(self) -> float:
        return float(
            np.linalg.norm(np.asarray(self.upper) - np.asarray(self.lower))
        )

    @property
    def exclusion_margin(self) -> float:
        return self.margin if self.margin is not None else 1e-3 * self.diagonal

    def exclusion_distance(self, p) -> float:
        """Distance from p to the nearest excluded set (inf when none)."""
        p = np.asarray(p, dtype=float)
        best = np.inf
        for ball in self.balls:
            d = np.linalg.norm(p - np.asarray(ball.center)) - ball.radius
            best = min(best, max(d, 0.0))
        for ray in self.rays:
            da = p[ray.axis] - ray.value
            h = p[ray.half_axis]
            if (ray.side == "below" and h <= ray.bound) or (
                ray.side == "above" and h >= ray.bound
            ):
                d = abs(da)
            else:
                d = float(np.hypot(da, h - ray.bound))
            best = min(best, d)
        return best

    def is_admissible(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dimension,) or not np.all(np.isfinite(p)):
            return False
        for c, a, b in zip(p, self.lower, self.upper):
            if not (a < c < b):
                return False
        if not (self.balls or self.rays):
            return True
        return self.exclusion_distance(p) > self.exclusion_margin

    def require_admissible(self, p):
        if not self.is_admissible(p):
            raise InadmissiblePointError(p)


@dataclass(frozen=True)
class Grid:
    """A rectangular lattice of chart points with an admissibility mask.

    Axes are inset half a step from the box so that lattice points avoid the
    (inadmissible) box boundary.
    """

    domain: ChartDomain
    axes: tuple  # tuple of 1-d arrays
    shape: tuple
    points: np.ndarray = field(repr=False)  # (N, n), all lattice points
    admissible: np.ndarray = field(repr=False)  # (N,) bool

    @staticmethod
    def build(domain: ChartDomain, resolution) -> "Grid":
        n = domain.dimension
        if np.isscalar(resolution):
            resolution = (int(resolution),) * n
        if len(resolution) != n or any(r < 2 for r in resolution):
            raise ValueError("grid resolution must give >= 2 points per axis")
        axes = tuple(
            np.linspace(a, b, r + 2)[1:-1]
            for a, b, r in zip(domain.lower, domain.upper, resolution)
        )
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=-1)
        admissible = np.fromiter(
            (domain.is_admissible(p) for p in points), dtype=bool, count=len(points)
        )
        return Grid(domain, axes, tuple(len(a) for a in axes), points, admissible)

    @property
    def admissible_points(self) -> np.ndarray:
        return self.points[self.admissible]

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class SkewMatrix:
    """An exactly antisymmetric matrix, stored by its strict upper triangle."""

    n: int
    upper: tuple  # entries (i, j) with i < j in row-major order

    @staticmethod
    def from_full(m) -> "SkewMatrix":
        m = np.asarray(m, dtype=float)
        n = m.shape[0]
        if m.shape != (n, n) or not np.array_equal(m, -m.T):
            raise ValueError("matrix is not exactly antisymmetric")
        upper = tuple(m[i, j] for i in range(n) for j in range(i + 1, n))
        return SkewMatrix(n, upper)

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        k = 0
        for i in range(self.n):
            for j in range(i + 1, self.n):
                m[i, j] = self.upper[k]
                m[j, i] = -self.upper[k]
                k += 1
        return m

    def max_abs(self) -> float:
        return max((abs(u) for u in self.upper), default=0.0)


def _as_expression(entry, arity) -> ScalarExpression:
    if isinstance(entry, ScalarExpression):
        if entry.arity != arity:
            raise ValueError("expression arity does not match field dimension")
        return entry
    if isinstance(entry, str):
        return parse(entry, arity)
    return constant(float(entry), arity)


class MetricField:
    """Symmetric matrix of expressions g_ij; only i <= j entries are stored."""

    def __init__(self, entries, dimension=None):
        entries = [list(row) for row in entries]
        n = len(entries)
        if dimension is not None and dimension != n:
            raise ValueError("dimension does not match entry matrix")
        if any(len(row) != n for row in entries):
            raise ValueError("metric entries must form a square matrix")
        exprs = [[_as_expression(e, n) for e in row] for row in entries]
        for i in range(n):
            for j in range(i + 1, n):
                if exprs[i][j].ast != exprs[j][i].ast:
                    raise ValueError(
                        f"metric entries ({i + 1},{j + 1}) and ({j + 1},{i + 1}) "
                        "are not structurally symmetric"
                    )
        self.n = n
        self._upper = tuple(
            tuple(exprs[i][j] for j in range(i, n)) for i in range(n)
        )
        self.is_constant = all(
            e.is_constant() for row in self._upper for e in row
        )
        self._cache = None
        if self.is_constant:
            p0 = np.zeros(n)
            g = self._values_at(p0)
            try:
                self._cache = (g, _spd_inverse(g, p0), np.zeros((n, n, n)))
            except DegenerateMetricError:
                # leave uncached; evaluation reports the queried point
                self.is_constant = False

    def entry(self, i, j) -> ScalarExpression:
        if i > j:
            i, j = j, i
        return self._upper[i][j - i]

    def sources(self):
        return [
            [self.entry(i, j).canonical_source() for j in range(self.n)]
            for i in range(self.n)
        ]

    def _values_at(self, p):
        g = np.empty((self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                g[i, j] = g[j, i] = self.entry(i, j).value(p)
        return g

    def __call__(self, p) -> np.ndarray:
        """Metric matrix at p (positive definiteness checked)."""
        if self.is_constant:
            return self._cache[0].copy()
        g = self._values_at(p)
        _spd_inverse(g, p)
        return g

    def eval(self, p):
        """Return (G, G^{-1}, dG) with dG[k] = dG/dx^k, from exact 1-jets."""
        if self.is_constant:
            g, ginv, dg = self._cache
            return g.copy(), ginv.copy(), dg.copy()
        n = self.n
        g = np.empty((n, n))
        dg = np.empty((n, n, n))
        for i in range(n):
            for j in range(i, n):
                v, grad = self.entry(i, j).jet1(p)
                g[i, j] = g[j, i] = v
                dg[:, i, j] = dg[:, j, i] = grad
        return g, _spd_inverse(g, p), dg

    def eval2(self, p):
        """Return (G, dG, d2G); d2G[k, l] = d^2 G / dx^k dx^l from 2-jets."""
        n = self.n
        g = np.empty((n, n))
        dg = np.empty((n, n, n))
        d2g = np.empty((n, n, n, n))
        for i in range(n):
            for j in range(i, n):
                v, grad, hess = self.entry(i, j).jet2(p)
                g[i, j] = g[j, i] = v
                dg[:, i, j] = dg[:, j, i] = grad
                d2g[:, :, i, j] = d2g[:, :, j, i] = hess
        _spd_inverse(g, p)
        return g, dg, d2g

    @staticmethod
    def identity(n) -> "MetricField":
        return MetricField.diagonal([1.0] * n)

    @staticmethod
    def diagonal(diag) -> "MetricField":
        n = len(diag)
        return MetricField(
            [[diag[i] if i == j else 0.0 for j in range(n)] for i in range(n)]
        )


def _spd_inverse(g, p):
    """Inverse via Cholesky; raises DegenerateMetricError when not SPD."""
    try:
        c = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegenerateMetricError(p) from None
    inv_c = np.linalg.inv(c)
    return inv_c.T @ inv_c


class OneFormField:
    """Covector field omega_i given by n component expressions."""

    def __init__(self, components, dimension=None):
        components = list(components)
        n = len(components)
        if dimension is not None and dimension != n:
            raise ValueError("dimension does not match component count")
        self.n = n
        self.components = tuple(_as_expression(c, n) for c in components)
        self.is_constant = all(c.is_constant() for c in self.components)
        self._const_values = (
            np.array([c.value(np.zeros(n)) for c in self.components])
            if self.is_constant
            else None
        )

    def __call__(self, p) -> np.ndarray:
        if self.is_constant:
            return self._const_values.copy()
        return np.array([c.value(p) for c in self.components])

    def jacobian(self, p) -> np.ndarray:
        """J[i, k] = d omega_i / d x^k."""
        if self.is_constant:
            return np.zeros((self.n, self.n))
        return np.stack([c.jet1(p)[1] for c in self.components])

    def sources(self):
        return [c.canonical_source() for c in self.components]

    def negated(self) -> "OneFormField":
        return OneFormField([c.negated() for c in self.components])

    def scaled(self, k) -> "OneFormField":
        return OneFormField([c.scaled(k) for c in self.components])

    def plus(self, other: "OneFormField") -> "OneFormField":
        if other.n != self.n:
            raise ValueError("cannot add forms of different dimension")
        return OneFormField(
            [a.plus(b) for a, b in zip(self.components, other.components)]
        )

    @staticmethod
    def zero(n) -> "OneFormField":
        return OneFormField([0.0] * n)


# ---------------------------------------------------------------------------
# Operations


def _gamma_ingredients(dg):
    """A[m, k, q] = d g_mk / dx^q + d g_mq / dx^k - d g_kq / dx^m."""
    return np.transpose(dg, (1, 2, 0)) + np.transpose(dg, (1, 0, 2)) - dg


def christoffel(g: MetricField, p) -> np.ndarray:
    """Christoffel symbols; result[j, k, p] = Gamma^j_{kp}, symmetric in (k, p)."""
    _, ginv, dg = g.eval(p)
    return 0.5 * np.einsum("jm,mkq->jkq", ginv, _gamma_ingredients(dg))


def exterior_derivative(omega: OneFormField, p) -> SkewMatrix:
    """L_ik = d omega_i / d x^k - d omega_k / d x^i."""
    j = omega.jacobian(p)
    m = j - j.T
    return SkewMatrix.from_full(m)


def _riemann_lowered(g: MetricField, p):
    """R_{abcd} = g_{ae} R^e_{bcd} with R(e_c, e_d) e_b = R^a_{bcd} e_a."""
    gm, dg, d2g = g.eval2(p)
    ginv = _spd_inverse(gm, p)
    # Gamma^j_{kq} and its partials dGamma[l, j, k, q]
    a = _gamma_ingredients(dg)
    gamma = 0.5 * np.einsum("jm,mkq->jkq", ginv, a)
    # d_l A_{mkq} from second jets
    da = (
        np.transpose(d2g, (0, 2, 3, 1))
        + np.transpose(d2g, (0, 2, 1, 3))
        - d2g
    )
    dginv = -np.einsum("ja,lab,bm->ljm", ginv, dg, ginv)
    dgamma = 0.5 * (
        np.einsum("ljm,mkq->ljkq", dginv, a) + np.einsum("jm,lmkq->ljkq", ginv, da)
    )
    # R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb}
    #           + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb}
    r_up = (
        np.einsum("cadb->abcd", dgamma)
        - np.einsum("dacb->abcd", dgamma)
        + np.einsum("ace,edb->abcd", gamma, gamma)
        - np.einsum("ade,ecb->abcd", gamma, gamma)
    )
    return gm, np.einsum("ae,ebcd->abcd", gm, r_up)


def sectional_curvature(g: MetricField, p, u, v) -> float:
    """Sectional curvature of the plane spanned by u and v at p."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    gm, r_low = _riemann_lowered(g, p)
    uu = u @ gm @ u
    vv = v @ gm @ v
    uv = u @ gm @ v
    gram = uu * vv - uv * uv
    scale = max(uu * vv, 1e-300)
    if gram < 1e-12 * scale:
        raise ValueError("tangent vectors do not span a nondegenerate plane")
    numerator = np.einsum("abcd,a,b,c,d->", r_low, u, v, u, v)
    return float(numerator / gram)


def constant_curvature_check(
    g: MetricField,
    samples,
    planes_per_point: int = 2,
    tol_curv: float = 1e-5,
    rng=None,
):
    """Sample sectional curvatures; constant iff max-min <= tol*(1+|mean|).

    In dimension 2 the plane is unique; in higher dimension
    ``planes_per_point`` random planes are drawn per sample point.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) < 2:
        raise ValueError("need at least 2 sample points")
    n = g.n
    if rng is None:
        rng = np.random.default_rng(0)
    values = []
    for p in samples:
        if n == 2:
            planes = [(np.array([1.0, 0.0]), np.array([0.0, 1.0]))]
        else:
            planes = []
            for _ in range(max(planes_per_point, 2)):
                u = rng.standard_normal(n)
                v = rng.standard_normal(n)
                planes.append((u, v))
        for u, v in planes:
            values.append(sectional_curvature(g, p, u, v))
    values = np.array(values)
    mean = float(values.mean())
    spread = float(values.max() - values.min())
    return spread <= tol_curv * (1.0 + abs(mean)), mean, spread
