"""Projective-equivalence decisions for pairs of Randers metrics.

At each chart point the pair (g, omega) vs (gbar, omegabar) falls into an
algebraic dichotomy: either the metrics are proportional with the skew fields
L = d omega and Lbar = d omegabar proportional by the same coefficient, or
both skew fields vanish.  The pointwise classifier certifies this on sampled
tangent directions through the degree-8 polynomial identity

    Kbar(v)^3 (g_{jp} gbar^{ij} Lbar_{ik} v^k v^p)^2
        = K(v)^3 (gbar_{jp} g^{ij} L_{ik} v^k v^p)^2

and the global verdict assembles the per-point results into one of four
outcomes, carrying reconstructed constants, per-component signs over the
support set of d omega, and residual diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import ndtri
from scipy.stats import qmc

from .geometry import Grid, OneFormField, exterior_derivative
from .geodesic import geodesic_rhs
from .randers import RandersMetric, Diffeomorphism, pullback_form_value
from .geometry import constant_curvature_check

__all__ = [
    "Tolerances",
    "ClassificationSample",
    "PointClassification",
    "EquivalenceVerdict",
    "SupportSet",
    "FlatnessReport",
    "AveragedForm",
    "PointwiseInconsistentError",
    "la3_residual",
    "classify_point",
    "support_set",
    "tangent_sign",
    "global_verdict",
    "flatness_check",
    "average_form",
    "unit_directions",
]

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class Tolerances:
    """Dimensionless decision tolerances (all configurable from the CLI)."""

    tol_alg: float = 1e-8  # algebraic residuals and entrywise verification
    tol_zero: float = 1e-9  # "is zero" scale factor: tol_zero * (1 + field scale)
    tol_const: float = 1e-6  # relative spread of the reconstructed constant
    tol_curvematch: float = 1e-6  # acceleration matching: tol * (|acc| + 1)
    tol_curv: float = 1e-5  # sectional-curvature constancy
    tol_curve: float = 1e-4  # curve coincidence, relative to arclength

    def zero_threshold(self, field_scale: float) -> float:
        return self.tol_zero * (1.0 + field_scale)


class PointwiseInconsistentError(ValueError):
    """Neither orientation of the second metric matches: not pointwise related."""

    def __init__(self, point, direction, residual):
        self.point = np.asarray(point, dtype=float)
        self.direction = np.asarray(direction, dtype=float)
        self.residual = float(residual)
        super().__init__(
            f"no orientation matches at {self.point.tolist()} along "
            f"{self.direction.tolist()} (residual {self.residual:.3g})"
        )


def unit_directions(n: int, count: int, seed: int = 42) -> np.ndarray:
    """Coordinate axes plus quasi-random (Sobol) unit directions."""
    axes = np.eye(n)
    if count <= 0:
        return axes
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    u = sob.random(count)
    z = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return np.vstack([axes, z / norms])


# ---------------------------------------------------------------------------
# The pointwise dichotomy


def la3_residual(g, gbar, l, lbar, v) -> float:
    """Signed, normalized defect of the degree-8 dichotomy identity at v.

    Zero (to rounding) whenever gbar = a^2 g and Lbar = a L, or both skew
    fields vanish.  Even in v by construction.

    The normalizer is the larger of the two sides plus a machine floor.
    The floor matters: when gbar is proportional to g both bilinears are
    annihilated exactly by skew-symmetry, so the sides themselves sit at
    rounding-noise level and cannot normalize their own difference.  The
    floor is eps times the Cauchy-Schwarz bound of the sides, the smallest
    magnitude the computation can resolve.
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    return float(
        _la3_batch(
            np.asarray(g, dtype=float),
            np.asarray(gbar, dtype=float),
            np.asarray(l, dtype=float),
            np.asarray(lbar, dtype=float),
            v[None, :],
        )[0]
    )


_EPS = np.finfo(float).eps


def _la3_batch(g, gbar, l, lbar, dirs):
    k = np.einsum("ij,mi,mj->m", g, dirs, dirs)
    kb = np.einsum("ij,mi,mj->m", gbar, dirs, dirs)
    y = np.linalg.solve(g, (dirs @ l.T).T).T
    ybar = np.linalg.solve(gbar, (dirs @ lbar.T).T).T
    lhs = kb**3 * np.einsum("mi,ij,mj->m", ybar, g, dirs) ** 2
    rhs = k**3 * np.einsum("mi,ij,mj->m", y, gbar, dirs) ** 2
    vnorm = np.linalg.norm(dirs, axis=1)
    bound_l = kb**3 * (np.linalg.norm(g) * np.linalg.norm(ybar, axis=1) * vnorm) ** 2
    bound_r = k**3 * (np.linalg.norm(gbar) * np.linalg.norm(y, axis=1) * vnorm) ** 2
    denom = np.maximum(np.abs(lhs), np.abs(rhs)) + _EPS * (bound_l + bound_r) + _TINY
    return (lhs - rhs) / denom


def _eq9_sample(g, gbar, l, lbar, v):
    """Diagnostics of the pre-squared identity: the eliminated multiplier f
    and the non-tangential defect vector."""
    k = float(v @ g @ v)
    kb = float(v @ gbar @ v)
    y = np.linalg.solve(g, l @ v)
    ybar = np.linalg.solve(gbar, lbar @ v)
    r = np.sqrt(kb) * ybar - np.sqrt(k) * y
    f = float(r @ v) / float(v @ v)
    return k, kb, f, r - f * v


@dataclass(frozen=True)
class ClassificationSample:
    """One sampled tangent direction with its identity residuals."""

    v: np.ndarray
    K: float
    K_bar: float
    f: float
    residual_la1: np.ndarray
    residual_la3: float


@dataclass(frozen=True)
class PointClassification:
    point: np.ndarray
    case: str  # 'proportional' | 'both_closed' | 'inconsistent'
    alpha: float | None = None
    la3_max: float = 0.0
    witness_direction: np.ndarray | None = None
    detail: str = ""
    samples: tuple = ()

    @property
    def is_proportional(self):
        return self.case == "proportional"


def _classify_values(p, g, gbar, l, lbar, dirs, tols, zero_threshold):
    lmax = float(np.max(np.abs(l)))
    lbmax = float(np.max(np.abs(lbar)))
    if lmax <= zero_threshold and lbmax <= zero_threshold:
        return PointClassification(np.asarray(p, float), "both_closed")
    residuals = np.abs(_la3_batch(g, gbar, l, lbar, dirs))
    la3_max = float(residuals.max())
    worst = dirs[int(residuals.argmax())]
    if la3_max > tols.tol_alg:
        return PointClassification(
            np.asarray(p, float),
            "inconsistent",
            la3_max=la3_max,
            witness_direction=worst,
            detail="dichotomy identity fails on a sampled direction",
        )
    # proportional branch: alpha^2 by least squares over the metric entries,
    # sign resolved against the skew fields, then both verified entrywise
    alpha2 = float(np.sum(gbar * g) / np.sum(g * g))
    if alpha2 <= 0.0:
        return PointClassification(
            np.asarray(p, float),
            "inconsistent",
            la3_max=la3_max,
            witness_direction=worst,
            detail="metric ratio is not positive",
        )
    alpha = float(np.sqrt(alpha2))
    if float(np.sum(lbar * l)) < 0.0:
        alpha = -alpha
    g_defect = float(np.max(np.abs(gbar - alpha2 * g))) / float(np.max(np.abs(g)))
    l_defect = float(np.max(np.abs(lbar - alpha * l))) / (max(lmax, lbmax) + _TINY)
    if g_defect > tols.tol_alg or l_defect > tols.tol_alg:
        return PointClassification(
            np.asarray(p, float),
            "inconsistent",
            la3_max=max(la3_max, g_defect, l_defect),
            witness_direction=worst,
            detail=(
                "identity holds on samples but entrywise proportionality "
                f"fails (metric defect {g_defect:.3g}, skew defect {l_defect:.3g})"
            ),
        )
    return PointClassification(
        np.asarray(p, float), "proportional", alpha=alpha, la3_max=la3_max
    )


def classify_point(
    f: RandersMetric,
    f_bar: RandersMetric,
    p,
    n_dirs: int | None = None,
    tols: Tolerances = Tolerances(),
    seed: int = 42,
    field_scale: float = 1.0,
    collect_samples: bool = False,
) -> PointClassification:
    """Classify one chart point into the dichotomy.

    n_dirs defaults to max(2n, 16) quasi-random unit directions on top of the
    coordinate axes; the identity is polynomial in v, so small residuals on
    this set certify it in practice.
    """
    n = f.domain.dimension
    f.domain.require_admissible(p)
    f_bar.domain.require_admissible(p)
    if n_dirs is None:
        n_dirs = max(2 * n, 16)
    g = f.g(p)
    gbar = f_bar.g(p)
    l = exterior_derivative(f.omega, p).matrix
    lbar = exterior_derivative(f_bar.omega, p).matrix
    dirs = unit_directions(n, n_dirs, seed)
    result = _classify_values(
        p, g, gbar, l, lbar, dirs, tols, tols.zero_threshold(field_scale)
    )
    if collect_samples:
        samples = []
        for v in dirs:
            k, kb, fmult, r1 = _eq9_sample(g, gbar, l, lbar, v)
            samples.append(
                ClassificationSample(
                    v=v,
                    K=k,
                    K_bar=kb,
                    f=fmult,
                    residual_la1=r1,
                    residual_la3=la3_residual(g, gbar, l, lbar, v),
                )
            )
        result = PointClassification(
            result.point,
            result.case,
            alpha=result.alpha,
            la3_max=result.la3_max,
            witness_direction=result.witness_direction,
            detail=result.detail,
            samples=tuple(samples),
        )
    return result


# ---------------------------------------------------------------------------
# Support sets


@dataclass(frozen=True)
class SupportComponent:
    id: int
    sample_count: int
    centroid: np.ndarray
    sign: int | None = None


@dataclass(frozen=True)
class SupportSet:
    """Grid points where the differential of the form does not vanish."""

    grid: Grid
    mask: np.ndarray  # (N,) bool over the lattice
    labels: np.ndarray  # (N,) int, 0 outside the support
    components: tuple
    tol_zero: float
    field_scale: float

    @property
    def count(self):
        return len(self.components)


def _skew_max_per_point(omega: OneFormField, grid: Grid) -> np.ndarray:
    out = np.zeros(len(grid))
    for idx in np.flatnonzero(grid.admissible):
        out[idx] = exterior_derivative(omega, grid.points[idx]).max_abs()
    return out


def support_set(
    omega: OneFormField, grid: Grid, tols: Tolerances = Tolerances()
) -> SupportSet:
    """M0 = {p : max_ik |L_ik(p)| > threshold}, with face-adjacency components."""
    magnitudes = _skew_max_per_point(omega, grid)
    return _support_from_magnitudes(magnitudes, grid, tols)


def _support_from_magnitudes(magnitudes, grid, tols):
    scale = float(magnitudes.max(initial=0.0))
    threshold = tols.zero_threshold(scale)
    mask = (magnitudes > threshold) & grid.admissible
    labels, n_comp = ndimage.label(mask.reshape(grid.shape))
    labels = labels.ravel()
    components = []
    for cid in range(1, n_comp + 1):
        idx = np.flatnonzero(labels == cid)
        components.append(
            SupportComponent(
                id=cid,
                sample_count=len(idx),
                centroid=grid.points[idx].mean(axis=0),
            )
        )
    return SupportSet(grid, mask, labels, tuple(components), threshold, scale)


# ---------------------------------------------------------------------------
# Tangent signs (S+/S- of the pointwise relation)


def _normal_part(a, xi):
    xhat = xi / np.linalg.norm(xi)
    return a - (a @ xhat) * xhat


def tangent_sign(
    f: RandersMetric,
    f_bar: RandersMetric,
    p,
    xi,
    tols: Tolerances = Tolerances(),
    field_scale: float = 1.0,
) -> str:
    """Classify xi as 'positive' / 'negative' / 'undetermined' at p.

    Positive means the forward F-geodesic through (p, xi) bends like the
    forward Fbar-geodesic; negative like the backward one.  When d omega
    annihilates xi the two F-orientations have equal curvature and the sign
    is undetermined.  Raises PointwiseInconsistentError when neither
    orientation matches.
    """
    xi = np.asarray(xi, dtype=float)
    l = exterior_derivative(f.omega, p).matrix
    if float(np.max(np.abs(l @ xi))) <= tols.zero_threshold(field_scale):
        return "undetermined"
    a_f = geodesic_rhs(f, p, xi, "forward")
    a_fwd = geodesic_rhs(f_bar, p, xi, "forward")
    a_bwd = geodesic_rhs(f_bar, p, xi, "backward")
    n_f = _normal_part(a_f, xi)
    gate = tols.tol_curvematch * (float(np.linalg.norm(a_f)) + 1.0)
    d_fwd = float(np.max(np.abs(n_f - _normal_part(a_fwd, xi))))
    d_bwd = float(np.max(np.abs(n_f - _normal_part(a_bwd, xi))))
    fwd_ok = d_fwd <= gate
    bwd_ok = d_bwd <= gate
    if fwd_ok and bwd_ok:
        return "undetermined"
    if fwd_ok:
        return "positive"
    if bwd_ok:
        return "negative"
    raise PointwiseInconsistentError(p, xi, min(d_fwd, d_bwd))


# ---------------------------------------------------------------------------
# Global verdicts


OUTCOME_PROPORTIONAL = "proportional_global"
OUTCOME_RIEMANNIAN = "reduces_to_riemannian"
OUTCOME_MIXED = "mixed_signs"
OUTCOME_REFUTED = "refuted"


@dataclass(frozen=True)
class EquivalenceVerdict:
    mode: str  # 'oriented' | 'unoriented'
    outcome: str
    const: float | None
    residuals: dict
    components: tuple
    witnesses: tuple
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "outcome": self.outcome,
            "const": self.const,
            "residuals": dict(self.residuals),
            "components": [
                {
                    "id": c.id,
                    "sign": c.sign,
                    "sample_count": c.sample_count,
                }
                for c in self.components
            ],
            "witnesses": [dict(w) for w in self.witnesses],
            "diagnostics": dict(self.diagnostics),
        }


def _witness(point, direction=None, residual=None, note=None):
    w = {"point": np.asarray(point, float).tolist()}
    w["direction"] = (
        None if direction is None else np.asarray(direction, float).tolist()
    )
    w["residual"] = None if residual is None else float(residual)
    if note:
        w["note"] = note
    return w


def global_verdict(
    f: RandersMetric,
    f_bar: RandersMetric,
    grid: Grid,
    mode: str = "oriented",
    tols: Tolerances = Tolerances(),
    n_dirs: int | None = None,
    seed: int = 42,
) -> EquivalenceVerdict:
    """Classify every grid point and assemble the equivalence verdict.

    Oriented mode decides projective equivalence (single positive constant);
    unoriented mode decides the pointwise relation, assigning one sign per
    connected component of the support set of d omega.

    Theory note: mixing a proportional region with a region where the
    metrics are non-proportional (forms closed there) cannot occur for
    genuinely equivalent pairs; the verdict reports such grids as refuted
    with both witnesses rather than silently merging.
    """
    if mode not in ("oriented", "unoriented"):
        raise ValueError("mode must be 'oriented' or 'unoriented'")
    if f.domain != f_bar.domain:
        raise ValueError("the two metrics live on different chart domains")
    idx_adm = np.flatnonzero(grid.admissible)
    if len(idx_adm) == 0:
        raise ValueError("grid has no admissible points")
    n = f.domain.dimension
    if n_dirs is None:
        n_dirs = max(2 * n, 16)
    dirs = unit_directions(n, n_dirs, seed)

    # first pass: field values everywhere (also fixes the zero threshold)
    gs, gbars, ls, lbars = {}, {}, {}, {}
    l_mag = np.zeros(len(grid))
    lb_mag = np.zeros(len(grid))
    for idx in idx_adm:
        p = grid.points[idx]
        gs[idx] = f.g(p)
        gbars[idx] = f_bar.g(p)
        ls[idx] = exterior_derivative(f.omega, p).matrix
        lbars[idx] = exterior_derivative(f_bar.omega, p).matrix
        l_mag[idx] = np.max(np.abs(ls[idx]))
        lb_mag[idx] = np.max(np.abs(lbars[idx]))
    field_scale = float(max(l_mag.max(), lb_mag.max()))
    zero_threshold = tols.zero_threshold(field_scale)

    support = _support_from_magnitudes(np.maximum(l_mag, lb_mag), grid, tols)

    # second pass: classify
    classifications = {}
    la3_max = 0.0
    for idx in idx_adm:
        c = _classify_values(
            grid.points[idx],
            gs[idx],
            gbars[idx],
            ls[idx],
            lbars[idx],
            dirs,
            tols,
            zero_threshold,
        )
        la3_max = max(la3_max, c.la3_max)
        classifications[idx] = c

    diagnostics = {
        "grid_shape": list(grid.shape),
        "admissible_points": int(len(idx_adm)),
        "n_dirs": int(len(dirs)),
        "seed": int(seed),
        "field_scale": field_scale,
        "zero_threshold": zero_threshold,
    }
    residuals = {
        "la3_max": la3_max,
        "closedness_max": None,
        "curvature_spread": None,
    }

    def refuted(witnesses, note):
        diagnostics["refutation"] = note
        return EquivalenceVerdict(
            mode,
            OUTCOME_REFUTED,
            None,
            residuals,
            support.components,
            tuple(witnesses),
            diagnostics,
        )

    for idx, c in classifications.items():
        if c.case == "inconsistent":
            return refuted(
                [_witness(c.point, c.witness_direction, c.la3_max, c.detail)],
                "a grid point fails the pointwise dichotomy",
            )

    prop_idx = [i for i, c in classifications.items() if c.is_proportional]
    if not prop_idx:
        residuals["closedness_max"] = float(max(l_mag.max(), lb_mag.max()))
        return EquivalenceVerdict(
            mode,
            OUTCOME_RIEMANNIAN,
            None,
            residuals,
            support.components,
            (),
            diagnostics,
        )

    alphas = np.array([classifications[i].alpha for i in prop_idx])
    abs_alphas = np.abs(alphas)
    const = float(abs_alphas.mean())
    spread = float(abs_alphas.max() - abs_alphas.min())
    diagnostics["const_spread"] = spread
    if spread > tols.tol_const * const:
        i_lo = prop_idx[int(abs_alphas.argmin())]
        i_hi = prop_idx[int(abs_alphas.argmax())]
        return refuted(
            [
                _witness(grid.points[i_lo], None, abs_alphas.min(), "smallest |alpha|"),
                _witness(grid.points[i_hi], None, abs_alphas.max(), "largest |alpha|"),
            ],
            "no single constant fits all proportional points",
        )

    # the cited global-rigidity step: once a proportional region exists the
    # metrics must be proportional with the same constant everywhere,
    # including where both forms are closed
    c2 = const * const
    for idx, c in classifications.items():
        if c.case != "both_closed":
            continue
        defect = float(np.max(np.abs(gbars[idx] - c2 * gs[idx]))) / float(
            np.max(np.abs(gs[idx]))
        )
        if defect > tols.tol_alg:
            return refuted(
                [
                    _witness(
                        grid.points[prop_idx[0]],
                        None,
                        None,
                        "proportional region representative",
                    ),
                    _witness(
                        grid.points[idx],
                        None,
                        defect,
                        "closed-form region where metrics are not proportional "
                        "(contradicts global rigidity of proportionality)",
                    ),
                ],
                "proportional and non-proportional closed-form regions coexist",
            )

    # per-component signs over the support set
    sign_by_component = {}
    for idx in prop_idx:
        cid = int(support.labels[idx])
        if cid == 0:
            continue
        s = 1 if classifications[idx].alpha > 0 else -1
        if cid in sign_by_component and sign_by_component[cid] != s:
            return refuted(
                [_witness(grid.points[idx], None, None, "sign flip inside component")],
                "a support component carries both signs",
            )
        sign_by_component[cid] = s

    components = tuple(
        SupportComponent(
            id=c.id,
            sample_count=c.sample_count,
            centroid=c.centroid,
            sign=sign_by_component.get(c.id),
        )
        for c in support.components
    )

    def closedness(signed_const_for):
        worst = 0.0
        for idx in classifications:
            s = signed_const_for(idx)
            worst = max(worst, float(np.max(np.abs(lbars[idx] - s * const * ls[idx]))))
        return worst

    if mode == "oriented":
        negatives = [i for i in prop_idx if classifications[i].alpha < 0]
        if negatives:
            i0 = negatives[0]
            return refuted(
                [
                    _witness(
                        grid.points[i0],
                        None,
                        classifications[i0].alpha,
                        "forward geodesics reverse here (negative alpha)",
                    )
                ],
                "no single positive constant serves all points",
            )
        residuals["closedness_max"] = closedness(lambda idx: 1)
        return EquivalenceVerdict(
            mode,
            OUTCOME_PROPORTIONAL,
            const,
            residuals,
            components,
            (),
            diagnostics,
        )

    # unoriented mode
    residuals["closedness_max"] = closedness(
        lambda idx: sign_by_component.get(int(support.labels[idx]), 1)
    )
    if all(s == 1 for s in sign_by_component.values()):
        return EquivalenceVerdict(
            mode,
            OUTCOME_PROPORTIONAL,
            const,
            residuals,
            components,
            (),
            diagnostics,
        )
    return EquivalenceVerdict(
        mode,
        OUTCOME_MIXED,
        const,
        residuals,
        components,
        (),
        diagnostics,
    )


# ---------------------------------------------------------------------------
# Projective flatness


@dataclass(frozen=True)
class FlatnessReport:
    projectively_flat: bool
    curvature: float
    curvature_spread: float
    closedness_residual: float
    witness: dict | None = None

    def to_dict(self):
        return {
            "projectively_flat": self.projectively_flat,
            "curvature": self.curvature,
            "curvature_spread": self.curvature_spread,
            "closedness_residual": self.closedness_residual,
            "witness": self.witness,
        }


def flatness_check(
    f: RandersMetric,
    grid: Grid,
    tols: Tolerances = Tolerances(),
    rng=None,
) -> FlatnessReport:
    """Projectively flat iff g has constant sectional curvature and d omega = 0."""
    magnitudes = _skew_max_per_point(f.omega, grid)
    scale = float(magnitudes.max(initial=0.0))
    closed_max = scale
    threshold = tols.zero_threshold(scale)
    witness = None
    is_closed = closed_max <= threshold
    if not is_closed:
        idx = int(magnitudes.argmax())
        witness = _witness(
            grid.points[idx], None, closed_max, "largest |d omega| on the grid"
        )
    pts = grid.admissible_points
    is_const, value, spread = constant_curvature_check(
        f.g, pts, tol_curv=tols.tol_curv, rng=rng
    )
    if not is_const and witness is None:
        witness = _witness(pts[0], None, spread, "sectional curvature is not constant")
    return FlatnessReport(
        projectively_flat=bool(is_const and is_closed),
        curvature=value,
        curvature_spread=spread,
        closedness_residual=closed_max,
        witness=witness,
    )


# ---------------------------------------------------------------------------
# Finite-group averaging of the 1-form


@dataclass(frozen=True)
class AveragedForm:
    """omega-hat = average of the pullbacks of omega over a finite group.

    Evaluable at any chart point through its defining finite sum, and
    materialized on a grid for reporting.
    """

    omega: OneFormField
    group: tuple
    grid_points: np.ndarray
    grid_values: np.ndarray  # (N, n); NaN rows at inadmissible lattice points

    def at(self, p) -> np.ndarray:
        vals = [pullback_form_value(self.omega, phi, p) for phi in self.group]
        return np.mean(vals, axis=0)


def average_form(
    omega: OneFormField, group, grid: Grid
) -> tuple[AveragedForm, float]:
    """Uniform-weight average of pullbacks; returns (omega_hat, residual).

    The residual is the finite-difference estimate, over the lattice, of the
    exterior derivative of lambda-hat = omega - omega_hat (the averaging
    argument predicts lambda-hat is closed when every omega - phi*omega is).
    """
    group = tuple(group)
    if not group:
        raise ValueError("group must contain at least one diffeomorphism")
    n = omega.n
    values = np.full((len(grid), n), np.nan)
    lam = np.full((len(grid), n), np.nan)
    for idx in np.flatnonzero(grid.admissible):
        p = grid.points[idx]
        acc = np.zeros(n)
        for phi in group:
            q = phi(p)
            if not grid.domain.is_admissible(q):
                raise ValueError(
                    f"group element maps grid point {p.tolist()} to the "
                    f"inadmissible point {q.tolist()}"
                )
            acc += pullback_form_value(omega, phi, p)
        avg = acc / len(group)
        values[idx] = avg
        lam[idx] = omega(p) - avg
    avg_form = AveragedForm(omega, group, grid.points, values)
    residual = _fd_closedness(lam.reshape(*grid.shape, n), grid.axes)
    return avg_form, residual


def _fd_closedness(lam_lattice, axes) -> float:
    """max |d lambda_i/d x^j - d lambda_j/d x^i| by central differences."""
    n = lam_lattice.shape[-1]
    partials = []
    for i in range(n):
        partials.append(np.gradient(lam_lattice[..., i], *axes, edge_order=1))
    if n == 1:
        return 0.0
    worst = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = partials[i][j] - partials[j][i]
            if np.any(np.isfinite(d)):
                worst = max(worst, float(np.nanmax(np.abs(d))))
    return worst
