"""Built-in problem instances used by tests and documentation.

Every instance is frozen: identical expression sources, domains and grids on
every build, so downstream verdicts are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .geometry import ChartDomain, ExcludedRay, MetricField, OneFormField
from .randers import RandersMetric, trivial_transform

__all__ = ["GalleryInstance", "build", "ids"]


@dataclass(frozen=True)
class GalleryInstance:
    id: str
    description: str
    F: RandersMetric
    F_bar: RandersMetric | None
    grid_resolution: int
    expected: dict
    notes: str = ""


# omega of the 'constant-field' instance: a rotational gauge damped by
# 1/(1 + |x|^2); its exterior derivative 0.6/(1+|x|^2)^2 never vanishes
_ROT_FORM = (
    "-0.3*x2/(1 + x1^2 + x2^2)",
    "0.3*x1/(1 + x1^2 + x2^2)",
)

# Two rotational bump forms of radius 1/2 around (+1, 0) and (-1, 0); the
# bump argument is the squared radius so the sources stay sqrt-free at the
# ball centers (the radius argument 0.25 is the squared ball radius).
_BUMP_PLUS = "bump((x1 - 1)^2 + x2^2, 0.25)"
_BUMP_MINUS = "bump((x1 + 1)^2 + x2^2, 0.25)"

_EX2_OMEGA = (
    f"-0.25*x2*({_BUMP_PLUS} + {_BUMP_MINUS})",
    f"0.25*((x1 - 1)*{_BUMP_PLUS} + (x1 + 1)*{_BUMP_MINUS})",
)
_EX2_OMEGA_BAR = (
    f"-0.25*x2*({_BUMP_PLUS} - {_BUMP_MINUS})",
    f"0.25*((x1 - 1)*{_BUMP_PLUS} - (x1 + 1)*{_BUMP_MINUS})",
)


def _box(bounds, **kw):
    return ChartDomain.box(bounds, **kw)


def _build_flat_riemannian():
    dom = _box([(-2, 2), (-2, 2)])
    f = RandersMetric(MetricField.identity(2), OneFormField.zero(2), dom,
                      name="flat-riemannian")
    return GalleryInstance(
        "flat-riemannian",
        "Euclidean plane, no 1-form",
        f,
        None,
        33,
        {"flatness": {"projectively_flat": True, "curvature": 0.0}},
    )


def _build_flat_closed_form():
    dom = _box([(-2, 2), (-2, 2)])
    f = RandersMetric(
        MetricField.identity(2),
        OneFormField(["0.3", "0"]),
        dom,
        name="flat-closed-form",
    )
    return GalleryInstance(
        "flat-closed-form",
        "Euclidean plane plus the closed form d(0.3 x1)",
        f,
        None,
        33,
        {"flatness": {"projectively_flat": True, "curvature": 0.0}},
    )


def _build_constant_field():
    dom = _box([(-1, 1), (-1, 1)])
    f = RandersMetric(
        MetricField.identity(2), OneFormField(_ROT_FORM), dom, name="constant-field"
    )
    return GalleryInstance(
        "constant-field",
        "flat metric with a rotational gauge form; d omega never vanishes",
        f,
        None,
        33,
        {
            "flatness": {"projectively_flat": False},
            "support_components": 1,
        },
    )


def _build_trivial_pair():
    base = _build_constant_field().F
    f_bar = trivial_transform(base, 2.0, OneFormField(["x2", "x1"]))
    return GalleryInstance(
        "trivial-pair",
        "constant-field paired with 2*F + d(x1*x2)",
        base,
        f_bar,
        33,
        {
            "oriented": {"outcome": "proportional_global", "const": 2.0},
            "unoriented": {"outcome": "proportional_global", "const": 2.0},
        },
    )


def _build_reversal_pair():
    base = _build_constant_field().F
    return GalleryInstance(
        "reversal-pair",
        "constant-field paired with its reverse (omega negated)",
        base,
        base.reversed(),
        33,
        {
            "oriented": {"outcome": "refuted"},
            "unoriented": {
                "outcome": "mixed_signs",
                "const": 1.0,
                "signs": [-1],
            },
        },
    )


def _build_example_2():
    dom = _box(
        [(-4, 4), (-4, 4)],
        rays=(ExcludedRay(axis=0, value=0.0, half_axis=1, bound=2.0, side="below"),),
        margin=1e-3,
    )
    f = RandersMetric(
        MetricField.identity(2),
        OneFormField(_EX2_OMEGA),
        dom,
        name="example-2",
    )
    f_bar = RandersMetric(
        MetricField.identity(2),
        OneFormField(_EX2_OMEGA_BAR),
        dom,
        name="example-2-bar",
    )
    return GalleryInstance(
        "example-2",
        "slit plane with bump forms in two balls; omega_bar = -omega on the "
        "left ball and omega elsewhere",
        f,
        f_bar,
        65,
        {
            "oriented": {"outcome": "refuted"},
            "unoriented": {"outcome": "mixed_signs", "signs": [1, -1]},
            "support_components": 2,
            "flatness": {"projectively_flat": False},
        },
        notes="ball centers (+1, 0) and (-1, 0), radius 1/2",
    )


def _build_sphere():
    dom = _box([(-1, 1), (-1, 1)])
    s = "4/((1 + x1^2 + x2^2)^2)"
    f = RandersMetric(
        MetricField([[s, "0"], ["0", s]]),
        OneFormField.zero(2),
        dom,
        name="sphere",
    )
    return GalleryInstance(
        "sphere",
        "stereographic chart of the unit round sphere",
        f,
        None,
        33,
        {"flatness": {"projectively_flat": True, "curvature": 1.0}},
    )


def _build_hyperbolic():
    dom = _box([(-2, 2), (0.5, 2.5)])
    s = "1/(x2^2)"
    f = RandersMetric(
        MetricField([[s, "0"], ["0", s]]),
        OneFormField.zero(2),
        dom,
        name="hyperbolic",
    )
    return GalleryInstance(
        "hyperbolic",
        "upper half-plane model, curvature -1",
        f,
        None,
        33,
        {"flatness": {"projectively_flat": True, "curvature": -1.0}},
    )


_BUILDERS = {
    "flat-riemannian": _build_flat_riemannian,
    "flat-closed-form": _build_flat_closed_form,
    "constant-field": _build_constant_field,
    "trivial-pair": _build_trivial_pair,
    "reversal-pair": _build_reversal_pair,
    "example-2": _build_example_2,
    "sphere": _build_sphere,
    "hyperbolic": _build_hyperbolic,
}


def ids():
    return list(_BUILDERS)


@lru_cache(maxsize=None)
def build(instance_id: str) -> GalleryInstance:
    try:
        builder = _BUILDERS[instance_id]
    except KeyError:
        raise KeyError(
            f"unknown gallery id {instance_id!r}; known: {', '.join(ids())}"
        ) from None
    return builder()
