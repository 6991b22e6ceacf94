"""Randers metrics on coordinate charts: geodesics and projective equivalence."""

__version__ = "0.1.0"

from .expr import ParseError, EvalDomainError, ScalarExpression, parse, eval_jet2

__all__ = [
    "ParseError",
    "EvalDomainError",
    "ScalarExpression",
    "parse",
    "eval_jet2",
    "__version__",
]
