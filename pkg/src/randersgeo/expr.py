"""Closed-form scalar expressions over chart coordinates x1..xn.

A small fixed arithmetic grammar (left-associative + - * /, right-associative
^ with a constant exponent, unary minus, and a table of one- and two-argument
functions) is parsed into an immutable AST. Evaluation runs either over plain
floats or over forward-mode jets, so every expression yields exact first and
second partial derivatives without finite differencing.

The built-in ``bump(r, R)`` equals exp(1/((r/R)^2 - 1)) for |r| < R and is
identically zero (with all derivatives) for |r| >= R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarExpression",
    "ParseError",
    "EvalDomainError",
    "parse",
    "eval_jet2",
    "FUNCTIONS",
]

# function name -> number of arguments
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "atan": 1,
    "atan2": 2,
    "min": 2,
    "max": 2,
    "bump": 2,
}


class ParseError(ValueError):
    """Malformed expression source, with the byte offset of the bad token."""

    def __init__(self, offset, expected, found=""):
        self.offset = offset
        self.expected = expected
        self.found = found
        detail = f", found {found!r}" if found else ""
        super().__init__(f"parse error at offset {offset}: expected {expected}{detail}")


class EvalDomainError(ArithmeticError):
    """Evaluation left the real domain (log of non-positive, 1/0, ...)."""

    def __init__(self, reason, subexpression):
        self.reason = reason
        self.subexpression = subexpression
        super().__init__(f"{reason} in subexpression '{subexpression}'")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def to_source(node) -> str:
    """Render an AST back to parseable source (canonical spacing)."""
    return _print(node, 0)


def _print(node, parent_prec):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        inner = _print(node.arg, _NEG_PREC)
        text = f"-{inner}"
        return f"({text})" if parent_prec > _NEG_PREC else text
    if isinstance(node, Call):
        args = ", ".join(_print(a, 0) for a in node.args)
        return f"{node.func}({args})"
    prec = _PREC[node.op]
    if node.op == "^":
        # right-associative; exponent is a folded constant
        left = _print(node.left, prec + 1)
        right = _print(node.right, prec)
        text = f"{left}{node.op}{right}"
    else:
        left = _print(node.left, prec)
        right = _print(node.right, prec + 1)
        text = f"{left} {node.op} {right}"
    return f"({text})" if parent_prec > prec else text


# ---------------------------------------------------------------------------
# Tokenizer


_TOKEN_OPS = set("+-*/^(),")


def _tokenize(source):
    """Yield (kind, text, offset) triples; kinds: num, ident, op, end."""
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c in _TOKEN_OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ParseError(i, "a number", text) from None
            tokens.append(("num", text, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ParseError(i, "a token", c)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent)


class _Parser:
    def __init__(self, source, arity):
        self.source = source
        self.arity = arity
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op, what):
        kind, text, off = self.peek()
        if kind == "op" and text == op:
            return self.advance()
        raise ParseError(off, what, text)

    def parse(self):
        node = self.expression()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(off, "end of input", text)
        return node

    def expression(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.unary())
            else:
                return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, off = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            exp_off = self.peek()[2]
            exponent = self.unary()
            value = _const_value(exponent)
            if value is None:
                raise ParseError(exp_off, "a numeric exponent")
            return BinOp("^", base, Num(value))
        return base

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                return self.call(text, off)
            if len(text) > 1 and text[0] == "x" and text[1:].isdigit():
                index = int(text[1:])
                if index < 1 or index > self.arity:
                    raise ParseError(
                        off, f"a variable x1..x{self.arity} (arity mismatch)", text
                    )
                return Var(index - 1)
            raise ParseError(off, "a known identifier", text)
        if kind == "op" and text == "(":
            node = self.expression()
            self.expect_op(")", "')'")
            return node
        raise ParseError(off, "operand", text)

    def call(self, func, off):
        self.expect_op("(", f"'(' after {func}")
        args = [self.expression()]
        while True:
            kind, text, toff = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.expression())
            else:
                break
        self.expect_op(")", "')'")
        want = FUNCTIONS[func]
        if len(args) != want:
            raise ParseError(off, f"{want} argument(s) to {func}", f"{len(args)} given")
        if func == "bump":
            radius = _const_value(args[1])
            if radius is None or radius <= 0:
                raise ParseError(off, "a positive constant bump radius")
            args[1] = Num(radius)
        return Call(func, tuple(args))


def _const_value(node):
    """Evaluate a variable-free subtree to a float, else None."""
    if _has_var(node):
        return None
    return _eval(node, ())


def _has_var(node):
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _has_var(node.arg)
    if isinstance(node, BinOp):
        return _has_var(node.left) or _has_var(node.right)
    if isinstance(node, Call):
        return any(_has_var(a) for a in node.args)
    return False


# ---------------------------------------------------------------------------
# Forward-mode jets
#
# _Jet1 carries (value, gradient) with gradients as tuples of plain floats:
# this is the hot path of the geodesic integrator.  _Jet2 additionally carries
# the Hessian and uses numpy storage.  Both are immutable.


class _Jet1:
    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = g

    @staticmethod
    def variable(point, index):
        g = tuple(1.0 if k == index else 0.0 for k in range(len(point)))
        return _Jet1(float(point[index]), g)

    def _const(self, c):
        return _Jet1(c, tuple(0.0 for _ in self.g))

    def __add__(self, o):
        if isinstance(o, _Jet1):
            return _Jet1(self.v + o.v, tuple(a + b for a, b in zip(self.g, o.g)))
        return _Jet1(self.v + o, self.g)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, _Jet1):
            return _Jet1(self.v - o.v, tuple(a - b for a, b in zip(self.g, o.g)))
        return _Jet1(self.v - o, self.g)

    def __rsub__(self, o):
        return _Jet1(o - self.v, tuple(-a for a in self.g))

    def __mul__(self, o):
        if isinstance(o, _Jet1):
            av, bv = self.v, o.v
            return _Jet1(av * bv, tuple(av * b + bv * a for a, b in zip(self.g, o.g)))
        return _Jet1(self.v * o, tuple(a * o for a in self.g))

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, _Jet1):
            q = self.v / o.v
            inv = 1.0 / o.v
            return _Jet1(q, tuple((a - q * b) * inv for a, b in zip(self.g, o.g)))
        inv = 1.0 / o
        return _Jet1(self.v * inv, tuple(a * inv for a in self.g))

    def __rtruediv__(self, o):
        q = o / self.v
        s = -q / self.v
        return _Jet1(q, tuple(s * a for a in self.g))

    def __neg__(self):
        return _Jet1(-self.v, tuple(-a for a in self.g))

    def chain(self, f, fp):
        """Lift a scalar function given value f and derivative fp at self.v."""
        return _Jet1(f, tuple(fp * a for a in self.g))


class _Jet2:
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    @staticmethod
    def variable(point, index):
        n = len(point)
        g = np.zeros(n)
        g[index] = 1.0
        return _Jet2(float(point[index]), g, np.zeros((n, n)))

    def _const(self, c):
        n = len(self.g)
        return _Jet2(c, np.zeros(n), np.zeros((n, n)))

    def __add__(self, o):
        if isinstance(o, _Jet2):
            return _Jet2(self.v + o.v, self.g + o.g, self.h + o.h)
        return _Jet2(self.v + o, self.g, self.h)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, _Jet2):
            return _Jet2(self.v - o.v, self.g - o.g, self.h - o.h)
        return _Jet2(self.v - o, self.g, self.h)

    def __rsub__(self, o):
        return _Jet2(o - self.v, -self.g, -self.h)

    def __mul__(self, o):
        if isinstance(o, _Jet2):
            cross = np.outer(self.g, o.g)
            # symmetrize first: adding the two outer products before the
            # (symmetric) h-terms keeps the result exactly symmetric
            sym = cross + cross.T
            return _Jet2(
                self.v * o.v,
                self.v * o.g + o.v * self.g,
                self.v * o.h + o.v * self.h + sym,
            )
        return _Jet2(self.v * o, self.g * o, self.h * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, _Jet2):
            q = self.v / o.v
            g = (self.g - q * o.g) / o.v
            cross = np.outer(g, o.g)
            h = (self.h - q * o.h - (cross + cross.T)) / o.v
            return _Jet2(q, g, h)
        return _Jet2(self.v / o, self.g / o, self.h / o)

    def __rtruediv__(self, o):
        return self._const(o) / self

    def __neg__(self):
        return _Jet2(-self.v, -self.g, -self.h)

    def chain(self, f, fp, fpp):
        """Lift a scalar function with value f, derivative fp, second fpp."""
        return _Jet2(f, fp * self.g, fp * self.h + fpp * np.outer(self.g, self.g))


def _is_jet(x):
    return isinstance(x, (_Jet1, _Jet2))


def _val(x):
    return x.v if _is_jet(x) else x


def _as_jet_like(x, template):
    return x if _is_jet(x) else template._const(float(x))


# -- lifted functions -------------------------------------------------------


def _f_sin(x, node):
    if isinstance(x, _Jet1):
        return x.chain(math.sin(x.v), math.cos(x.v))
    if isinstance(x, _Jet2):
        s = math.sin(x.v)
        return x.chain(s, math.cos(x.v), -s)
    return math.sin(x)


def _f_cos(x, node):
    if isinstance(x, _Jet1):
        return x.chain(math.cos(x.v), -math.sin(x.v))
    if isinstance(x, _Jet2):
        c = math.cos(x.v)
        return x.chain(c, -math.sin(x.v), -c)
    return math.cos(x)


def _f_tan(x, node):
    v = _val(x)
    t = math.tan(v)
    sec2 = 1.0 + t * t
    if isinstance(x, _Jet1):
        return x.chain(t, sec2)
    if isinstance(x, _Jet2):
        return x.chain(t, sec2, 2.0 * t * sec2)
    return t


def _f_exp(x, node):
    v = _val(x)
    try:
        e = math.exp(v)
    except OverflowError:
        raise EvalDomainError("overflow in exp", to_source(node)) from None
    if isinstance(x, _Jet1):
        return x.chain(e, e)
    if isinstance(x, _Jet2):
        return x.chain(e, e, e)
    return e


def _f_log(x, node):
    v = _val(x)
    if v <= 0.0:
        raise EvalDomainError("log of non-positive value", to_source(node))
    lv = math.log(v)
    if isinstance(x, _Jet1):
        return x.chain(lv, 1.0 / v)
    if isinstance(x, _Jet2):
        return x.chain(lv, 1.0 / v, -1.0 / (v * v))
    return lv


def _f_sqrt(x, node):
    v = _val(x)
    if v < 0.0:
        raise EvalDomainError("sqrt of negative value", to_source(node))
    r = math.sqrt(v)
    if not _is_jet(x):
        return r
    if v == 0.0:
        raise EvalDomainError("sqrt derivative at zero", to_source(node))
    fp = 0.5 / r
    if isinstance(x, _Jet1):
        return x.chain(r, fp)
    return x.chain(r, fp, -0.25 / (v * r))


def _f_abs(x, node):
    # sign(0) = 0 convention; not differentiable at the kink
    v = _val(x)
    s = 0.0 if v == 0.0 else math.copysign(1.0, v)
    if isinstance(x, _Jet1):
        return x.chain(abs(v), s)
    if isinstance(x, _Jet2):
        return x.chain(abs(v), s, 0.0)
    return abs(v)


def _f_atan(x, node):
    v = _val(x)
    d = 1.0 / (1.0 + v * v)
    if isinstance(x, _Jet1):
        return x.chain(math.atan(v), d)
    if isinstance(x, _Jet2):
        return x.chain(math.atan(v), d, -2.0 * v * d * d)
    return math.atan(v)


def _f_atan2(y, x, node):
    yv, xv = _val(y), _val(x)
    if yv == 0.0 and xv == 0.0:
        raise EvalDomainError("atan2(0, 0)", to_source(node))
    if not (_is_jet(y) or _is_jet(x)):
        return math.atan2(yv, xv)
    template = y if _is_jet(y) else x
    y = _as_jet_like(y, template)
    x = _as_jet_like(x, template)
    r2 = xv * xv + yv * yv
    fy = xv / r2
    fx = -yv / r2
    theta = math.atan2(yv, xv)
    if isinstance(template, _Jet1):
        g = tuple(fy * gy + fx * gx for gy, gx in zip(y.g, x.g))
        return _Jet1(theta, g)
    r4 = r2 * r2
    fyy = -2.0 * xv * yv / r4
    fxx = 2.0 * xv * yv / r4
    fyx = (yv * yv - xv * xv) / r4
    g = fy * y.g + fx * x.g
    cross = np.outer(y.g, x.g)
    h = (
        fy * y.h
        + fx * x.h
        + fyy * np.outer(y.g, y.g)
        + fyx * (cross + cross.T)
        + fxx * np.outer(x.g, x.g)
    )
    return _Jet2(theta, g, h)


def _f_min(a, b, node):
    # ties follow the first argument; not differentiable at ties
    return a if _val(a) <= _val(b) else b


def _f_max(a, b, node):
    return a if _val(a) >= _val(b) else b


def _f_bump(r, radius, node):
    """exp(1/((r/R)^2 - 1)) inside |r| < R, identically zero outside."""
    rv = _val(r)
    if abs(rv) >= radius:
        return r._const(0.0) if _is_jet(r) else 0.0
    t = r * (1.0 / radius)
    u = t * t - 1.0
    if _val(u) >= 0.0:
        # rounding pushed (r/R)^2 to 1 although |r| < R; boundary value is 0
        return r._const(0.0) if _is_jet(r) else 0.0
    return _f_exp(1.0 / u, node)


def _pow(base, exponent, node):
    """base ^ c with constant float c."""
    c = exponent
    bv = _val(base)
    is_int = c == round(c) and abs(c) < 1e15
    if not _is_jet(base):
        if bv == 0.0 and c < 0.0:
            raise EvalDomainError("zero raised to a negative power", to_source(node))
        if bv < 0.0 and not is_int:
            raise EvalDomainError(
                "negative base with non-integer exponent", to_source(node)
            )
        try:
            return bv**c
        except OverflowError:
            raise EvalDomainError("overflow in power", to_source(node)) from None
    if c == 0.0:
        return base._const(1.0)
    if c == 1.0:
        return base
    if bv == 0.0:
        if c < 0.0:
            raise EvalDomainError("zero raised to a negative power", to_source(node))
        if not is_int and c < 2.0:
            raise EvalDomainError(
                "power derivative singular at zero base", to_source(node)
            )
        # c >= 2 (or integer >= 2): value and first derivative vanish
        f = 0.0
        fp = 0.0
        fpp = c * (c - 1.0) * (0.0 if c > 2.0 else 1.0)
    else:
        if bv < 0.0 and not is_int:
            raise EvalDomainError(
                "negative base with non-integer exponent", to_source(node)
            )
        try:
            f = bv**c
            fp = c * bv ** (c - 1.0)
            fpp = c * (c - 1.0) * bv ** (c - 2.0)
        except OverflowError:
            raise EvalDomainError("overflow in power", to_source(node)) from None
    if isinstance(base, _Jet1):
        return base.chain(f, fp)
    return base.chain(f, fp, fpp)


_FUNC_IMPL = {
    "sin": _f_sin,
    "cos": _f_cos,
    "tan": _f_tan,
    "exp": _f_exp,
    "log": _f_log,
    "sqrt": _f_sqrt,
    "abs": _f_abs,
    "atan": _f_atan,
}


def _eval(node, coords):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return coords[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, coords)
    if isinstance(node, BinOp):
        left = _eval(node.left, coords)
        op = node.op
        if op == "^":
            return _pow(left, node.right.value, node)
        right = _eval(node.right, coords)
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        # division
        if _val(right) == 0.0:
            raise EvalDomainError("division by zero", to_source(node))
        return left / right
    # Call
    func = node.func
    if func in _FUNC_IMPL:
        return _FUNC_IMPL[func](_eval(node.args[0], coords), node)
    a = _eval(node.args[0], coords)
    if func == "bump":
        return _f_bump(a, node.args[1].value, node)
    b = _eval(node.args[1], coords)
    if func == "atan2":
        return _f_atan2(a, b, node)
    if func == "min":
        return _f_min(a, b, node)
    return _f_max(a, b, node)


# ---------------------------------------------------------------------------
# Public type


@dataclass(frozen=True)
class ScalarExpression:
    """An immutable parsed expression; evaluation is pure and thread-safe."""

    source: str
    arity: int
    ast: Node

    def value(self, p) -> float:
        """Evaluate at point p (any sequence of floats of length arity)."""
        coords = tuple(float(c) for c in p)
        self._check_arity(coords)
        result = _eval(self.ast, coords)
        return float(result)

    def jet1(self, p):
        """Return (value, gradient) with the gradient as a numpy array."""
        coords = tuple(float(c) for c in p)
        self._check_arity(coords)
        jets = tuple(_Jet1.variable(coords, i) for i in range(len(coords)))
        result = _eval(self.ast, jets)
        if isinstance(result, _Jet1):
            return result.v, np.array(result.g)
        return float(result), np.zeros(len(coords))

    def jet2(self, p):
        """Return (value, gradient, hessian); the hessian is exactly symmetric."""
        coords = tuple(float(c) for c in p)
        self._check_arity(coords)
        jets = tuple(_Jet2.variable(coords, i) for i in range(len(coords)))
        result = _eval(self.ast, jets)
        n = len(coords)
        if isinstance(result, _Jet2):
            return result.v, result.g.copy(), result.h.copy()
        return float(result), np.zeros(n), np.zeros((n, n))

    def is_constant(self) -> bool:
        return not _has_var(self.ast)

    def canonical_source(self) -> str:
        return to_source(self.ast)

    def negated(self) -> "ScalarExpression":
        if isinstance(self.ast, Neg):
            node = self.ast.arg
        else:
            node = Neg(self.ast)
        return ScalarExpression(to_source(node), self.arity, node)

    def scaled(self, k: float) -> "ScalarExpression":
        k = float(k)
        if k == 1.0:
            return self
        node = BinOp("*", Num(abs(k)), self.ast)
        if k < 0:
            node = Neg(node)
        return ScalarExpression(to_source(node), self.arity, node)

    def plus(self, other: "ScalarExpression") -> "ScalarExpression":
        if self.arity != other.arity:
            raise ValueError("arity mismatch in expression sum")
        node = BinOp("+", self.ast, other.ast)
        return ScalarExpression(to_source(node), self.arity, node)

    def _check_arity(self, coords):
        if len(coords) != self.arity:
            raise ValueError(
                f"expression of arity {self.arity} evaluated at point of "
                f"dimension {len(coords)}"
            )


def parse(source: str, arity: int) -> ScalarExpression:
    """Parse source over variables x1..x<arity>; raises ParseError."""
    if arity < 1:
        raise ValueError("arity must be at least 1")
    if not source or not source.strip():
        raise ParseError(0, "a non-empty expression")
    ast = _Parser(source, arity).parse()
    return ScalarExpression(source, arity, ast)


def eval_jet2(e: ScalarExpression, p):
    """Exact 2-jet (value, gradient, hessian) of e at p via dual numbers."""
    return e.jet2(p)


def constant(value: float, arity: int) -> ScalarExpression:
    node = Num(float(value)) if value >= 0 else Neg(Num(-float(value)))
    return ScalarExpression(to_source(node), arity, node)
