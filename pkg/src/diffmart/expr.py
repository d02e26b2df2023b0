"""Coefficient expressions: parsing, evaluation and local power analysis.

The drift, volatility and exponent coefficients of a diffusion problem are
given as text in a single variable ``x``.  This module turns them into
immutable syntax trees, evaluates them (scalar or numpy array) with strict
domain checking, and extracts best-effort structural information: candidate
singular points and leading local exponents, which the integrability
classifier uses as fast exact hints.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr", "Lit", "Var", "Bin", "Neg", "Call",
    "ExprError", "ParseError", "DomainFault",
    "parse", "to_source", "evaluate", "evaluate_array",
    "constant_fold", "is_zero_expr",
    "candidate_singularities", "leading_exponent",
    "lit", "X", "add", "sub", "mul", "div", "pow_",
]


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; ``offset`` is the 1-based character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DomainFault(ExprError):
    """Evaluation hit a point where the expression is undefined.

    Carries the offending sub-expression source and the argument value.
    Non-finite results (overflow) are reported the same way: evaluation
    never silently returns inf or nan.
    """

    def __init__(self, reason: str, node: "Expr", x: float):
        super().__init__(f"{reason} in '{to_source(node)}' at x={x!r}")
        self.reason = reason
        self.node = node
        self.x = x


# ---------------------------------------------------------------------------
# syntax trees


@dataclass(frozen=True)
class Expr:
    def __call__(self, x):
        if isinstance(x, np.ndarray):
            return evaluate_array(self, x)
        return evaluate(self, x)


@dataclass(frozen=True)
class Lit(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str  # exp log sqrt abs sign
    args: tuple


_FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "sign": 1, "pow": 2}


def lit(v: float) -> Expr:
    return Lit(float(v))


X = Var()


def add(a: Expr, b: Expr) -> Expr:
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    return Bin("/", a, b)


def pow_(a: Expr, b: Expr) -> Expr:
    return Bin("^", a, b)


# ---------------------------------------------------------------------------
# parser

_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0  # 0-based index into text

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        """Return (kind, value, offset) of the next token without consuming."""
        self._skip_ws()
        if self.pos >= len(self.text):
            return ("end", "", self.pos + 1)
        ch = self.text[self.pos]
        off = self.pos + 1
        m = _NUMBER_RE.match(self.text, self.pos)
        if m:
            return ("number", m.group(), off)
        m = _IDENT_RE.match(self.text, self.pos)
        if m:
            return ("ident", m.group(), off)
        if ch in "+-*/^(),":
            return ("op", ch, off)
        raise ParseError(f"unexpected character {ch!r}", off)

    def next(self):
        tok = self.peek()
        self.pos += len(tok[1])
        return tok


def parse(text: str) -> Expr:
    """Parse an expression over x with + - * / ^, unary minus and calls.

    Precedence (loosest to tightest): + - ; * / ; unary minus ; ^
    (right-associative).  Raises ParseError with a 1-based offset.
    """
    tz = _Tokenizer(text)
    e = _parse_sum(tz)
    kind, val, off = tz.peek()
    if kind != "end":
        raise ParseError(f"unexpected token {val!r}", off)
    return e


def _parse_sum(tz: _Tokenizer) -> Expr:
    e = _parse_term(tz)
    while True:
        kind, val, _ = tz.peek()
        if kind == "op" and val in "+-":
            tz.next()
            e = Bin(val, e, _parse_term(tz))
        else:
            return e


def _parse_term(tz: _Tokenizer) -> Expr:
    e = _parse_factor(tz)
    while True:
        kind, val, _ = tz.peek()
        if kind == "op" and val in "*/":
            tz.next()
            e = Bin(val, e, _parse_factor(tz))
        else:
            return e


def _parse_factor(tz: _Tokenizer) -> Expr:
    kind, val, off = tz.peek()
    if kind == "op" and val == "-":
        tz.next()
        return Neg(_parse_factor(tz))
    e = _parse_primary(tz)
    kind, val, _ = tz.peek()
    if kind == "op" and val == "^":
        tz.next()
        return Bin("^", e, _parse_factor(tz))
    return e


def _parse_primary(tz: _Tokenizer) -> Expr:
    kind, val, off = tz.next()
    if kind == "number":
        return Lit(float(val))
    if kind == "ident":
        if val == "x":
            return Var()
        if val in _FUNCTIONS:
            k2, v2, o2 = tz.next()
            if (k2, v2) != ("op", "("):
                raise ParseError(f"expected '(' after {val!r}", o2)
            args = [_parse_sum(tz)]
            while True:
                k2, v2, o2 = tz.next()
                if (k2, v2) == ("op", ")"):
                    break
                if (k2, v2) != ("op", ","):
                    raise ParseError("expected ',' or ')' in argument list", o2)
                args.append(_parse_sum(tz))
            if len(args) != _FUNCTIONS[val]:
                raise ParseError(
                    f"{val} expects {_FUNCTIONS[val]} argument(s), got {len(args)}", off)
            if val == "pow":
                return Bin("^", args[0], args[1])
            return Call(val, tuple(args))
        raise ParseError(f"unknown identifier {val!r}", off)
    if (kind, val) == ("op", "("):
        e = _parse_sum(tz)
        k2, v2, o2 = tz.next()
        if (k2, v2) != ("op", ")"):
            raise ParseError("expected ')'", o2)
        return e
    if kind == "end":
        raise ParseError("unexpected end of input", off)
    raise ParseError(f"unexpected token {val!r}", off)


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expr) -> str:
    """Print with minimal parentheses; parse(to_source(e)) == e."""
    return _print(e, 0)


def _print(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Lit):
        v = e.value
        if v == int(v) and abs(v) < 1e16:
            s = str(int(v))
        else:
            s = repr(v)
        return s
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        # unary minus binds tighter than * / but looser than ^
        inner = _print(e.arg, _PREC["neg"])
        s = f"-{inner}"
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(e, Call):
        args = ", ".join(_print(a, 0) for a in e.args)
        return f"{e.func}({args})"
    if isinstance(e, Bin):
        p = _PREC[e.op]
        if e.op == "^":
            # right-associative; left operand must be primary-like
            ls = _print(e.left, p + 1)
            rs = _print(e.right, p)
        else:
            ls = _print(e.left, p)
            rs = _print(e.right, p + 1)  # left-associative
        s = f"{ls} {e.op} {rs}" if e.op in "+-" else f"{ls}{e.op}{rs}"
        return f"({s})" if parent_prec > p or (parent_prec == p == _PREC["^"]) else s
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# evaluation


def _is_integer(v: float) -> bool:
    return math.isfinite(v) and v == round(v)


def evaluate(e: Expr, x: float) -> float:
    """Evaluate at a scalar; raises DomainFault at undefined points."""
    v = _eval(e, float(x))
    if not math.isfinite(v):
        raise DomainFault("non-finite result", e, x)
    return v


def _eval(e: Expr, x: float) -> float:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, Bin):
        a = _eval(e.left, x)
        b = _eval(e.right, x)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise DomainFault("division by zero", e, x)
            return a / b
        # power
        if a == 0.0 and b < 0.0:
            raise DomainFault("zero base with negative exponent", e, x)
        if a < 0.0 and not _is_integer(b):
            raise DomainFault("negative base with non-integer exponent", e, x)
        try:
            return a ** b
        except OverflowError:
            raise DomainFault("non-finite result", e, x) from None
    if isinstance(e, Call):
        a = _eval(e.args[0], x)
        if e.func == "exp":
            try:
                return math.exp(a)
            except OverflowError:
                raise DomainFault("non-finite result", e, x) from None
        if e.func == "log":
            if a <= 0.0:
                raise DomainFault("log of non-positive value", e, x)
            return math.log(a)
        if e.func == "sqrt":
            if a < 0.0:
                raise DomainFault("sqrt of negative value", e, x)
            return math.sqrt(a)
        if e.func == "abs":
            return abs(a)
        if e.func == "sign":
            return float((a > 0) - (a < 0))
    raise TypeError(f"not an Expr: {e!r}")


def evaluate_array(e: Expr, xs: np.ndarray) -> np.ndarray:
    """Vectorized evaluation with the same fault semantics as `evaluate`."""
    xs = np.asarray(xs, dtype=float)
    with np.errstate(all="ignore"):
        vals = _eval_arr(e, xs)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise DomainFault("non-finite result", e, float(xs[bad][0]))
    return vals


def _eval_arr(e: Expr, xs: np.ndarray) -> np.ndarray:
    if isinstance(e, Lit):
        return np.full(xs.shape, e.value)
    if isinstance(e, Var):
        return xs.copy()
    if isinstance(e, Neg):
        return -_eval_arr(e.arg, xs)
    if isinstance(e, Bin):
        a = _eval_arr(e.left, xs)
        b = _eval_arr(e.right, xs)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            zero = b == 0.0
            if zero.any():
                raise DomainFault("division by zero", e, float(xs[zero][0]))
            return a / b
        bad = (a == 0.0) & (b < 0.0)
        if bad.any():
            raise DomainFault("zero base with negative exponent", e,
                              float(xs[bad][0]))
        bad = (a < 0.0) & (b != np.round(b))
        if bad.any():
            raise DomainFault("negative base with non-integer exponent", e,
                              float(xs[bad][0]))
        return a ** b
    if isinstance(e, Call):
        a = _eval_arr(e.args[0], xs)
        if e.func == "exp":
            return np.exp(a)
        if e.func == "log":
            bad = a <= 0.0
            if bad.any():
                raise DomainFault("log of non-positive value", e, float(xs[bad][0]))
            return np.log(a)
        if e.func == "sqrt":
            bad = a < 0.0
            if bad.any():
                raise DomainFault("sqrt of negative value", e, float(xs[bad][0]))
            return np.sqrt(a)
        if e.func == "abs":
            return np.abs(a)
        if e.func == "sign":
            return np.sign(a)
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# constant folding


def constant_fold(e: Expr) -> Expr:
    """Fold constant subtrees; used for structural zero detection."""
    if isinstance(e, (Lit, Var)):
        return e
    if isinstance(e, Neg):
        a = constant_fold(e.arg)
        if isinstance(a, Lit):
            return Lit(-a.value)
        return Neg(a)
    if isinstance(e, Bin):
        a = constant_fold(e.left)
        b = constant_fold(e.right)
        if isinstance(a, Lit) and isinstance(b, Lit):
            try:
                return Lit(evaluate(Bin(e.op, a, b), 0.0))
            except DomainFault:
                return Bin(e.op, a, b)
        if e.op == "*" and (_is_lit(a, 0.0) or _is_lit(b, 0.0)):
            return Lit(0.0)
        if e.op == "/" and _is_lit(a, 0.0):
            return Lit(0.0)
        if e.op == "^" and _is_lit(b, 1.0):
            return a
        return Bin(e.op, a, b)
    if isinstance(e, Call):
        args = tuple(constant_fold(a) for a in e.args)
        if all(isinstance(a, Lit) for a in args):
            try:
                return Lit(evaluate(Call(e.func, args), 0.0))
            except DomainFault:
                pass
        return Call(e.func, args)
    raise TypeError(f"not an Expr: {e!r}")


def _is_lit(e: Expr, v: float) -> bool:
    return isinstance(e, Lit) and e.value == v


def is_zero_expr(e: Expr) -> bool:
    folded = constant_fold(e)
    return isinstance(folded, Lit) and folded.value == 0.0


# ---------------------------------------------------------------------------
# candidate singular points


def candidate_singularities(e: Expr, interval: tuple) -> list:
    """Interior points of `interval` where `e` may be undefined or unbounded.

    Over-approximation is fine (a harmless candidate is filtered out by the
    integrability classifier); missing a genuine singularity is not, for the
    supported class: rational functions and products with exp/log/abs/sqrt
    of rational arguments.  Zeros of affine/monomial risk arguments (and
    products/powers thereof) are found exactly; anything else falls back to
    a numeric sign-change scan.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("empty interval")
    pts: list = []
    for g in _risk_arguments(e):
        pts.extend(_zeros(g, lo, hi))
    out: list = []
    for p in sorted(pts):
        if not (lo < p < hi):
            continue
        if out and abs(p - out[-1]) <= 1e-12 * max(1.0, abs(p)):
            continue
        out.append(p)
    return out


def _risk_arguments(e: Expr) -> list:
    """Sub-expressions whose zeros can make the tree undefined/unbounded."""
    out: list = []

    def walk(n: Expr):
        if isinstance(n, Bin):
            walk(n.left)
            walk(n.right)
            if n.op == "/":
                out.append(n.right)
            elif n.op == "^":
                k = constant_fold(n.right)
                if not isinstance(k, Lit) or k.value < 0 or not _is_integer(k.value):
                    out.append(n.left)
        elif isinstance(n, Neg):
            walk(n.arg)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)
            if n.func in ("log", "sqrt"):
                out.append(n.args[0])

    walk(e)
    return out


def _zeros(g: Expr, lo: float, hi: float) -> list:
    zs = _structural_zeros(g)
    if zs is not None:
        return zs
    return _scan_zeros(g, lo, hi)


def _structural_zeros(g: Expr):
    """Exact zero set for affine/monomial trees and products/powers of them.

    Returns None when the structure is not recognized.
    """
    g = constant_fold(g)
    if isinstance(g, Lit):
        return []  # a zero constant has no isolated zeros
    if isinstance(g, Var):
        return [0.0]
    if isinstance(g, Neg):
        return _structural_zeros(g.arg)
    if isinstance(g, Call) and g.func in ("abs", "sqrt"):
        return _structural_zeros(g.args[0])
    if isinstance(g, Bin):
        if g.op == "*":
            a = _structural_zeros(g.left)
            b = _structural_zeros(g.right)
            if a is None or b is None:
                return None
            return a + b
        if g.op == "^":
            k = constant_fold(g.right)
            if isinstance(k, Lit):
                return _structural_zeros(g.left)
            return None
        if g.op == "/":
            return _structural_zeros(g.left)
        # affine +/- combination
        coeffs = _affine_coeffs(g)
        if coeffs is not None:
            a, b = coeffs
            if a != 0.0:
                return [-b / a]
            return []
        return None
    return None


def _affine_coeffs(g: Expr):
    """(a, b) with g == a*x + b, or None."""
    g = constant_fold(g)
    if isinstance(g, Lit):
        return (0.0, g.value)
    if isinstance(g, Var):
        return (1.0, 0.0)
    if isinstance(g, Neg):
        c = _affine_coeffs(g.arg)
        return None if c is None else (-c[0], -c[1])
    if isinstance(g, Bin):
        if g.op in "+-":
            ca = _affine_coeffs(g.left)
            cb = _affine_coeffs(g.right)
            if ca is None or cb is None:
                return None
            s = 1.0 if g.op == "+" else -1.0
            return (ca[0] + s * cb[0], ca[1] + s * cb[1])
        if g.op == "*":
            ca = _affine_coeffs(g.left)
            cb = _affine_coeffs(g.right)
            if ca is None or cb is None:
                return None
            if ca[0] == 0.0:
                return (ca[1] * cb[0], ca[1] * cb[1])
            if cb[0] == 0.0:
                return (cb[1] * ca[0], cb[1] * ca[1])
            return None
        if g.op == "/":
            ca = _affine_coeffs(g.left)
            cb = _affine_coeffs(g.right)
            if ca is None or cb is None or cb[0] != 0.0 or cb[1] == 0.0:
                return None
            return (ca[0] / cb[1], ca[1] / cb[1])
    return None


_SCAN_POINTS = 4096


def _scan_zeros(g: Expr, lo: float, hi: float) -> list:
    """Sign-change scan on an arctan-compactified grid, refined by bisection."""
    ulo, uhi = math.atan(lo), math.atan(hi)
    us = np.linspace(ulo, uhi, _SCAN_POINTS + 1)[1:-1]
    xs = np.tan(us)

    def val(x: float):
        try:
            return evaluate(g, x)
        except DomainFault:
            return None

    vs = [val(float(x)) for x in xs]
    found = []
    for i in range(len(xs) - 1):
        a, b = vs[i], vs[i + 1]
        if a is None or b is None:
            if a is None and lo < xs[i] < hi:
                found.append(float(xs[i]))
            continue
        if a == 0.0:
            found.append(float(xs[i]))
            continue
        if a * b < 0.0:
            found.append(_bisect(val, float(xs[i]), float(xs[i + 1])))
    return found


def _bisect(val, a: float, b: float) -> float:
    fa = val(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        if abs(b - a) <= 1e-12 * max(1.0, abs(m)):
            return m
        fm = val(m)
        if fm is None or fm == 0.0:
            return m
        if (fa < 0) != (fm < 0):
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# leading local exponents

_ZERO = ("zero", None)  # marker: sub-expression is identically zero


def leading_exponent(e: Expr, p: float, side: str = "right"):
    """Exponent q with e(x) ~ C*|x-p|**q (C != 0) as x -> p on `side`.

    For p = +-inf the exponent is the power of |x| as x -> p.  Returns None
    whenever q cannot be derived structurally; never returns a wrong q.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    r = _lead(e, p, side)
    if r is None or r == _ZERO:
        return None
    return r[0]


def _lead(e: Expr, p: float, side: str):
    """Returns (q, C), _ZERO, or None (unknown)."""
    at_inf = math.isinf(p)
    coeffs = _affine_coeffs(e)
    if coeffs is not None:
        # a*x + b vanishes to order exactly one at its root, which the
        # generic sum rule cannot see through cancellation
        a, b = coeffs
        if at_inf:
            if a != 0.0:
                return (1.0, a if p > 0 else -a)
            return _ZERO if b == 0.0 else (0.0, b)
        v = a * p + b
        if v != 0.0:
            return (0.0, v)
        if a != 0.0:
            return (1.0, a if side == "right" else -a)
        return _ZERO
    if isinstance(e, Lit):
        if e.value == 0.0:
            return _ZERO
        return (0.0, e.value)
    if isinstance(e, Var):
        if at_inf:
            return (1.0, 1.0 if p > 0 else -1.0)
        if p == 0.0:
            return (1.0, 1.0 if side == "right" else -1.0)
        return (0.0, p)
    if isinstance(e, Neg):
        r = _lead(e.arg, p, side)
        if r is None or r == _ZERO:
            return r
        return (r[0], -r[1])
    if isinstance(e, Bin):
        if e.op == "^":
            k = constant_fold(e.right)
            if not isinstance(k, Lit):
                return None
            k = k.value
            rb = _lead(e.left, p, side)
            if rb == _ZERO:
                return _ZERO if k > 0 else None
            if rb is None:
                return None
            qb, cb = rb
            if cb < 0.0 and not _is_integer(k):
                return None
            try:
                c = cb ** k
            except (OverflowError, ZeroDivisionError):
                return None
            if not math.isfinite(c) or c == 0.0:
                return None
            return (qb * k, c)
        ra = _lead(e.left, p, side)
        rb = _lead(e.right, p, side)
        if e.op in "+-":
            if rb == _ZERO:
                return ra
            if ra == _ZERO:
                if rb is None:
                    return None
                return (rb[0], rb[1] if e.op == "+" else -rb[1])
            if ra is None or rb is None:
                return None
            qa, ca = ra
            qb, cb = rb
            if e.op == "-":
                cb = -cb
            # near p the SMALLER exponent dominates; at infinity the larger
            if qa != qb:
                if (qa < qb) != at_inf:
                    return (qa, ca)
                return (qb, cb)
            c = ca + cb
            if abs(c) <= 1e-9 * (abs(ca) + abs(cb)):
                return None  # possible cancellation: refuse to guess
            return (qa, c)
        if e.op == "*":
            if ra == _ZERO or rb == _ZERO:
                return _ZERO
            if ra is None or rb is None:
                return None
            return (ra[0] + rb[0], ra[1] * rb[1])
        if e.op == "/":
            if rb == _ZERO:
                return None
            if ra == _ZERO:
                return _ZERO
            if ra is None or rb is None:
                return None
            return (ra[0] - rb[0], ra[1] / rb[1])
    if isinstance(e, Call):
        r = _lead(e.args[0], p, side)
        if e.func == "exp":
            if r == _ZERO:
                return (0.0, 1.0)
            if r is None:
                return None
            q, c = r
            if (q > 0.0) != at_inf and q != 0.0:
                return (0.0, 1.0)  # argument tends to 0
            if q == 0.0:
                try:
                    v = math.exp(c)
                except OverflowError:
                    return None
                return (0.0, v) if v != 0.0 else None
            return None  # argument blows up: not power-law
        if e.func == "log":
            if r is None or r == _ZERO:
                return None
            q, c = r
            arg_tends_to_value = (q == 0.0)
            if arg_tends_to_value and c > 0.0 and c != 1.0:
                return (0.0, math.log(c))
            return None
        if e.func == "sqrt":
            return _lead(Bin("^", e.args[0], Lit(0.5)), p, side)
        if e.func == "abs":
            if r is None or r == _ZERO:
                return r
            return (r[0], abs(r[1]))
        if e.func == "sign":
            if r is None or r == _ZERO:
                return r
            return (0.0, math.copysign(1.0, r[1]))
    return None
