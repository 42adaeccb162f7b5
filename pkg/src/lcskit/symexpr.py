"""Small symbolic expression kernel for coordinate formulas.

The node set is deliberately tiny: constants, variables, n-ary sums and
products, rational powers, and the scalar calls ``sin``/``cos``/``exp``.
Square roots are powers with exponent 1/2 and negation is multiplication
by -1.  Construction performs only light, order-preserving rewrites
(flattening, constant folding, dropping additive/multiplicative
identities); no general simplification is attempted, so expression
equality is decided numerically (see :func:`is_zero`), never structurally.

Evaluation is vectorised over numpy arrays.  Any non-finite value (a
negative radicand, division by zero, the derivative of ``sqrt`` at 0)
raises :class:`EvaluationDomainError` carrying the offending sample point
rather than silently propagating ``nan``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

import numpy as np

Number = Union[int, float, Fraction]
ExprLike = Union["Expr", Number]

_FUNCTIONS = ("sin", "cos", "exp")


class ExprError(Exception):
    """Base class for expression kernel errors."""


class UnknownCoordinateError(ExprError):
    """A variable was evaluated without a value bound to it."""


class EvaluationDomainError(ExprError):
    """Evaluation left the real domain (non-finite result).

    Attributes:
        point: coordinate assignment at the first offending sample.
    """

    def __init__(self, message: str, point: dict[str, float] | None = None):
        super().__init__(message)
        self.point = point or {}


class ParseError(ExprError):
    """Raised on malformed expression text; message includes the position."""


# ---------------------------------------------------------------------------
# nodes


class Expr:
    """Base expression node.  Use the module constructors, not raw nodes."""

    __slots__ = ()

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other: ExprLike) -> "Expr":
        return add(self, as_expr(other))

    def __radd__(self, other: ExprLike) -> "Expr":
        return add(as_expr(other), self)

    def __sub__(self, other: ExprLike) -> "Expr":
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other: ExprLike) -> "Expr":
        return add(as_expr(other), neg(self))

    def __mul__(self, other: ExprLike) -> "Expr":
        return mul(self, as_expr(other))

    def __rmul__(self, other: ExprLike) -> "Expr":
        return mul(as_expr(other), self)

    def __truediv__(self, other: ExprLike) -> "Expr":
        return mul(self, pow_(as_expr(other), -1))

    def __rtruediv__(self, other: ExprLike) -> "Expr":
        return mul(as_expr(other), pow_(self, -1))

    def __pow__(self, exponent: Number) -> "Expr":
        return pow_(self, exponent)

    def __neg__(self) -> "Expr":
        return neg(self)

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Expr):
    terms: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    factors: tuple[Expr, ...]


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: Fraction


@dataclass(frozen=True, slots=True)
class Call(Expr):
    fn: str  # one of _FUNCTIONS
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x: ExprLike) -> Expr:
    """Coerce a number to a :class:`Const`; pass expressions through."""
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, Fraction)):
        return Const(float(x))
    raise TypeError(f"cannot interpret {x!r} as an expression")


# ---------------------------------------------------------------------------
# smart constructors (light rewrites only)


def add(*terms: ExprLike) -> Expr:
    """Sum with flattening, constant folding and zero removal."""
    flat: list[Expr] = []
    const = 0.0
    for t in map(as_expr, terms):
        if isinstance(t, Add):
            flat.extend(t.terms)
        else:
            flat.append(t)
    kept: list[Expr] = []
    for t in flat:
        if isinstance(t, Const):
            const += t.value
        else:
            kept.append(t)
    if const != 0.0:
        kept.insert(0, Const(const))
    if not kept:
        return ZERO
    if len(kept) == 1:
        return kept[0]
    return Add(tuple(kept))


def mul(*factors: ExprLike) -> Expr:
    """Product with flattening, constant folding, and 0/1 absorption."""
    flat: list[Expr] = []
    const = 1.0
    for f in map(as_expr, factors):
        if isinstance(f, Mul):
            flat.extend(f.factors)
        else:
            flat.append(f)
    kept: list[Expr] = []
    for f in flat:
        if isinstance(f, Const):
            const *= f.value
        else:
            kept.append(f)
    if const == 0.0:
        return ZERO
    if not kept:
        return Const(const)
    if const != 1.0:
        kept.insert(0, Const(const))
    if len(kept) == 1:
        return kept[0]
    return Mul(tuple(kept))


def pow_(base: ExprLike, exponent: Number) -> Expr:
    """Power with a rational exponent.

    Rewrites: ``e^0 -> 1``, ``e^1 -> e``, constant folding when the result
    is a finite real, and ``(e^p)^q -> e^(p*q)`` only when ``p`` has an odd
    numerator (that merge is sign- and domain-safe; ``(x^2)^(1/2)`` is
    ``|x|`` and is left alone).
    """
    base = as_expr(base)
    q = Fraction(exponent) if not isinstance(exponent, Fraction) else exponent
    if q == 0:
        return ONE
    if q == 1:
        return base
    if isinstance(base, Const):
        folded = _pow_const(base.value, q)
        if folded is not None:
            return Const(folded)
    if isinstance(base, Pow) and base.exponent.numerator % 2 != 0:
        return pow_(base.base, base.exponent * q)
    return Pow(base, q)


def _pow_const(value: float, q: Fraction) -> float | None:
    if q.denominator == 1:
        if value == 0.0 and q < 0:
            return None
        return float(value ** q.numerator)
    if value > 0.0 or (value == 0.0 and q > 0):
        return float(value) ** float(q)
    return None  # invalid or complex: leave for evaluation to report


def neg(e: ExprLike) -> Expr:
    return mul(Const(-1.0), as_expr(e))


def sqrt(e: ExprLike) -> Expr:
    return pow_(e, Fraction(1, 2))


def _call(fn: str, arg: ExprLike) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return Const(getattr(math, fn)(arg.value))
    return Call(fn, arg)


def sin(e: ExprLike) -> Expr:
    return _call("sin", e)


def cos(e: ExprLike) -> Expr:
    return _call("cos", e)


def exp(e: ExprLike) -> Expr:
    return _call("exp", e)


def var(name: str) -> Expr:
    return Var(name)


def const(value: Number) -> Expr:
    return Const(float(value))


# ---------------------------------------------------------------------------
# structural queries


def variables(e: Expr) -> frozenset[str]:
    """Set of variable names occurring in ``e``."""
    out: set[str] = set()
    _collect_vars(e, out)
    return frozenset(out)


def _collect_vars(e: Expr, out: set[str]) -> None:
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Add):
        for t in e.terms:
            _collect_vars(t, out)
    elif isinstance(e, Mul):
        for f in e.factors:
            _collect_vars(f, out)
    elif isinstance(e, Pow):
        _collect_vars(e.base, out)
    elif isinstance(e, Call):
        _collect_vars(e.arg, out)


def is_structural_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, name: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``name``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Add):
        return add(*(diff(t, name) for t in e.terms))
    if isinstance(e, Mul):
        terms = []
        for i, f in enumerate(e.factors):
            df = diff(f, name)
            if is_structural_zero(df):
                continue
            rest = e.factors[:i] + e.factors[i + 1 :]
            terms.append(mul(df, *rest))
        return add(*terms)
    if isinstance(e, Pow):
        db = diff(e.base, name)
        if is_structural_zero(db):
            return ZERO
        return mul(Const(float(e.exponent)), pow_(e.base, e.exponent - 1), db)
    if isinstance(e, Call):
        da = diff(e.arg, name)
        if is_structural_zero(da):
            return ZERO
        if e.fn == "sin":
            outer = cos(e.arg)
        elif e.fn == "cos":
            outer = neg(sin(e.arg))
        else:  # exp
            outer = exp(e.arg)
        return mul(outer, da)
    raise TypeError(f"unknown node {e!r}")


def gradient(e: Expr, names: Iterable[str]) -> tuple[Expr, ...]:
    return tuple(diff(e, n) for n in names)


def substitute(e: Expr, mapping: Mapping[str, ExprLike]) -> Expr:
    """Replace variables by expressions, rebuilding through the constructors."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        repl = mapping.get(e.name)
        return e if repl is None else as_expr(repl)
    if isinstance(e, Add):
        return add(*(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Pow):
        return pow_(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Call):
        return _call(e.fn, substitute(e.arg, mapping))
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# evaluation


def _eval_raw(e: Expr, env: Mapping[str, np.ndarray]):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownCoordinateError(
                f"no value bound to coordinate '{e.name}'"
            ) from None
    if isinstance(e, Add):
        acc = _eval_raw(e.terms[0], env)
        for t in e.terms[1:]:
            acc = acc + _eval_raw(t, env)
        return acc
    if isinstance(e, Mul):
        acc = _eval_raw(e.factors[0], env)
        for f in e.factors[1:]:
            acc = acc * _eval_raw(f, env)
        return acc
    if isinstance(e, Pow):
        base = _eval_raw(e.base, env)
        q = e.exponent
        if q.denominator == 1:
            return np.power(base, q.numerator, dtype=float)
        return np.power(np.asarray(base, dtype=float), float(q))
    if isinstance(e, Call):
        arg = _eval_raw(e.arg, env)
        return getattr(np, e.fn)(arg)
    raise TypeError(f"unknown node {e!r}")


def evaluate(e: Expr, env: Mapping[str, "np.ndarray | float"]):
    """Evaluate ``e`` on scalars or equal-length arrays.

    Raises :class:`EvaluationDomainError` (with the first offending sample
    point) if the result is not finite everywhere, and
    :class:`UnknownCoordinateError` for unbound variables.
    """
    env_arr = {k: np.asarray(v, dtype=float) for k, v in env.items()}
    with np.errstate(all="ignore"):
        out = _eval_raw(e, env_arr)
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        bad = np.nonzero(~np.isfinite(np.atleast_1d(out)))[0]
        idx = int(bad[0])
        point = {
            k: float(v) if v.ndim == 0 else float(np.atleast_1d(v)[idx % v.size])
            for k, v in env_arr.items()
        }
        raise EvaluationDomainError(
            f"non-finite value evaluating '{to_string(e)}' at {point}", point
        )
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# zero testing


@dataclass(frozen=True)
class ZeroCheck:
    """Outcome of a sampled zero test.

    Attributes:
        passed: max residual below tolerance.
        max_residual: largest |value| over the sample set.
        worst_point: coordinates where the maximum was attained.
        samples: number of points tested.
        tol: tolerance used.
    """

    passed: bool
    max_residual: float
    worst_point: dict[str, float]
    samples: int
    tol: float


def is_zero(
    exprs: "Expr | Iterable[Expr]",
    domain,
    samples: int = 200,
    tol: float = 1e-9,
    seed: int = 0,
) -> ZeroCheck:
    """Test whether expression(s) vanish on a sampled coordinate domain.

    ``domain`` is any object with ``sample_points(samples, seed)`` returning
    a name -> array mapping (see ``forms.CoordinateDomain``).  Deterministic:
    fixed (domain, samples, seed) always draws identical points.
    """
    if isinstance(exprs, Expr):
        exprs = (exprs,)
    else:
        exprs = tuple(exprs)
    env = domain.sample_points(samples, seed)
    worst = 0.0
    worst_point: dict[str, float] = {}
    for e in exprs:
        if is_structural_zero(e):
            continue
        vals = np.atleast_1d(np.asarray(evaluate(e, env), dtype=float))
        if vals.size == 1 and samples > 1:
            vals = np.repeat(vals, samples)
        idx = int(np.argmax(np.abs(vals)))
        r = float(abs(vals[idx]))
        if r > worst:
            worst = r
            worst_point = {k: float(np.atleast_1d(v)[idx % np.atleast_1d(v).size]) for k, v in env.items()}
    return ZeroCheck(worst <= tol, worst, worst_point, samples, tol)


# ---------------------------------------------------------------------------
# printing


def _needs_parens(e: Expr, parent: str) -> bool:
    if isinstance(e, (Const, Var, Call)):
        return isinstance(e, Const) and e.value < 0 and parent in ("mul", "pow", "neg")
    if isinstance(e, Add):
        return parent in ("mul", "pow", "neg")
    if isinstance(e, Mul):
        return parent == "pow"
    if isinstance(e, Pow):
        return parent == "pow"
    return False


def _wrap(e: Expr, parent: str) -> str:
    s = to_string(e)
    return f"({s})" if _needs_parens(e, parent) else s


def _const_str(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Infix form that reparses to an equivalent expression."""
    if isinstance(e, Const):
        return _const_str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        parts = [to_string(e.terms[0])]
        for t in e.terms[1:]:
            if isinstance(t, Mul) and isinstance(t.factors[0], Const) and t.factors[0].value < 0:
                inner = mul(Const(-t.factors[0].value), *t.factors[1:])
                parts.append(f" - {_wrap(inner, 'mul')}")
            elif isinstance(t, Const) and t.value < 0:
                parts.append(f" - {_const_str(-t.value)}")
            else:
                parts.append(f" + {_wrap(t, 'add')}")
        return "".join(parts)
    if isinstance(e, Mul):
        if isinstance(e.factors[0], Const) and e.factors[0].value == -1.0 and len(e.factors) > 1:
            rest = mul(*e.factors[1:]) if len(e.factors) > 2 else e.factors[1]
            return f"-{_wrap(rest, 'neg')}"
        return " * ".join(_wrap(f, "mul") for f in e.factors)
    if isinstance(e, Pow):
        q = e.exponent
        if q == Fraction(1, 2):
            return f"sqrt({to_string(e.base)})"
        exp_s = str(q.numerator) if q.denominator == 1 else f"({q.numerator}/{q.denominator})"
        return f"{_wrap(e.base, 'pow')}^{exp_s}"
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# parser


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stray = text[pos:].lstrip()
            if not stray:
                break
            raise ParseError(f"unexpected character {stray[0]!r} at position {pos}")
        if m.lastgroup is not None:
            tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise ParseError(f"unexpected end of input in {self.text!r}")
        self.i += 1
        return tok

    def expect(self, op: str) -> None:
        tok = self.peek()
        if tok is None or tok[0] != "op" or tok[1] != op:
            where = tok[2] if tok else len(self.text)
            raise ParseError(f"expected {op!r} at position {where} in {self.text!r}")
        self.i += 1

    # expr := term (("+"|"-") term)*
    def expr(self) -> Expr:
        out = self.term()
        while True:
            tok = self.peek()
            if tok and tok[0] == "op" and tok[1] in "+-":
                self.i += 1
                rhs = self.term()
                out = add(out, rhs if tok[1] == "+" else neg(rhs))
            else:
                return out

    # term := unary (("*"|"/") unary)*
    def term(self) -> Expr:
        out = self.unary()
        while True:
            tok = self.peek()
            if tok and tok[0] == "op" and tok[1] in "*/":
                self.i += 1
                rhs = self.unary()
                out = mul(out, rhs) if tok[1] == "*" else mul(out, pow_(rhs, -1))
            else:
                return out

    # unary := "-" unary | power
    def unary(self) -> Expr:
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "-":
            self.i += 1
            return neg(self.unary())
        if tok and tok[0] == "op" and tok[1] == "+":
            self.i += 1
            return self.unary()
        return self.power()

    # power := atom ("^" exponent)?    (exponent must be a rational literal)
    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "^":
            self.i += 1
            q = self.exponent()
            return pow_(base, q)
        return base

    def exponent(self) -> Fraction:
        tok = self.peek()
        negate = False
        if tok and tok[0] == "op" and tok[1] in "+-":
            self.i += 1
            negate = tok[1] == "-"
            tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "(":
            self.i += 1
            q = self.exponent_body()
            self.expect(")")
        elif tok and tok[0] == "number":
            self.i += 1
            q = _number_fraction(tok[1], tok[2], self.text)
        else:
            where = tok[2] if tok else len(self.text)
            raise ParseError(
                f"exponent must be a rational literal at position {where} in {self.text!r}"
            )
        return -q if negate else q

    def exponent_body(self) -> Fraction:
        tok = self.peek()
        negate = False
        if tok and tok[0] == "op" and tok[1] in "+-":
            self.i += 1
            negate = tok[1] == "-"
            tok = self.peek()
        if not tok or tok[0] != "number":
            where = tok[2] if tok else len(self.text)
            raise ParseError(f"expected number at position {where} in {self.text!r}")
        self.i += 1
        q = _number_fraction(tok[1], tok[2], self.text)
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] == "/":
            self.i += 1
            tok = self.next()
            if tok[0] != "number":
                raise ParseError(f"expected denominator at position {tok[2]} in {self.text!r}")
            q = q / _number_fraction(tok[1], tok[2], self.text)
        return -q if negate else q

    def atom(self) -> Expr:
        tok = self.next()
        kind, value, where = tok
        if kind == "number":
            return Const(float(value))
        if kind == "name":
            if value == "pi":
                return Const(math.pi)
            nxt = self.peek()
            if nxt and nxt[0] == "op" and nxt[1] == "(":
                if value == "sqrt":
                    self.i += 1
                    inner = self.expr()
                    self.expect(")")
                    return sqrt(inner)
                if value in _FUNCTIONS:
                    self.i += 1
                    inner = self.expr()
                    self.expect(")")
                    return _call(value, inner)
                raise ParseError(f"unknown function {value!r} at position {where}")
            if value == "sqrt" or value in _FUNCTIONS:
                raise ParseError(f"function name {value!r} needs arguments at position {where}")
            return Var(value)
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"unexpected token {value!r} at position {where} in {self.text!r}")


def _number_fraction(text: str, where: int, full: str) -> Fraction:
    try:
        return Fraction(text)
    except ValueError:
        raise ParseError(f"bad exponent literal {text!r} at position {where} in {full!r}") from None


def parse(text: str) -> Expr:
    """Parse infix text (``+ - * / ^ sin cos exp sqrt``, parentheses, ``pi``).

    Exponents after ``^`` must be rational literals such as ``2``, ``-1``
    or ``(1/2)`` — general expressions in the exponent are rejected.
    """
    p = _Parser(text)
    if not p.tokens:
        raise ParseError("empty expression")
    out = p.expr()
    if p.peek() is not None:
        tok = p.peek()
        raise ParseError(f"trailing input {tok[1]!r} at position {tok[2]} in {text!r}")
    return out
