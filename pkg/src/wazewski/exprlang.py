"""Arithmetic expressions for fields, faces and controllers.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

Expressions are evaluated three ways: a tree-walking :func:`evaluate` that
reports the failing node, :func:`compile_function` which emits Python source
for the integrator's hot loop, and :func:`jet_evaluate` over truncated
Taylor series, used by :func:`lie_derivatives`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator, Mapping, Sequence

if TYPE_CHECKING:  # pragma: no cover
    from .core import ExtPoint, FieldSpec

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Func",
    "ExpressionError",
    "ExprSyntaxError",
    "UndeclaredIdentifier",
    "EvaluationError",
    "Jet",
    "parse_expression",
    "evaluate",
    "format_expr",
    "free_names",
    "compile_function",
    "jet_evaluate",
    "lie_derivatives",
    "iter_lie_derivatives",
    "partial_derivative",
]

CONSTANTS = {"pi": math.pi}
UNARY_FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sign")
ARITY = {**{name: 1 for name in UNARY_FUNCS}, "min": 2, "max": 2, "clamp": 3}
# non-smooth primitives whose argument crossing zero is a true discontinuity
DISCONTINUOUS = ("sign",)


class ExpressionError(Exception):
    """Base class for parse and evaluation failures."""


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int, source: str):
        super().__init__(f"{message} at offset {position} in {source!r}")
        self.position = position
        self.source = source


class UndeclaredIdentifier(ExpressionError):
    def __init__(self, name: str, position: int):
        super().__init__(f"undeclared identifier {name!r} at offset {position}")
        self.name = name
        self.position = position


class EvaluationError(ExpressionError):
    def __init__(self, message: str, node: "Expr"):
        super().__init__(f"{message} in {format_expr(node)!r}")
        self.node = node


# --------------------------------------------------------------------------
# tree

@dataclass(frozen=True)
class Expr:
    def __str__(self) -> str:
        return format_expr(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    args: tuple[Expr, ...]


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, declared: frozenset[str]):
        self.source = source
        self.declared = declared
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: tuple[str, str, int]):
        raise ExprSyntaxError(message, tok[2], self.source)

    def expect(self, text: str) -> None:
        tok = self.take()
        if tok[1] != text or tok[0] != "op":
            self.fail(f"expected {text!r}", tok)

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail(f"unexpected {tok[1]!r}", tok)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.take()
        kind, text, pos = tok
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if text not in ARITY:
                    self.fail(f"unknown function {text!r}", tok)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != ARITY[text]:
                    self.fail(f"{text} takes {ARITY[text]} argument(s), got {len(args)}", tok)
                return Func(text, tuple(args))
            if text in self.declared:
                return Var(text)
            if text in CONSTANTS:
                return Const(CONSTANTS[text])
            raise UndeclaredIdentifier(text, pos)
        if (kind, text) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            self.fail("unexpected end of input", tok)
        self.fail(f"unexpected {text!r}", tok)


def parse_expression(source: str, declared_vars: Sequence[str]) -> Expr:
    """Parse ``source`` into an expression tree.

    ``declared_vars`` lists every name the expression may reference (state
    variables, ``t`` and parameter names). ``pi`` is a built-in constant
    unless shadowed by a declared name.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, source)
    return _Parser(source, frozenset(declared_vars)).parse()


def free_names(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Neg):
        return free_names(e.arg)
    if isinstance(e, BinOp):
        return free_names(e.left) | free_names(e.right)
    return set().union(*(free_names(a) for a in e.args))


def walk(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Neg):
        yield from walk(e.arg)
    elif isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, Func):
        for a in e.args:
            yield from walk(a)


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC["neg"]
    return 10


def _fmt_number(value: float) -> str:
    if math.isinf(value) or math.isnan(value):
        raise ExpressionError(f"non-finite constant {value!r}")
    if value == int(value) and abs(value) < 1e16:
        return str(int(value)) if value != 0 or math.copysign(1, value) > 0 else "-0"
    return repr(value)


def format_expr(e: Expr) -> str:
    """Print ``e`` in a normal form that parses back to an identical string."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = format_expr(e.arg)
        if _prec(e.arg) < _PREC["^"]:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[e.op]
    left, right = format_expr(e.left), format_expr(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


# --------------------------------------------------------------------------
# scalar evaluation

def _sign(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def _pow(base: float, exponent: float) -> float:
    if exponent != int(exponent) and base <= 0:
        raise ValueError("non-integer power of non-positive base")
    return base ** exponent


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


_SCALAR_FUNCS: dict[str, Callable[..., float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "sign": _sign,
    "min": min,
    "max": max,
    "clamp": _clamp,
}


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate in IEEE double precision; failures name the offending node."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        try:
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                return a / b
            return _pow(a, b)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvaluationError(str(exc), e) from None
    args = [evaluate(a, env) for a in e.args]
    try:
        return float(_SCALAR_FUNCS[e.name](*args))
    except (ValueError, OverflowError) as exc:
        raise EvaluationError(str(exc), e) from None


def _to_source(e: Expr, consts: Mapping[str, float]) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return repr(float(consts[e.name])) if e.name in consts else e.name
    if isinstance(e, Neg):
        return f"(-{_to_source(e.arg, consts)})"
    if isinstance(e, BinOp):
        a, b = _to_source(e.left, consts), _to_source(e.right, consts)
        if e.op == "^":
            if isinstance(e.right, Const) and e.right.value == int(e.right.value):
                return f"({a} ** {int(e.right.value)})"
            return f"_pow({a}, {b})"
        return f"({a} {e.op} {b})"
    args = ", ".join(_to_source(a, consts) for a in e.args)
    if e.name in ("min", "max"):
        return f"{e.name}({args})"
    if e.name in ("abs", "sign", "clamp"):
        return f"_{e.name}({args})"
    return f"_m.{e.name}({args})"


def compile_function(
    exprs: Sequence[Expr],
    arg_names: Sequence[str],
    consts: Mapping[str, float] | None = None,
    *,
    scalar: bool = False,
) -> Callable:
    """Compile expressions into ``f(t, x)`` returning a list (or a float).

    ``arg_names`` are the state variable names bound positionally from ``x``;
    ``t`` is always available and ``consts`` are inlined as literals.
    Errors surface as native Python exceptions (ZeroDivisionError,
    ValueError, OverflowError); callers that need the failing node re-run
    :func:`evaluate`.
    """
    consts = dict(consts or {})
    body = [_to_source(e, consts) for e in exprs]
    unpack = ""
    if arg_names:
        unpack = f"    {', '.join(arg_names)}, = x\n"
    ret = body[0] if scalar else "[" + ", ".join(body) + "]"
    src = f"def _f(t, x):\n{unpack}    return {ret}\n"
    namespace = {"_m": math, "_pow": _pow, "_sign": _sign, "_clamp": _clamp, "_abs": abs}
    exec(compile(src, "<exprlang>", "exec"), namespace)
    fn = namespace["_f"]
    fn.source = src
    return fn


# --------------------------------------------------------------------------
# truncated Taylor jets

class Jet:
    """Normalized Taylor coefficients ``c[k] = f^(k)(t0) / k!`` up to a fixed order."""

    __slots__ = ("c",)

    def __init__(self, coeffs: Sequence[float]):
        self.c = list(coeffs)

    @classmethod
    def constant(cls, value: float, n: int) -> "Jet":
        return cls([value] + [0.0] * (n - 1))

    def __len__(self) -> int:
        return len(self.c)

    def __repr__(self) -> str:
        return f"Jet({self.c!r})"

    def derivative(self, k: int) -> float:
        return self.c[k] * math.factorial(k)

    def sign(self) -> float:
        """Sign of the series for small positive time offsets."""
        for v in self.c:
            if v != 0.0:
                return 1.0 if v > 0 else -1.0
        return 0.0


def _jmul(a: list[float], b: list[float]) -> list[float]:
    n = len(a)
    return [sum(a[j] * b[k - j] for j in range(k + 1)) for k in range(n)]


def _jdiv(a: list[float], b: list[float], node: Expr) -> list[float]:
    if b[0] == 0.0:
        raise EvaluationError("division by zero", node)
    q: list[float] = []
    for k in range(len(a)):
        q.append((a[k] - sum(b[j] * q[k - j] for j in range(1, k + 1))) / b[0])
    return q


def _jexp(a: list[float]) -> list[float]:
    e = [math.exp(a[0])]
    for k in range(1, len(a)):
        e.append(sum(j * a[j] * e[k - j] for j in range(1, k + 1)) / k)
    return e


def _jlog(a: list[float], node: Expr) -> list[float]:
    if a[0] <= 0.0:
        raise EvaluationError("log of non-positive value", node)
    out = [math.log(a[0])]
    for k in range(1, len(a)):
        acc = sum(j * out[j] * a[k - j] for j in range(1, k))
        out.append((a[k] - acc / k) / a[0])
    return out


def _jsincos(a: list[float]) -> tuple[list[float], list[float]]:
    s = [math.sin(a[0])]
    c = [math.cos(a[0])]
    for k in range(1, len(a)):
        s.append(sum(j * a[j] * c[k - j] for j in range(1, k + 1)) / k)
        c.append(-sum(j * a[j] * s[k - j] for j in range(1, k + 1)) / k)
    return s, c


def _jsqrt(a: list[float], node: Expr) -> list[float]:
    if a[0] < 0.0:
        raise EvaluationError("sqrt of negative value", node)
    r = [math.sqrt(a[0])]
    if len(a) > 1 and r[0] == 0.0:
        raise EvaluationError("sqrt is not differentiable at 0", node)
    for k in range(1, len(a)):
        acc = sum(r[j] * r[k - j] for j in range(1, k))
        r.append((a[k] - acc) / (2.0 * r[0]))
    return r


def _jpow(a: list[float], b: list[float], node: Expr) -> list[float]:
    n = len(a)
    if all(v == 0.0 for v in b[1:]) and b[0] == int(b[0]):
        p = int(b[0])
        if p < 0:
            return _jdiv([1.0] + [0.0] * (n - 1), _jpow(a, [float(-p)] + [0.0] * (n - 1), node), node)
        out = [1.0] + [0.0] * (n - 1)
        base = a
        while p:
            if p & 1:
                out = _jmul(out, base)
            p >>= 1
            if p:
                base = _jmul(base, base)
        return out
    if a[0] <= 0.0:
        raise EvaluationError("non-integer power of non-positive base", node)
    return _jexp(_jmul(b, _jlog(a, node)))


def _jcompare(a: list[float], b: list[float]) -> float:
    """Forward-time ordering of two jets: sign of ``a - b``."""
    return Jet([x - y for x, y in zip(a, b)]).sign()


def jet_evaluate(e: Expr, env: Mapping[str, list[float]], n: int) -> list[float]:
    """Evaluate ``e`` over jets of length ``n`` (coefficient lists)."""
    if isinstance(e, Const):
        return [e.value] + [0.0] * (n - 1)
    if isinstance(e, Var):
        try:
            return env[e.name][:n]
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return [-v for v in jet_evaluate(e.arg, env, n)]
    if isinstance(e, BinOp):
        a = jet_evaluate(e.left, env, n)
        b = jet_evaluate(e.right, env, n)
        if e.op == "+":
            return [x + y for x, y in zip(a, b)]
        if e.op == "-":
            return [x - y for x, y in zip(a, b)]
        if e.op == "*":
            return _jmul(a, b)
        if e.op == "/":
            return _jdiv(a, b, e)
        return _jpow(a, b, e)
    args = [jet_evaluate(a, env, n) for a in e.args]
    name = e.name
    try:
        if name == "sin":
            return _jsincos(args[0])[0]
        if name == "cos":
            return _jsincos(args[0])[1]
        if name == "tan":
            s, c = _jsincos(args[0])
            return _jdiv(s, c, e)
        if name == "exp":
            return _jexp(args[0])
        if name == "log":
            return _jlog(args[0], e)
        if name == "sqrt":
            return _jsqrt(args[0], e)
    except OverflowError as exc:
        raise EvaluationError(str(exc), e) from None
    if name == "abs":
        s = Jet(args[0]).sign()
        return [s * v for v in args[0]]
    if name == "sign":
        return [Jet(args[0]).sign()] + [0.0] * (n - 1)
    if name == "min":
        return args[0] if _jcompare(args[0], args[1]) <= 0 else args[1]
    if name == "max":
        return args[0] if _jcompare(args[0], args[1]) >= 0 else args[1]
    # clamp(x, lo, hi) = min(max(x, lo), hi)
    x, lo, hi = args
    x = x if _jcompare(x, lo) >= 0 else lo
    return x if _jcompare(x, hi) <= 0 else hi


def iter_lie_derivatives(field: "FieldSpec", g: Expr, p: "ExtPoint") -> Iterator[float]:
    """Yield d1, d2, ... : successive time derivatives of ``g`` along the flow.

    The state is propagated as a Taylor series by the standard recurrence
    ``x[k+1] = v(x, t)[k] / (k + 1)``, one order per yielded value, so
    callers that stop at the first decisive derivative pay only for it.
    """
    names = field.variables
    params = {k: [float(v)] for k, v in field.params.items()}
    coeffs = [[float(v)] for v in p.state]
    t0 = float(p.time)
    k = 0
    while True:
        n = k + 1
        env = {name: c for name, c in zip(names, coeffs)}
        env["t"] = [t0, 1.0][:n] + [0.0] * max(0, n - 2)
        for name, c in params.items():
            env[name] = c + [0.0] * (n - 1)
        for i, rhs in enumerate(field.rhs):
            vel = jet_evaluate(rhs, env, n)
            coeffs[i].append(vel[k] / (k + 1))
        n += 1
        env = {name: c for name, c in zip(names, coeffs)}
        env["t"] = [t0, 1.0] + [0.0] * (n - 2)
        for name, c in params.items():
            env[name] = c + [0.0] * (n - 1)
        gj = jet_evaluate(g, env, n)
        k += 1
        yield gj[k] * math.factorial(k)


def lie_derivatives(field: "FieldSpec", g: Expr, p: "ExtPoint", K: int = 4) -> list[float]:
    """Exact derivatives ``d_k = (d/dt)^k g(x(t), t)`` at ``p`` for ``k = 1..K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    out = []
    for d in iter_lie_derivatives(field, g, p):
        out.append(d)
        if len(out) == K:
            return out
    return out  # pragma: no cover


def partial_derivative(
    g: Expr, env: Mapping[str, float], name: str
) -> float:
    """Exact partial derivative of ``g`` with respect to ``name`` at ``env``."""
    jets = {k: [float(v), 1.0 if k == name else 0.0] for k, v in env.items()}
    return jet_evaluate(g, jets, 2)[1]
