"""Arithmetic expression language for problem data.

Defines the right-hand side psi(x, u, p), boundary data phi(x), and the
subsolution in configuration files, and supplies the exact partial
derivatives the Newton linearization needs.  The grammar:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

so '^' binds tighter than unary minus and associates to the right
(``x1^2^3`` is ``x1^(2^3)``, ``-x1^2`` is ``-(x1^2)``).  Identifiers are
the coordinates x1..xn, the unknown u, the gradient slots p1..pn, and the
functions exp, log, sin, cos, sqrt.  No abs/min/max/sign: the
linearization needs C^1 data, and excluding non-smooth primitives keeps
differentiation total.

Trees are immutable; evaluation is pure and accepts numpy arrays in the
environment, broadcasting elementwise.
"""

import re
from dataclasses import dataclass

import numpy as np

_FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    """Syntax error with the byte offset and the set of expected tokens."""

    def __init__(self, message, offset, expected=()):
        self.offset = int(offset)
        self.expected = tuple(expected)
        hint = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {self.offset}{hint}")


class UnknownIdentifierError(ParseError):
    pass


class DomainFaultError(ExprError):
    """Evaluation hit a domain fault (log of a non-positive value, square
    root of a negative, division by zero, fractional power of a negative).
    Carries the offending subexpression and a witnessing value."""

    def __init__(self, message, subexpr, value):
        self.subexpr = subexpr
        self.value = float(value)
        super().__init__(f"{message} in '{to_string(subexpr)}' (value {self.value:g})")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


@dataclass(frozen=True)
class EvalEnv:
    """Point data for evaluation: coordinates x (length n along the last
    axis), scalar field value u, gradient values p.  u and p may be None
    for expressions that do not use them."""

    x: object
    u: object = None
    p: object = None


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == m.start():
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[bad]!r}", bad)
        if m.lastgroup is None:
            pos = m.end()
            continue
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = int(n)
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, text, off = self.peek()
        if kind == "op" and text == op:
            return self.advance()
        raise ParseError(f"unexpected token {text or 'end of input'!r}", off, (op,))

    def parse(self):
        tree = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {text!r}", off, ("end of input",))
        return tree

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.factor())
            else:
                return node

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            inner = self.factor()
            # fold negated literals so printed trees reparse identically
            if isinstance(inner, Num):
                return Num(-inner.value)
            return Neg(inner)
        return self.power()

    def power(self):
        node = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", node, self.factor())
        return node

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nk, ntext, _ = self.peek()
            if nk == "op" and ntext == "(":
                if text not in _FUNCTIONS:
                    raise UnknownIdentifierError(
                        f"unknown function {text!r}", off, _FUNCTIONS
                    )
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            return Var(self._variable(text, off))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(
            f"unexpected token {text or 'end of input'!r}",
            off,
            ("number", "identifier", "(", "-"),
        )

    def _variable(self, name, off):
        if name == "u":
            return name
        m = re.fullmatch(r"([xp])([0-9]+)", name)
        if m is None:
            raise UnknownIdentifierError(f"unknown identifier {name!r}", off)
        idx = int(m.group(2))
        if not (1 <= idx <= self.n):
            raise UnknownIdentifierError(
                f"variable {name!r} exceeds dimension n={self.n}", off
            )
        return f"{m.group(1)}{idx}"


def parse(text, n):
    """Parse an expression over x1..xn, u, p1..pn into an immutable tree."""
    return _Parser(text, n).parse()


def variables(e):
    """Set of variable names that occur in the tree."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return variables(e.arg)
    if isinstance(e, Call):
        return variables(e.arg)
    return variables(e.left) | variables(e.right)


def _lookup(name, env):
    if name == "u":
        if env.u is None:
            raise ExprError("expression uses 'u' but the environment has no u")
        return env.u
    kind, idx = name[0], int(name[1:]) - 1
    source = env.x if kind == "x" else env.p
    if source is None:
        raise ExprError(f"expression uses '{name}' but the environment has no {kind}")
    return np.asarray(source, dtype=float)[..., idx]


def _first_bad(values, mask):
    return np.asarray(values, dtype=float)[mask].flat[0]


def evaluate(e, env):
    """Evaluate a tree at an environment; IEEE double, arrays broadcast.

    Domain faults are raised as DomainFaultError with the offending
    subexpression attached, never returned silently as NaN.
    """
    with np.errstate(all="ignore"):
        return _eval(e, env)


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return _lookup(e.name, env)
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Call):
        arg = _eval(e.arg, env)
        if e.func == "log":
            bad = np.asarray(arg) <= 0.0
            if np.any(bad):
                raise DomainFaultError("log of non-positive value", e, _first_bad(arg, bad))
            return np.log(arg)
        if e.func == "sqrt":
            bad = np.asarray(arg) < 0.0
            if np.any(bad):
                raise DomainFaultError("sqrt of negative value", e, _first_bad(arg, bad))
            return np.sqrt(arg)
        if e.func == "exp":
            return np.exp(arg)
        if e.func == "sin":
            return np.sin(arg)
        return np.cos(arg)
    left = _eval(e.left, env)
    right = _eval(e.right, env)
    if e.op == "+":
        return np.add(left, right)
    if e.op == "-":
        return np.subtract(left, right)
    if e.op == "*":
        return np.multiply(left, right)
    if e.op == "/":
        bad = np.asarray(right) == 0.0
        if np.any(bad):
            raise DomainFaultError("division by zero", e, 0.0)
        return np.divide(left, right)
    return _pow(e, left, right)


def _pow(node, base, exponent):
    base_a = np.asarray(base, dtype=float)
    exp_a = np.asarray(exponent, dtype=float)
    frac = exp_a != np.floor(exp_a)
    bad = (base_a < 0.0) & frac
    if np.any(bad):
        raise DomainFaultError("fractional power of negative base", node, _first_bad(base_a, np.asarray(bad)))
    bad = (base_a == 0.0) & (exp_a < 0.0)
    if np.any(bad):
        raise DomainFaultError("zero raised to a negative power", node, 0.0)
    return np.power(base, exponent)


def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def _add(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        return Num(a.value / b.value)
    return BinOp("/", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow_node(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    return BinOp("^", a, b)


def differentiate(e, var):
    """Exact symbolic derivative of a tree in one variable.

    ``var`` is a variable name: one of x1..xn, u, p1..pn.  Literal
    arithmetic is folded during construction, so d/du of u^2 comes back as
    2*u and derivatives of unrelated variables collapse to 0.
    """
    if not re.fullmatch(r"u|[xp][0-9]+", var):
        raise ValueError(f"not a variable name: {var!r}")
    return _diff(e, var)


def _diff(e, var):
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.name == var else 0.0)
    if isinstance(e, Neg):
        return _neg(_diff(e.arg, var))
    if isinstance(e, Call):
        da = _diff(e.arg, var)
        if e.func == "exp":
            return _mul(Call("exp", e.arg), da)
        if e.func == "log":
            return _div(da, e.arg)
        if e.func == "sin":
            return _mul(Call("cos", e.arg), da)
        if e.func == "cos":
            return _neg(_mul(Call("sin", e.arg), da))
        return _div(da, _mul(Num(2.0), Call("sqrt", e.arg)))
    dl = _diff(e.left, var)
    dr = _diff(e.right, var)
    if e.op == "+":
        return _add(dl, dr)
    if e.op == "-":
        return _sub(dl, dr)
    if e.op == "*":
        return _add(_mul(dl, e.right), _mul(e.left, dr))
    if e.op == "/":
        return _div(_sub(_mul(dl, e.right), _mul(e.left, dr)), _pow_node(e.right, Num(2.0)))
    # power rule when the exponent is constant, else a^b = exp(b log a)
    if isinstance(e.right, Num):
        c = e.right.value
        return _mul(_mul(Num(c), _pow_node(e.left, Num(c - 1.0))), dl)
    return _mul(
        BinOp("^", e.left, e.right),
        _add(_mul(dr, Call("log", e.left)), _div(_mul(e.right, dl), e.left)),
    )


def to_string(e):
    """Render a tree as parseable text; reparsing gives an identical tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    return f"({to_string(e.left)}{e.op}{to_string(e.right)})"
