"""Arithmetic expressions in the single variable ``t``.

Potentials are entered as text such as ``"0.2*sin(2*t) + 0.5"``.  The parser is
a small recursive-descent parser producing an immutable AST, which can be
evaluated (on scalars or numpy arrays) and differentiated symbolically, so
that conformable derivatives of the potential are exact rather than
finite-difference approximations.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | 't' | 'pi' | 'e' | ident '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than a leading minus, so
``-t^2`` is ``-(t^2)`` and ``t^2^3`` is ``t^(2^3)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi, "e": math.e}
KNOWN_NAMES = ("t",) + tuple(CONSTANTS) + FUNCTIONS

BINARY = ("add", "sub", "mul", "div", "pow")
_OP_KIND = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}
_KIND_OP = {v: k for k, v in _OP_KIND.items()}

Number = Union[float, np.ndarray]


class ParseError(ValueError):
    """Malformed expression text.

    ``offset`` is a byte offset into the UTF-8 encoded source; ``expected``
    lists the token classes that would have been accepted there.
    """

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.message = message
        self.offset = offset
        self.expected = tuple(expected)
        detail = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class EvaluationError(ArithmeticError):
    """Raised when an expression has no real value, e.g. ``log`` of a negative."""

    def __init__(self, message: str, node: "Node"):
        self.node = node
        super().__init__(f"{message} in '{to_source(node)}'")


class UnsupportedOperation(ValueError):
    """Raised when differentiating a node with no derivative rule (``abs``)."""


@dataclass(frozen=True)
class Node:
    """One AST node.

    ``kind`` is one of ``num``, ``var``, ``const``, ``neg``, ``add``, ``sub``,
    ``mul``, ``div``, ``pow`` or ``call``.  ``value`` holds the float for
    ``num``, the name for ``const`` and ``call``.  ``offset`` records where the
    node started in the source and does not take part in equality.
    """

    kind: str
    value: float | str | None = None
    children: tuple["Node", ...] = ()
    offset: int = field(default=-1, compare=False)

    def __post_init__(self) -> None:
        arity = {"num": 0, "var": 0, "const": 0, "neg": 1, "call": 1}.get(self.kind)
        if arity is None and self.kind in BINARY:
            arity = 2
        if arity is None:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if len(self.children) != arity:
            raise ValueError(f"{self.kind} node needs {arity} children")

    def __str__(self) -> str:
        if self.kind == "num":
            return _format_number(self.value)
        if self.kind == "var":
            return "t"
        if self.kind == "const":
            return str(self.value)
        name = self.value if self.kind == "call" else self.kind
        return f"{name}({', '.join(str(c) for c in self.children)})"


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            byte_pos += len(source[pos:].encode())
            pos = len(source)
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            lead = len(source[pos:]) - len(source[pos:].lstrip())
            off = byte_pos + len(source[pos:pos + lead].encode())
            raise ParseError(f"unexpected character {source[pos + lead]!r}", off,
                             ("number", "identifier", "operator"))
        kind = m.lastgroup
        start = m.start(kind)
        off = byte_pos + len(source[pos:start].encode())
        tokens.append(_Token(kind, m.group(kind), off))
        byte_pos += len(source[pos:m.end()].encode())
        pos = m.end()
    tokens.append(_Token("end", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def _is_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def _expect_op(self, op: str) -> _Token:
        if not self._is_op(op):
            raise ParseError(f"expected {op!r}, found {self._describe()}", self.tok.offset, (repr(op),))
        return self._advance()

    def _describe(self) -> str:
        return "end of input" if self.tok.kind == "end" else repr(self.tok.text)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected {self._describe()}", self.tok.offset,
                             ("operator", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self._is_op("+", "-"):
            op = self._advance()
            node = Node(_OP_KIND[op.text], None, (node, self.term()), node.offset)
        return node

    def term(self) -> Node:
        node = self.unary()
        while self._is_op("*", "/"):
            op = self._advance()
            node = Node(_OP_KIND[op.text], None, (node, self.unary()), node.offset)
        return node

    def unary(self) -> Node:
        if self._is_op("-"):
            op = self._advance()
            return Node("neg", None, (self.unary(),), op.offset)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self._is_op("^"):
            self._advance()
            return Node("pow", None, (base, self.unary()), base.offset)
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self._advance()
            return Node("num", float(tok.text), (), tok.offset)
        if tok.kind == "ident":
            self._advance()
            name = tok.text
            if name == "t":
                return Node("var", None, (), tok.offset)
            if name in CONSTANTS:
                return Node("const", name, (), tok.offset)
            if name in FUNCTIONS:
                self._expect_op("(")
                if self._is_op(")"):
                    raise ParseError(f"{name}() needs an argument", self.tok.offset, ("expression",))
                arg = self.expr()
                self._expect_op(")")
                return Node("call", name, (arg,), tok.offset)
            raise ParseError(f"unknown identifier {name!r}; known names: {', '.join(KNOWN_NAMES)}",
                             tok.offset, KNOWN_NAMES)
        if self._is_op("("):
            self._advance()
            node = self.expr()
            self._expect_op(")")
            return node
        raise ParseError(f"unexpected {self._describe()}", tok.offset, ("expression",))


def parse(source: str) -> Node:
    """Parse ``source`` into an AST; raises :class:`ParseError` on bad input."""
    if not source or not source.strip():
        raise ParseError("empty expression", 0, ("expression",))
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _format_number(value: float) -> str:
    text = repr(float(value))
    return f"({text})" if value < 0 else text


def to_source(node: Node) -> str:
    """Render ``node`` as parseable text (binary operations fully parenthesized)."""
    k = node.kind
    if k in ("num", "var", "const"):
        return str(node)
    if k == "neg":
        return f"(-{to_source(node.children[0])})"
    if k == "call":
        return f"{node.value}({to_source(node.children[0])})"
    left, right = node.children
    return f"({to_source(left)} {_KIND_OP[k]} {to_source(right)})"


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _bad(mask) -> bool:
    return bool(np.any(mask))


def _eval(node: Node, t):
    k = node.kind
    if k == "num":
        return node.value
    if k == "var":
        return t
    if k == "const":
        return CONSTANTS[node.value]
    if k == "neg":
        return -_eval(node.children[0], t)
    if k == "call":
        a = _eval(node.children[0], t)
        name = node.value
        if name == "log":
            if _bad(np.asarray(a) <= 0):
                raise EvaluationError("log of non-positive value", node)
            return np.log(a)
        if name == "sqrt":
            if _bad(np.asarray(a) < 0):
                raise EvaluationError("sqrt of negative value", node)
            return np.sqrt(a)
        return getattr(np, "abs" if name == "abs" else name)(a)
    a = _eval(node.children[0], t)
    b = _eval(node.children[1], t)
    if k == "add":
        return a + b
    if k == "sub":
        return a - b
    if k == "mul":
        return a * b
    if k == "div":
        if _bad(np.asarray(b) == 0):
            raise EvaluationError("division by zero", node)
        return a / b
    # pow
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    neg_base = (a_arr < 0) & (b_arr != np.round(b_arr))
    if _bad(neg_base):
        raise EvaluationError("non-integer power of negative base", node)
    if _bad((a_arr == 0) & (b_arr < 0)):
        raise EvaluationError("division by zero", node)
    return np.power(a_arr, b_arr)


def evaluate(node: Node, t: Number) -> Number:
    """Evaluate ``node`` at ``t`` (float or array); raises :class:`EvaluationError`."""
    with np.errstate(all="ignore"):
        out = _eval(node, np.asarray(t, dtype=float) if np.ndim(t) else float(t))
    if np.ndim(t):
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(t)).copy()
    return float(out)


def is_constant(node: Node) -> bool:
    """True when ``node`` does not reference ``t``."""
    if node.kind == "var":
        return False
    return all(is_constant(c) for c in node.children)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

ZERO = Node("num", 0.0)
ONE = Node("num", 1.0)


def _num(v: float) -> Node:
    return Node("num", float(v))


def _is_num(node: Node, value: float | None = None) -> bool:
    return node.kind == "num" and (value is None or node.value == value)


def _add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return _num(a.value + b.value)
    return Node("add", None, (a, b))


def _sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return _num(a.value - b.value)
    return Node("sub", None, (a, b))


def _neg(a: Node) -> Node:
    if _is_num(a):
        return _num(-a.value)
    if a.kind == "neg":
        return a.children[0]
    return Node("neg", None, (a,))


def _mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return _num(a.value * b.value)
    return Node("mul", None, (a, b))


def _div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    return Node("div", None, (a, b))


def _pow(a: Node, b: Node) -> Node:
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return ONE
    return Node("pow", None, (a, b))


def _call(name: str, a: Node) -> Node:
    return Node("call", name, (a,))


def differentiate(node: Node) -> Node:
    """Symbolic d/dt of ``node`` with light local simplification."""
    k = node.kind
    if k in ("num", "const"):
        return ZERO
    if k == "var":
        return ONE
    if k == "neg":
        return _neg(differentiate(node.children[0]))
    if k in ("add", "sub"):
        a, b = node.children
        return (_add if k == "add" else _sub)(differentiate(a), differentiate(b))
    if k == "mul":
        a, b = node.children
        return _add(_mul(differentiate(a), b), _mul(a, differentiate(b)))
    if k == "div":
        a, b = node.children
        num = _sub(_mul(differentiate(a), b), _mul(a, differentiate(b)))
        return _div(num, _pow(b, _num(2.0)))
    if k == "pow":
        a, b = node.children
        da = differentiate(a)
        if is_constant(b):
            return _mul(_mul(b, _pow(a, _sub(b, ONE))), da)
        db = differentiate(b)
        inner = _add(_mul(db, _call("log", a)), _div(_mul(b, da), a))
        return _mul(node, inner)
    # call
    name = node.value
    a = node.children[0]
    da = differentiate(a)
    if name == "sin":
        outer = _call("cos", a)
    elif name == "cos":
        outer = _neg(_call("sin", a))
    elif name == "tan":
        outer = _div(ONE, _pow(_call("cos", a), _num(2.0)))
    elif name == "exp":
        outer = node
    elif name == "log":
        return _div(da, a)
    elif name == "sqrt":
        return _div(da, _mul(_num(2.0), node))
    else:
        raise UnsupportedOperation(f"cannot differentiate {name}()")
    return _mul(outer, da)


@dataclass(frozen=True)
class Expression:
    """Parsed expression bundled with its source text and symbolic derivative."""

    source: str
    ast: Node
    derivative: Node | None

    @classmethod
    def from_source(cls, source: str) -> "Expression":
        ast = parse(source)
        try:
            d = differentiate(ast)
        except UnsupportedOperation:
            d = None
        return cls(source, ast, d)

    @property
    def is_constant(self) -> bool:
        return is_constant(self.ast)

    def __call__(self, t: Number) -> Number:
        return evaluate(self.ast, t)

    def deriv(self, t: Number) -> Number:
        if self.derivative is None:
            raise UnsupportedOperation(f"no derivative available for {self.source!r}")
        return evaluate(self.derivative, t)
