"""Rational arithmetic expressions for parametric transition entries.

Grammar (standard precedence, left associative)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | atom
    atom   := NUMBER | NAME | '(' expr ')'

Evaluation accepts scalars or numpy arrays as parameter values, so one
expression can be evaluated for a whole batch of scenarios at once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import DivisionByZero, ParseError, UnboundParameter


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Param, Neg, BinOp]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/()])
""", re.VERBOSE)

_ATOM_START = ("number", "name", "'('", "'-'")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    raw = text.encode("utf-8")
    # offsets are byte offsets into the UTF-8 encoding
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode("utf-8")))
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), len(text[:pos].encode("utf-8"))))
        pos = m.end()
    toks.append(("eof", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected token {val!r}", off, ("'+'", "'-'", "'*'", "'/'", "end of input"))
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, off = self.advance()
            right = self.factor()
            if op == "/" and isinstance(right, Num) and right.value == 0.0:
                raise ParseError("division by literal zero", off)
            node = BinOp(op, node, right)
        return node

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.factor())
        return self.atom()

    def atom(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            return Param(val)
        if kind == "op" and val == "(":
            node = self.expr()
            kind, val, off = self.advance()
            if not (kind == "op" and val == ")"):
                raise ParseError("unbalanced parenthesis", off, ("')'", "'+'", "'-'", "'*'", "'/'"))
            return node
        what = "end of input" if kind == "eof" else f"token {val!r}"
        raise ParseError(f"unexpected {what}", off, _ATOM_START)


def parse_expr(text: str) -> Expr:
    return _Parser(text).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_text(node: Expr) -> str:
    """Canonical text with the minimum parentheses needed to re-parse the same tree."""
    if isinstance(node, Num):
        v = float(node.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if isinstance(node.operand, BinOp):
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[node.op]
    left = to_text(node.left)
    if isinstance(node.left, BinOp) and _PREC[node.left.op] < p:
        left = f"({left})"
    right = to_text(node.right)
    if isinstance(node.right, BinOp) and _PREC[node.right.op] <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}" if p == _PREC["+"] else f"{left}{node.op}{right}"


def parameters(node: Expr) -> set[str]:
    if isinstance(node, Param):
        return {node.name}
    if isinstance(node, Neg):
        return parameters(node.operand)
    if isinstance(node, BinOp):
        return parameters(node.left) | parameters(node.right)
    return set()


def eval_expr(node: Expr, params: Mapping[str, float | np.ndarray]):
    """Evaluate in double precision; values may be scalars or equal-shape arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Param):
        try:
            return params[node.name]
        except KeyError:
            raise UnboundParameter(node.name) from None
    if isinstance(node, Neg):
        return -eval_expr(node.operand, params)
    a = eval_expr(node.left, params)
    b = eval_expr(node.right, params)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if np.any(np.asarray(b) == 0.0):
        raise DivisionByZero(f"division by zero in {to_text(node)}")
    return a / b
