"""Tiny rate-expression language used by JSON model files.

Grammar::

    expr   := term ('+' term)*
    term   := factor ('*' factor)*
    factor := NUMBER | zK | gate(J) | hill(zK, K, H) | '(' expr ')'

``zK`` is the K-th slow component (1-based, as in ``z1``, ``z2``).
``gate(J)`` is 1 when the fast state equals ``J`` (0-based) and 0 otherwise.
``hill(zK, K, H)`` is ``zK**H / (K + zK**H)``.

Expressions compile to vectorized callables ``fn(z, xi)`` where ``z`` has
shape ``(..., d)`` and ``xi`` broadcasts against ``z[..., 0]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[+*(),]))"
)


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class _Node:
    kind: str
    args: tuple = ()
    value: float = 0.0
    index: int = 0


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos} in {text!r}")
        out.append(m.group(m.lastgroup))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens: list[str], d: int, D: int):
        self.tokens = tokens
        self.i = 0
        self.d = d
        self.D = D

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise ExpressionError(f"expected {expected or 'token'}, got {tok!r}")
        self.i += 1
        return tok

    def parse(self) -> _Node:
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input at token {self.peek()!r}")
        return node

    def expr(self) -> _Node:
        terms = [self.term()]
        while self.peek() == "+":
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else _Node("sum", tuple(terms))

    def term(self) -> _Node:
        factors = [self.factor()]
        while self.peek() == "*":
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else _Node("prod", tuple(factors))

    def _number(self) -> float:
        tok = self.take()
        try:
            return float(tok)
        except ValueError:
            raise ExpressionError(f"expected number, got {tok!r}") from None

    def _component(self) -> int:
        tok = self.take()
        m = re.fullmatch(r"z(\d+)", tok)
        if m is None:
            raise ExpressionError(f"expected slow component zK, got {tok!r}")
        k = int(m.group(1))
        if not 1 <= k <= self.d:
            raise ExpressionError(f"{tok} out of range for d={self.d}")
        return k - 1

    def factor(self) -> _Node:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        if tok == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if tok == "gate":
            self.take()
            self.take("(")
            j = self._number()
            self.take(")")
            if j != int(j) or not 0 <= j < self.D:
                raise ExpressionError(f"gate index {j} out of range for D={self.D}")
            return _Node("gate", index=int(j))
        if tok == "hill":
            self.take()
            self.take("(")
            k = self._component()
            self.take(",")
            K = self._number()
            self.take(",")
            h = self._number()
            self.take(")")
            if K <= 0:
                raise ExpressionError("hill constant must be positive")
            return _Node("hill", args=(K, h), index=k)
        if re.fullmatch(r"z\d+", tok):
            return _Node("z", index=self._component())
        return _Node("num", value=self._number())


def _evaluate(node: _Node, z: np.ndarray, xi) -> np.ndarray:
    kind = node.kind
    if kind == "num":
        return np.full(z.shape[:-1], node.value)
    if kind == "z":
        return z[..., node.index]
    if kind == "gate":
        return np.broadcast_to(np.asarray(xi) == node.index, z.shape[:-1]).astype(float)
    if kind == "hill":
        K, h = node.args
        zh = np.maximum(z[..., node.index], 0.0) ** h
        return zh / (K + zh)
    if kind == "sum":
        out = _evaluate(node.args[0], z, xi)
        for a in node.args[1:]:
            out = out + _evaluate(a, z, xi)
        return out
    out = _evaluate(node.args[0], z, xi)
    for a in node.args[1:]:
        out = out * _evaluate(a, z, xi)
    return out


def _uses_gate(node: _Node) -> bool:
    return node.kind == "gate" or any(_uses_gate(a) for a in node.args if isinstance(a, _Node))


@dataclass(frozen=True)
class RateExpression:
    """Compiled expression; call with ``(z, xi)``."""

    text: str
    tree: _Node
    gated: bool

    def __call__(self, z, xi=0) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return _evaluate(self.tree, z, xi)


def compile_expression(text: str | float, d: int, D: int = 1) -> RateExpression:
    if isinstance(text, (int, float)):
        text = repr(float(text))
    tree = _Parser(_tokenize(text), d, D).parse()
    return RateExpression(text, tree, _uses_gate(tree))
