"""Recursive-descent parser and printer for the expression language.

Grammar (lowest to highest precedence)::

    expr     := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | "+" unary | power
    power    := primary ("^" exponent)*
    exponent := "-" exponent | primary          # must be variable-free
    primary  := NUMBER | NAME | NAME "(" args ")" | "(" expr ")"

Same-precedence binary operators associate to the left, ``^`` included.
"""

from __future__ import annotations

import math
import re
from typing import Mapping

from ..errors import ArityError, ExprSyntaxError, UnknownIdentifierError
from .nodes import UNARY_FUNCS, BinOp, Const, Expr, Func, Neg, Param, Partial, Var, is_constant

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"([xu])([1-9]\d*)$")
CONSTANTS = {"pi": math.pi}

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


class _Tok:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind, self.text, self.offset = kind, text, offset


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, len(text))))
    return toks


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, n, m, params):
        self.toks = _tokenize(text)
        self.i = 0
        self.n, self.m = n, m
        self.params = dict(params or {})

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def _expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind == "end":
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        return self._take()

    def parse(self) -> Expr:
        if self.tok.kind == "end":
            raise ExprSyntaxError("empty expression", 0)
        e = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._take().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._take().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._take()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self._take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        while self.tok.kind == "op" and self.tok.text == "^":
            at = self._take().offset
            expo = self.exponent()
            if not is_constant(expo):
                raise ExprSyntaxError("exponent must not depend on variables", at)
            base = BinOp("^", base, expo)
        return base

    def exponent(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._take()
            return Neg(self.exponent())
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self._take()
            return Const(float(t.text))
        if t.kind == "op" and t.text == "(":
            self._take()
            e = self.expr()
            self._expect(")")
            return e
        if t.kind == "name":
            self._take()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            return self.name(t)
        found = t.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", t.offset)

    def call(self, t: _Tok) -> Expr:
        self._expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self._take()
            args.append(self.expr())
        self._expect(")")
        if t.text in UNARY_FUNCS:
            if len(args) != 1:
                raise ArityError(f"{t.text} takes 1 argument, got {len(args)}", t.offset)
            return Func(t.text, args[0])
        if t.text == "diff":
            if len(args) != 2:
                raise ArityError(f"diff takes 2 arguments, got {len(args)}", t.offset)
            wrt = args[1]
            if not (isinstance(wrt, Var) and wrt.kind == "x"):
                raise ExprSyntaxError("diff needs a state variable as second argument", t.offset)
            return Partial(args[0], wrt.index)
        raise UnknownIdentifierError(f"unknown function {t.text!r}", t.offset)

    def name(self, t: _Tok) -> Expr:
        m = _VAR_RE.match(t.text)
        if m:
            kind, idx = m.group(1), int(m.group(2)) - 1
            limit = self.n if kind == "x" else self.m
            if idx >= limit:
                raise UnknownIdentifierError(
                    f"{t.text} exceeds declared dimension {kind}-dim={limit}", t.offset
                )
            return Var(kind, idx)
        if t.text in self.params:
            return Param(t.text, float(self.params[t.text]))
        if t.text in CONSTANTS:
            return Param(t.text, CONSTANTS[t.text])
        if t.text in UNARY_FUNCS or t.text == "diff":
            raise ArityError(f"function {t.text!r} used without arguments", t.offset)
        raise UnknownIdentifierError(f"unknown identifier {t.text!r}", t.offset)


def parse_expression(text: str, dims: tuple[int, int] = (1, 0), params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` over states ``x1..xn`` and inputs ``u1..um``.

    Raises :class:`ExprSyntaxError` (with a byte offset),
    :class:`UnknownIdentifierError` or :class:`ArityError`.
    """
    n, m = dims
    return _Parser(text, n, m, params).parse()


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _ATOM


def _fmt_const(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"non-finite constant {v!r} cannot be printed")
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Print with minimal parentheses; ``parse_expression(to_text(e))`` rebuilds ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Partial):
        return f"diff({to_text(e.body)}, x{e.index + 1})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left, right = to_text(e.left), to_text(e.right)
        if e.op == "^":
            if _prec(e.left) < p:
                left = f"({left})"
            if _prec(e.right) < _ATOM:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p and not isinstance(e.right, Neg):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression node: {e!r}")
