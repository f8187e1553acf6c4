"""Expression tree nodes for the system-definition language.

Trees are immutable and compare structurally, so ``parse(to_text(e)) == e``
can be checked with ``==``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

UNARY_FUNCS = ("exp", "log", "sin", "cos", "sqrt", "abs", "sign")
# Functions whose derivative is undefined at a zero argument.
NONSMOOTH_FUNCS = ("abs", "sign")


class Expr:
    """Base class for expression nodes."""

    __slots__ = ()

    def children(self) -> tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterator["Expr"]:
        yield self
        for c in self.children():
            yield from c.walk()

    def __str__(self) -> str:
        from .parser import to_text

        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    kind: str  # "x" or "u"
    index: int  # zero-based

    @property
    def name(self) -> str:
        return f"{self.kind}{self.index + 1}"


@dataclass(frozen=True)
class Param(Expr):
    name: str
    value: float


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Partial(Expr):
    """Partial derivative of ``body`` with respect to state variable ``index``.

    Evaluated through the dual-number path, never symbolically.
    """

    body: Expr
    index: int

    def children(self):
        return (self.body,)


def const(value: float) -> Expr:
    """Constant node; negative values become ``Neg(Const)`` so printing round-trips."""
    value = float(value)
    if value < 0 or (value == 0 and str(value).startswith("-")):
        return Neg(Const(-value))
    return Const(value)


def is_constant(e: Expr) -> bool:
    return not any(isinstance(node, (Var, Partial)) for node in e.walk())


def constant_value(e: Expr) -> float:
    """Value of a variable-free expression."""
    from .dual import evaluate

    if not is_constant(e):
        raise ValueError("expression depends on variables")
    return float(evaluate(e, [[]]).item())


def max_index(e: Expr, kind: str = "x") -> int:
    """One plus the largest variable index of ``kind`` referenced (0 if none)."""
    best = 0
    for node in e.walk():
        if isinstance(node, Var) and node.kind == kind:
            best = max(best, node.index + 1)
        elif isinstance(node, Partial) and kind == "x":
            best = max(best, node.index + 1)
    return best


def uses_kind(e: Expr, kind: str) -> bool:
    return any(isinstance(node, Var) and node.kind == kind for node in e.walk())


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace state variables ``x_{i+1}`` by ``mapping[i]``."""
    if isinstance(e, Var):
        if e.kind == "x" and e.index in mapping:
            return mapping[e.index]
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Partial):
        raise ValueError("cannot substitute into a derivative node")
    return e


def add(a: Expr, b: Expr) -> Expr:
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    return BinOp("*", a, b)


def x(i: int) -> Var:
    """State variable with zero-based index."""
    return Var("x", i)
