"""Model objects built from parsed expressions, plus the JSON system-definition
document format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import LyapscopeError, PreconditionError
from .compile import compile_vector
from .dual import evaluate, evaluate_dual, kink_mask
from .nodes import BinOp, Const, Expr, Neg, Partial, const, max_index, mul, substitute, uses_kind, x
from .parser import parse_expression, to_text


def _points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


@dataclass(frozen=True)
class SystemDef:
    """``dx/dt = drift(x) + inputs(x) @ u`` with ``inputs`` stored as n rows of m columns."""

    n: int
    m: int
    drift: tuple
    inputs: tuple = ()
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "inputs", tuple(tuple(r) for r in self.inputs))
        if len(self.drift) != self.n:
            raise ValueError(f"drift has {len(self.drift)} components, expected n={self.n}")
        if self.m and (len(self.inputs) != self.n or any(len(r) != self.m for r in self.inputs)):
            raise ValueError(f"inputs must be {self.n}x{self.m}")
        if not self.m and any(len(r) for r in self.inputs):
            raise ValueError("m=0 but input columns given")
        for e in self.all_exprs():
            if uses_kind(e, "u"):
                raise ValueError("drift and input expressions may only reference x-variables")
            if max_index(e) > self.n:
                raise ValueError(f"expression references a state beyond n={self.n}")

    @property
    def autonomous(self) -> bool:
        return self.m == 0

    def all_exprs(self) -> list:
        return list(self.drift) + [g for row in self.inputs for g in row]

    def require_control(self, what: str = "this operation"):
        if self.m == 0:
            raise PreconditionError(f"{what} needs a control system, {self.name or 'system'} has m=0")

    def require_autonomous(self, what: str = "this operation"):
        if self.m != 0:
            raise PreconditionError(f"{what} needs an autonomous system, {self.name or 'system'} has m={self.m}")

    def drift_values(self, X) -> np.ndarray:
        X = _points(X)
        return np.column_stack([evaluate(e, X) for e in self.drift]) if self.n else np.zeros((len(X), 0))

    def input_matrix(self, X) -> np.ndarray:
        """Input columns at each point, shape ``(N, n, m)``."""
        X = _points(X)
        G = np.zeros((len(X), self.n, self.m))
        for i, row in enumerate(self.inputs):
            for j, g in enumerate(row):
                G[:, i, j] = evaluate(g, X)
        return G

    def field(self, X, U=None) -> np.ndarray:
        F = self.drift_values(X)
        if U is not None and self.m:
            U = _points(U)
            F = F + np.einsum("nij,nj->ni", self.input_matrix(X), U)
        return F

    def __call__(self, X, U=None) -> np.ndarray:
        return self.field(X, U)

    def compiled(self):
        """Fast single-point evaluator of the drift, ``f(x) -> (n,)``."""
        return compile_vector(self.drift)

    def compiled_inputs(self):
        flat = [g for row in self.inputs for g in row]
        fn = compile_vector(flat)
        n, m = self.n, self.m
        return lambda xv: fn(xv).reshape(n, m)

    def kinks(self, X) -> np.ndarray:
        return kink_mask(self.all_exprs(), X)

    def scaled(self, theta: float) -> "SystemDef":
        t = const(theta)
        return SystemDef(
            self.n, self.m, [mul(t, e) for e in self.drift], self.inputs, self.params, f"{self.name}*{theta:g}"
        )

    def damped(self, lam: "Expr | float") -> "SystemDef":
        """Drift ``F(x) - lam(x) x`` (inputs unchanged)."""
        lam = const(lam) if not isinstance(lam, Expr) else lam
        drift = [BinOp("-", e, mul(lam, x(i))) for i, e in enumerate(self.drift)]
        return SystemDef(self.n, self.m, drift, self.inputs, self.params, f"{self.name}-damped")

    def with_drift(self, drift, name=None) -> "SystemDef":
        return SystemDef(self.n, self.m, drift, self.inputs, self.params, name or self.name)

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "m": self.m,
            "params": dict(self.params),
            "drift": [to_text(e) for e in self.drift],
        }
        d["inputs"] = [[to_text(g) for g in row] for row in self.inputs] if self.m else []
        return d


@dataclass(frozen=True)
class ScalarCertificate:
    """Candidate (control) Lyapunov function ``V``."""

    n: int
    body: Expr
    name: str = "V"
    claims: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if max_index(self.body) > self.n:
            raise ValueError(f"certificate references a state beyond n={self.n}")
        if uses_kind(self.body, "u"):
            raise ValueError("certificate may only reference x-variables")

    def value(self, X) -> np.ndarray:
        return evaluate(self.body, _points(X))

    def grad(self, X):
        d, _ = evaluate_dual(self.body, _points(X), order=1)
        return d.val, d.grad

    def hess(self, X):
        d, _ = evaluate_dual(self.body, _points(X), order=2)
        return d.val, d.grad, d.hess

    def kinks(self, X) -> np.ndarray:
        return kink_mask([self.body], X)

    def to_dict(self) -> dict:
        return {"name": self.name, "body": to_text(self.body), "claims": dict(self.claims)}


@dataclass(frozen=True)
class DiffeoDef:
    """Global diffeomorphism ``phi`` with explicit inverse, both over x."""

    n: int
    forward: tuple
    inverse: tuple
    name: str = "phi"

    def __post_init__(self):
        object.__setattr__(self, "forward", tuple(self.forward))
        object.__setattr__(self, "inverse", tuple(self.inverse))
        if len(self.forward) != self.n or len(self.inverse) != self.n:
            raise ValueError("diffeomorphism needs n forward and n inverse components")

    @classmethod
    def identity(cls, n: int) -> "DiffeoDef":
        comps = tuple(x(i) for i in range(n))
        return cls(n, comps, comps, "identity")

    def apply(self, X) -> np.ndarray:
        X = _points(X)
        return np.column_stack([evaluate(e, X) for e in self.forward])

    def apply_inverse(self, Y) -> np.ndarray:
        Y = _points(Y)
        return np.column_stack([evaluate(e, Y) for e in self.inverse])

    def jacobian(self, X) -> np.ndarray:
        X = _points(X)
        J = np.empty((len(X), self.n, self.n))
        for i, e in enumerate(self.forward):
            d, _ = evaluate_dual(e, X, order=1)
            J[:, i, :] = d.grad
        return J

    def kinks(self, X) -> np.ndarray:
        return kink_mask(self.forward, X)

    def pullback(self, body: Expr) -> Expr:
        """``y -> V(phi^{-1}(y))`` as a new expression."""
        return substitute(body, dict(enumerate(self.inverse)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "forward": [to_text(e) for e in self.forward],
            "inverse": [to_text(e) for e in self.inverse],
        }


def jacobian(s: SystemDef, xv, u=None) -> np.ndarray:
    """Jacobian of ``drift(x) + G(x) u`` with respect to x at a single point."""
    X = _points(xv)
    J = np.zeros((s.n, s.n))
    for i, e in enumerate(s.drift):
        J[i] = evaluate_dual(e, X, order=1)[0].grad[0]
    if u is not None and s.m:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        for i, row in enumerate(s.inputs):
            for j, g in enumerate(row):
                J[i] += u[j] * evaluate_dual(g, X, order=1)[0].grad[0]
    return J


def negative_gradient_field(V: ScalarCertificate) -> SystemDef:
    """Autonomous system ``dz/dt = -grad V(z)``."""
    drift = [Neg(Partial(V.body, i)) for i in range(V.n)]
    return SystemDef(V.n, 0, drift, name=f"-grad({V.name})")


def _linear_combo(coeffs: Sequence[float]) -> Expr:
    terms = [(c, i) for i, c in enumerate(coeffs) if c != 0.0]
    if not terms:
        return Const(0.0)
    out = None
    for c, i in terms:
        term = x(i) if c == 1.0 else mul(Const(abs(c)), x(i))
        if out is None:
            out = term if c > 0 else Neg(term)
        else:
            out = BinOp("+" if c > 0 else "-", out, term)
    return out


def linear_system(A, B=None, name: str = "linear") -> SystemDef:
    """``dx/dt = A x + B u`` as expressions."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    drift = [_linear_combo(A[i]) for i in range(n)]
    if B is None:
        return SystemDef(n, 0, drift, name=name)
    B = np.asarray(B, dtype=float).reshape(n, -1)
    inputs = [[const(B[i, j]) for j in range(B.shape[1])] for i in range(n)]
    return SystemDef(n, B.shape[1], drift, inputs, name=name)


def quadratic_certificate(P, name: str = "V", claims=None) -> ScalarCertificate:
    """``V(x) = 0.5 <P x, x>``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    P = 0.5 * (P + P.T)
    body = None
    for i in range(n):
        for j in range(i, n):
            c = P[i, i] if i == j else 2.0 * P[i, j]
            if c == 0.0:
                continue
            mono = mul(x(i), x(j))
            term = mono if c == 1.0 else mul(Const(abs(c)), mono)
            if body is None:
                body = term if c > 0 else Neg(term)
            else:
                body = BinOp("+" if c > 0 else "-", body, term)
    body = Const(0.0) if body is None else mul(Const(0.5), body)
    return ScalarCertificate(n, body, name, dict(claims or {}))


# -- system-definition documents ---------------------------------------------


@dataclass
class SystemDocument:
    """Parsed system-definition file.

    Core fields ``{n, m, params, drift, inputs, certificates}``; optional
    ``diffeos``, ``matrices``, ``expected``, ``id`` and ``provenance`` are
    carried through unchanged.
    """

    system: SystemDef
    certificates: dict
    diffeos: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def certificate(self, name: str | None = None) -> ScalarCertificate:
        if not self.certificates:
            raise LyapscopeError(f"{self.system.name or 'document'} has no certificates")
        if name is None:
            return next(iter(self.certificates.values()))
        try:
            return self.certificates[name]
        except KeyError:
            raise LyapscopeError(
                f"unknown certificate {name!r}; available: {sorted(self.certificates)}"
            ) from None

    def diffeo(self, name: str | None = None) -> DiffeoDef:
        if not self.diffeos:
            raise LyapscopeError("document has no diffeomorphisms")
        if name is None:
            return next(iter(self.diffeos.values()))
        return self.diffeos[name]

    def to_dict(self) -> dict:
        d = {}
        for key in ("id", "provenance"):
            if key in self.extra:
                d[key] = self.extra[key]
        d.update(self.system.to_dict())
        d["certificates"] = [c.to_dict() for c in self.certificates.values()]
        if self.diffeos:
            d["diffeos"] = [p.to_dict() for p in self.diffeos.values()]
        for key, val in self.extra.items():
            if key not in d:
                d[key] = val
        return d


_CORE_KEYS = {"n", "m", "params", "drift", "inputs", "certificates", "diffeos"}


def parse_document(doc: Mapping[str, Any], name: str = "") -> SystemDocument:
    n = int(doc["n"])
    m = int(doc.get("m", 0))
    params = {k: float(v) for k, v in (doc.get("params") or {}).items()}
    sysname = doc.get("id", name)
    drift = [parse_expression(t, (n, 0), params) for t in doc["drift"]]
    inputs = [[parse_expression(t, (n, 0), params) for t in row] for row in (doc.get("inputs") or [])]
    system = SystemDef(n, m, drift, inputs, params, sysname)
    certs = {}
    for c in doc.get("certificates") or []:
        body = parse_expression(c["body"], (n, 0), params)
        certs[c["name"]] = ScalarCertificate(n, body, c["name"], dict(c.get("claims") or {}))
    diffeos = {}
    for p in doc.get("diffeos") or []:
        fwd = [parse_expression(t, (n, 0), params) for t in p["forward"]]
        inv = [parse_expression(t, (n, 0), params) for t in p["inverse"]]
        diffeos[p["name"]] = DiffeoDef(n, fwd, inv, p["name"])
    extra = {k: v for k, v in doc.items() if k not in _CORE_KEYS}
    return SystemDocument(system, certs, diffeos, extra)


def load_document(path) -> SystemDocument:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_document(doc, name=path.stem)


def dump_document(document: SystemDocument, path=None) -> str:
    text = json.dumps(document.to_dict(), indent=2, ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
