"""Expression language with a parser and dual-number derivatives."""

from .dual import (
    DualVec,
    eval_grad,
    eval_grad_batch,
    eval_hessian,
    eval_hessian_batch,
    evaluate,
    evaluate_dual,
    kink_mask,
)
from .nodes import BinOp, Const, Expr, Func, Neg, Param, Partial, Var, const, substitute
from .parser import parse_expression, to_text
from .system import (
    DiffeoDef,
    ScalarCertificate,
    SystemDef,
    SystemDocument,
    dump_document,
    jacobian,
    linear_system,
    load_document,
    negative_gradient_field,
    parse_document,
    quadratic_certificate,
)

__all__ = [
    "BinOp",
    "Const",
    "DiffeoDef",
    "DualVec",
    "Expr",
    "Func",
    "Neg",
    "Param",
    "Partial",
    "ScalarCertificate",
    "SystemDef",
    "SystemDocument",
    "Var",
    "const",
    "dump_document",
    "eval_grad",
    "eval_grad_batch",
    "eval_hessian",
    "eval_hessian_batch",
    "evaluate",
    "evaluate_dual",
    "jacobian",
    "kink_mask",
    "linear_system",
    "load_document",
    "negative_gradient_field",
    "parse_document",
    "parse_expression",
    "quadratic_certificate",
    "substitute",
    "to_text",
]
