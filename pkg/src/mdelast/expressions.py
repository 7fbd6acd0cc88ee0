"""Expression parsing and evaluation for user input and exact-solution fields.

The input grammar allows the variables ``x``, ``y``, the operators
``+ - * / ^`` (with ``^`` meaning power), and ``sin cos exp pi``.  The same
sympy-backed engine parses user strings, differentiates exact fields, and
produces vectorized numpy evaluators, so boundary data and the symbolic
oracle share one code path.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

X, Y = sp.symbols("x y", real=True)

_ALLOWED_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_ALLOWED_NAMES = {"x": X, "y": Y, "pi": sp.pi, **_ALLOWED_FUNCS}
_TRANSFORMS = standard_transformations + (convert_xor,)


class ExpressionError(ValueError):
    """Raised for expressions outside the supported grammar."""


def parse(text: str) -> sp.Expr:
    """Parse an expression string into a sympy expression.

    Only ``x``, ``y``, ``pi`` and ``sin``/``cos``/``exp`` are allowed;
    anything else is rejected with the offending name in the message.
    """
    try:
        expr = parse_expr(
            text, local_dict=dict(_ALLOWED_NAMES), transformations=_TRANSFORMS,
            evaluate=True,
        )
    except Exception as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc}") from exc
    bad = [str(s) for s in expr.free_symbols if s not in (X, Y)]
    if bad:
        raise ExpressionError(
            f"expression {text!r} uses unknown name(s): {', '.join(sorted(bad))}"
        )
    for f in expr.atoms(sp.Function):
        if f.func not in _ALLOWED_FUNCS.values():
            raise ExpressionError(
                f"expression {text!r} uses unsupported function {f.func}"
            )
    return expr


def parse_vector(spec: object, dim: int = 2) -> sp.Matrix:
    """Parse a vector-valued input: list of strings/numbers or a single string."""
    if isinstance(spec, str):
        comps = [parse(spec)] * dim
    elif isinstance(spec, (int, float)):
        comps = [sp.Float(spec)] * dim
    elif isinstance(spec, (list, tuple)):
        if len(spec) != dim:
            raise ExpressionError(f"expected {dim} components, got {len(spec)}")
        comps = [parse(c) if isinstance(c, str) else sp.sympify(float(c)) for c in spec]
    else:
        raise ExpressionError(f"cannot interpret {spec!r} as a vector expression")
    return sp.Matrix(comps)


def lambdify(expr: sp.Expr | sp.Matrix) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Vectorized numpy evaluator f(x, y); matrices return stacked arrays.

    Scalar output has the broadcast shape of the inputs; an (m, k) sympy
    matrix returns shape (m, k) + broadcast shape.
    """
    if isinstance(expr, sp.MatrixBase):
        fns = [[sp.lambdify((X, Y), expr[i, j], modules="numpy")
                for j in range(expr.shape[1])] for i in range(expr.shape[0])]

        def _eval_mat(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            base = np.broadcast(x, y)
            out = np.empty(expr.shape + base.shape, dtype=float)
            for i in range(expr.shape[0]):
                for j in range(expr.shape[1]):
                    out[i, j] = np.broadcast_to(fns[i][j](x, y), base.shape)
            return out

        return _eval_mat

    fn = sp.lambdify((X, Y), expr, modules="numpy")

    def _eval(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        base = np.broadcast(x, y)
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), base.shape).copy()

    return _eval


def grad(expr: sp.Expr) -> sp.Matrix:
    """Row gradient [d/dx, d/dy] of a scalar expression."""
    return sp.Matrix([[sp.diff(expr, X), sp.diff(expr, Y)]])


def jacobian(vec: sp.Matrix) -> sp.Matrix:
    """Row-wise gradient of a column vector: J[i, j] = d vec[i] / d x_j."""
    return sp.Matrix([[sp.diff(vec[i], v) for v in (X, Y)] for i in range(vec.shape[0])])


def directional(expr: sp.Expr | sp.Matrix, direction: Sequence[float]) -> sp.Expr | sp.Matrix:
    """Directional derivative along a constant direction vector."""
    dx, dy = float(direction[0]), float(direction[1])
    if isinstance(expr, sp.MatrixBase):
        return expr.applyfunc(lambda e: dx * sp.diff(e, X) + dy * sp.diff(e, Y))
    return dx * sp.diff(expr, X) + dy * sp.diff(expr, Y)


def on_segment(expr: sp.Expr, point: Sequence[float], tangent: Sequence[float]) -> sp.S:
    """Restrict an (x, y) expression to a parametrized line p + s*t, as a function of s."""
    s = sp.Symbol("s", real=True)
    sub = expr.subs({X: point[0] + s * tangent[0], Y: point[1] + s * tangent[1]})
    return sp.simplify(sub)


def constant_vector(values: Iterable[float]) -> sp.Matrix:
    return sp.Matrix([sp.Float(float(v)) for v in values])
