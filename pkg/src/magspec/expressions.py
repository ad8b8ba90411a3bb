"""Text expressions for potentials, fields and profiles in run configurations.

Expressions use the variables x1, x2, x3 and r = |x| (or t and d for
profile functions) and the usual elementary functions.  They are parsed with
sympy and compiled to vectorised numpy callables.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import sympy

from .errors import ConfigError

__all__ = ["compile_scalar", "compile_vector", "compile_predicate", "compile_univariate"]

_FUNCS = {
    name: getattr(sympy, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "Abs", "atan", "atan2", "sinh", "cosh", "tanh", "Min", "Max", "pi", "E")
}
_FUNCS["abs"] = sympy.Abs
_FUNCS["min"] = sympy.Min
_FUNCS["max"] = sympy.Max


def _parse(text: str, names: Sequence[str], field: str | None) -> sympy.Expr:
    local = dict(_FUNCS)
    local.update({n: sympy.Symbol(n, real=True) for n in names})
    try:
        expr = sympy.sympify(text, locals=local)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}", field=field) from None
    unknown = {str(s) for s in expr.free_symbols} - set(names)
    if unknown:
        raise ConfigError(f"unknown variable(s) {sorted(unknown)} in {text!r}; allowed: {list(names)}", field=field)
    return expr


def _spatial(dim: int) -> list[str]:
    if not 1 <= dim <= 3:
        raise ConfigError(f"dimension {dim} not supported by expressions (1..3)")
    return [f"x{k + 1}" for k in range(dim)]


def _compile(text: str, dim: int, field: str | None):
    names = _spatial(dim)
    expr = _parse(str(text), names + ["r"], field)
    xs = [sympy.Symbol(n, real=True) for n in names]
    expr = expr.subs(sympy.Symbol("r", real=True), sympy.sqrt(sum(x**2 for x in xs)))
    fn = sympy.lambdify(xs, expr, modules="numpy")
    return expr, fn


def compile_scalar(text: str | float, dim: int, field: str | None = None) -> Callable[..., np.ndarray]:
    """Real function of (x1, ..., xn), broadcast to the shape of its inputs."""
    expr, fn = _compile(text, dim, field)

    def f(*x):
        out = np.asarray(fn(*x), dtype=float)
        return np.broadcast_to(out, np.broadcast(*x).shape).copy()

    f.__doc__ = str(expr)
    return f


def compile_vector(texts: Sequence[str | float], dim: int, field: str | None = None) -> Callable[..., tuple]:
    """Vector potential with one expression per component."""
    if len(texts) != dim:
        raise ConfigError(f"expected {dim} components, got {len(texts)}", field=field)
    comps = [compile_scalar(t, dim, field) for t in texts]

    def a(*x):
        return tuple(c(*x) for c in comps)

    return a


def compile_predicate(text: str, dim: int, field: str | None = None) -> Callable[..., np.ndarray]:
    """Boolean point predicate such as ``x1**2 + x2**2 <= 1``."""
    names = _spatial(dim)
    expr = _parse(str(text), names + ["r"], field)
    if not isinstance(expr, (sympy.core.relational.Relational, sympy.logic.boolalg.Boolean)):
        raise ConfigError(f"predicate {text!r} is not a comparison", field=field)
    xs = [sympy.Symbol(n, real=True) for n in names]
    expr = expr.subs(sympy.Symbol("r", real=True), sympy.sqrt(sum(x**2 for x in xs)))
    fn = sympy.lambdify(xs, expr, modules="numpy")

    def p(*x):
        return np.broadcast_to(np.asarray(fn(*x), dtype=bool), np.broadcast(*x).shape).copy()

    return p


def compile_univariate(text: str | float, var: str, field: str | None = None) -> Callable[[float], float]:
    """Scalar function of one named variable (profiles f(t), g(d), h(t))."""
    expr = _parse(str(text), [var], field)
    fn = sympy.lambdify([sympy.Symbol(var, real=True)], expr, modules="numpy")

    def f(v):
        return float(fn(float(v)))

    f.__doc__ = str(expr)
    return f
