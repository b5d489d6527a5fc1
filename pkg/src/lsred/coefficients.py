"""Coefficient triples (a, b, c) of the weighted equation and derived quantities.

Evaluators take points of shape (..., n) and return arrays of shape (...).
Expression recipes are strings over the chart coordinates x1..xn, parsed with
a whitelist of arithmetic nodes and differentiated symbolically.
"""
import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy

from .errors import ConfigError, InvalidParameter, NonpositiveCoefficient

_FUNCTIONS = {"cos": sympy.cos, "sin": sympy.sin, "exp": sympy.exp, "sqrt": sympy.sqrt, "pow": sympy.Pow}
_CONSTANTS = {"pi": sympy.pi}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def parse_expression(text, n):
    """Parse a coefficient recipe into a sympy expression in x1..xn."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("empty coefficient expression")
    try:
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = {f"x{i + 1}": sympy.Symbol(f"x{i + 1}", real=True) for i in range(n)}
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"unsupported syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"non-numeric constant in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                raise ConfigError(f"unknown function in {text!r}")
            if node.keywords:
                raise ConfigError(f"keyword arguments not allowed in {text!r}")
        if isinstance(node, ast.Name) and node.id not in names and node.id not in _FUNCTIONS \
                and node.id not in _CONSTANTS:
            raise ConfigError(f"unknown name {node.id!r} in {text!r} (use x1..x{n}, pi)")
    scope = {**names, **_FUNCTIONS, **_CONSTANTS}
    return _build(tree.body, scope), [names[f"x{i + 1}"] for i in range(n)]


def _build(node, scope):
    if isinstance(node, ast.Constant):
        return sympy.nsimplify(node.value) if isinstance(node.value, int) else sympy.Float(node.value)
    if isinstance(node, ast.Name):
        return scope[node.id]
    if isinstance(node, ast.UnaryOp):
        val = _build(node.operand, scope)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        lhs, rhs = _build(node.left, scope), _build(node.right, scope)
        ops = {ast.Add: lambda u, v: u + v, ast.Sub: lambda u, v: u - v, ast.Mult: lambda u, v: u * v,
               ast.Div: lambda u, v: u / v, ast.Pow: lambda u, v: u ** v}
        return ops[type(node.op)](lhs, rhs)
    if isinstance(node, ast.Call):
        return scope[node.func.id](*[_build(arg, scope) for arg in node.args])
    raise ConfigError(f"unsupported node {type(node).__name__}")


def _vectorize(expr, symbols):
    fn = sympy.lambdify(symbols, expr, modules="numpy")

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        out = fn(*[x[..., i] for i in range(x.shape[-1])])
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    return evaluate


def _constant_fn(value):
    def evaluate(x):
        return np.full(np.asarray(x).shape[:-1], float(value))
    return evaluate


def _zero_grad(x):
    return np.zeros(np.shape(x), dtype=float)


@dataclass(frozen=True)
class CoefficientField:
    """Positive coefficients a, b, c with first-derivative evaluators."""

    n: int
    a: Callable
    b: Callable
    c: Callable
    grad_a: Callable
    grad_b: Callable
    grad_c: Callable
    recipe: dict | None = None

    @classmethod
    def constant(cls, n, a=1.0, b=1.0, c=1.0):
        for name, val in (("a", a), ("b", b), ("c", c)):
            if not val > 0:
                raise NonpositiveCoefficient(f"coefficient {name} = {val} is not positive")
        return cls(n=n, a=_constant_fn(a), b=_constant_fn(b), c=_constant_fn(c),
                   grad_a=_zero_grad, grad_b=_zero_grad, grad_c=_zero_grad,
                   recipe={"a": repr(float(a)), "b": repr(float(b)), "c": repr(float(c))})

    @classmethod
    def from_expressions(cls, n, a="1", b="1", c="1"):
        """Build from expression strings in the coordinates x1..xn."""
        fns = {}
        for name, text in (("a", a), ("b", b), ("c", c)):
            expr, syms = parse_expression(str(text), n)
            fns[name] = _vectorize(expr, syms)
            grads = [_vectorize(sympy.diff(expr, s), syms) for s in syms]
            fns["grad_" + name] = _stack_grad(grads)
        return cls(n=n, recipe={"a": str(a), "b": str(b), "c": str(c)}, **fns)

    # -- derived quantities ------------------------------------------------
    def A(self, x):
        return self.a(x) / self.c(x)

    def B(self, x):
        return self.b(x) / self.c(x)

    def gamma(self, x, p):
        return (self.a(x) / self.b(x)) ** (1.0 / (p - 2.0))

    def check_positive(self, x):
        """Raise ``NonpositiveCoefficient`` unless a, b, c > 0 at all points x."""
        for name in ("a", "b", "c"):
            vals = getattr(self, name)(x)
            if np.any(~(vals > 0)):
                raise NonpositiveCoefficient(f"coefficient {name} is not positive at some point")

    def values(self, x):
        return self.a(x), self.b(x), self.c(x)


def _stack_grad(parts):
    def evaluate(x):
        return np.stack([g(x) for g in parts], axis=-1)
    return evaluate


def concentration_function(coeffs, n, p, x):
    """Gamma = c^(n/2) a^(p/(p-2) - n/2) / b^(2/(p-2)), the predicted concentration landscape."""
    if not p > 2:
        raise InvalidParameter("p must exceed 2")
    coeffs.check_positive(x)
    a, b, c = coeffs.values(x)
    return c ** (n / 2.0) * a ** (p / (p - 2.0) - n / 2.0) / b ** (2.0 / (p - 2.0))


def concentration_gradient(coeffs, n, p, x):
    """Analytic gradient of the concentration function (chain rule on a, b, c)."""
    a, b, c = coeffs.values(x)
    g = concentration_function(coeffs, n, p, x)[..., None]
    ea, eb, ec = p / (p - 2.0) - n / 2.0, -2.0 / (p - 2.0), n / 2.0
    return g * (ea * coeffs.grad_a(x) / a[..., None] + eb * coeffs.grad_b(x) / b[..., None]
                + ec * coeffs.grad_c(x) / c[..., None])
