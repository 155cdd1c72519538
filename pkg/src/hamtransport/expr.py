"""Small expression grammar for scalar fields of (t, x1, ..., xn).

Expressions are parsed with :mod:`ast` against a whitelist (arithmetic,
``^`` or ``**`` powers, ``sin cos tan exp log sqrt``, the names ``t`` and
``x1..xn``, ``pi`` and ``e``) and turned into sympy objects so that every
derivative the rest of the package needs is available in closed form.
Numerical evaluation goes through :func:`sympy.lambdify` with the numpy
backend, so all evaluators take a batch of points ``x`` of shape ``(N, n)``.
"""

import ast

import numpy as np
import sympy as sp

from .errors import ConfigError

_FUNCS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
}
_CONSTS = {"pi": sp.pi, "e": sp.E}

T = sp.Symbol("t", real=True)


def coord_symbols(dim):
    if dim == 0:
        return ()
    return sp.symbols(" ".join(f"x{i + 1}" for i in range(dim)), real=True, seq=True)


def _to_sympy(node, names):
    if isinstance(node, ast.Expression):
        return _to_sympy(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ValueError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _to_sympy(node.operand, names)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        a = _to_sympy(node.left, names)
        b = _to_sympy(node.right, names)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            return a / b
        if isinstance(node.op, ast.Pow):
            return a**b
        raise ValueError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in _FUNCS or len(node.args) != 1 or node.keywords:
            raise ValueError(f"function {node.func.id!r} not allowed")
        return _FUNCS[node.func.id](_to_sympy(node.args[0], names))
    raise ValueError(f"syntax element {type(node).__name__} not allowed")


def parse_expression(text, dim, key="expression"):
    """Parse ``text`` into a sympy expression in ``t`` and ``x1..x{dim}``.

    Raises ConfigError naming ``key`` if the text uses anything outside the
    grammar.
    """
    xs = coord_symbols(dim)
    names = {f"x{i + 1}": s for i, s in enumerate(xs)}
    names["t"] = T
    try:
        tree = ast.parse(str(text).strip().replace("^", "**"), mode="eval")
        return _to_sympy(tree, names)
    except (SyntaxError, ValueError) as exc:
        raise ConfigError(f"cannot parse {key}: {exc}", key=key, text=str(text)) from None


def _compile(expr, dim):
    xs = coord_symbols(dim)
    fn = sp.lambdify((T,) + tuple(xs), expr, modules="numpy")

    def call(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        val = fn(float(t), *x.T)
        return np.broadcast_to(np.asarray(val, dtype=float), (x.shape[0],)).copy()

    return call


class ScalarField:
    """Smooth scalar field ``f(t, x)`` with cached symbolic derivatives.

    All methods take a scalar ``t`` and a batch ``x`` of shape ``(N, n)``.
    ``grad`` returns ``(N, n)``, ``hess`` ``(N, n, n)``, ``third`` ``(N, n, n, n)``.
    ``dt``/``dtt`` are time derivatives, ``grad_dt``/``hess_dt`` mixed ones.
    """

    def __init__(self, source, dim, key="expression"):
        self.dim = int(dim)
        self.xs = coord_symbols(self.dim)
        if isinstance(source, sp.Basic):
            self.expr = source
            self.text = str(source)
        else:
            self.text = str(source)
            self.expr = parse_expression(source, self.dim, key=key)
        self._cache = {}

    def __repr__(self):
        return f"ScalarField({self.text!r}, dim={self.dim})"

    @property
    def is_zero(self):
        return self.expr == 0

    @property
    def time_dependent(self):
        return T in self.expr.free_symbols

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def _fn(self, *orders):
        """Compiled partial derivative; orders are indices into (t, x1..xn)."""
        def build():
            expr = self.expr
            for o in orders:
                expr = sp.diff(expr, T if o < 0 else self.xs[o])
            return _compile(expr, self.dim)

        return self._get(orders, build)

    def value(self, t, x):
        return self._fn()(t, x)

    def grad(self, t, x):
        return np.stack([self._fn(i)(t, x) for i in range(self.dim)], axis=-1)

    def hess(self, t, x):
        n = self.dim
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], n, n))
        for i in range(n):
            for j in range(i, n):
                out[:, i, j] = out[:, j, i] = self._fn(*sorted((i, j)))(t, x)
        return out

    def third(self, t, x):
        n = self.dim
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], n, n, n))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    out[:, i, j, k] = self._fn(*sorted((i, j, k)))(t, x)
        return out

    def dt(self, t, x):
        return self._fn(-1)(t, x)

    def dtt(self, t, x):
        return self._fn(-1, -1)(t, x)

    def grad_dt(self, t, x):
        return np.stack([self._fn(-1, i)(t, x) for i in range(self.dim)], axis=-1)

    def hess_dt(self, t, x):
        n = self.dim
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], n, n))
        for i in range(n):
            for j in range(i, n):
                out[:, i, j] = out[:, j, i] = self._fn(-1, *sorted((i, j)))(t, x)
        return out


class TimeFunction:
    """Scalar function of time only, with derivatives up to third order."""

    def __init__(self, source, key="time function"):
        if isinstance(source, sp.Basic):
            self.expr = source
            self.text = str(source)
        else:
            self.text = str(source)
            self.expr = parse_expression(source, 0, key=key)
        bad = self.expr.free_symbols - {T}
        if bad:
            raise ConfigError(f"{key} may depend on t only", key=key, text=self.text)
        self._fns = []
        expr = self.expr
        for _ in range(4):
            self._fns.append(sp.lambdify(T, expr, modules="numpy"))
            expr = sp.diff(expr, T)

    def __repr__(self):
        return f"TimeFunction({self.text!r})"

    def __call__(self, t, order=0):
        return float(self._fns[order](float(t)))

    def d(self, t):
        return self(t, 1)

    def dd(self, t):
        return self(t, 2)
