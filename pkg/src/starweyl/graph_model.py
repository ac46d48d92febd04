"""Star-graph problem instances: edges, potentials and spectral sampling plans."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.special

DEFAULT_GRID_SIZE = 1001


class GraphError(ValueError):
    """Invalid problem-instance data."""


# --- potential expressions -------------------------------------------------

_EXPR_NAMES: dict[str, Any] = {
    "pi": math.pi,
    "e": math.e,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "where": np.where,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "j0": scipy.special.j0,
    "j1": scipy.special.j1,
}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Compare, ast.BoolOp,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
    ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq, ast.And, ast.Or,
)


def compile_expr(expr: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a potential expression in the variable ``x``.

    Only arithmetic, comparisons and the functions in ``_EXPR_NAMES`` are
    accepted.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise GraphError(f"cannot parse potential expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise GraphError(f"disallowed construct {type(node).__name__} in {expr!r}")
        if isinstance(node, ast.Name) and node.id != "x" and node.id not in _EXPR_NAMES:
            raise GraphError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.Call) and not isinstance(node.func, ast.Name):
            raise GraphError(f"only plain function calls allowed in {expr!r}")
    code = compile(tree, "<potential>", "eval")

    def f(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            val = eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x})
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape).copy()

    return f


def _saddle(x):
    return np.where(
        x < 0.25,
        -35.2 * x**2 + 17.6 * x,
        np.where(x < 0.75, 35.2 * x**2 - 35.2 * x + 8.8, -35.2 * x**2 + 52.8 * x - 17.6),
    )


def potential_function(spec: dict) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a ``{kind, params}`` mapping into a vectorised callable."""
    kind = spec.get("kind")
    params = spec.get("params", {}) or {}
    if kind == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if kind == "constant":
        c = float(params.get("value", params.get("c", 0.0)))
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    if kind == "polynomial":
        coeffs = [float(c) for c in params["coeffs"]]  # ascending powers
        return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coeffs)
    if kind == "saddle":
        return lambda x: _saddle(np.asarray(x, dtype=float))
    if kind == "expr":
        return compile_expr(str(params["expr"]))
    raise GraphError(f"unknown potential kind {kind!r}")


# --- data model -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Edge:
    """One edge; x = 0 is the boundary vertex, x = length the central vertex."""

    index: int
    length: float
    q: np.ndarray
    spec: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.length > 0 or not math.isfinite(self.length):
            raise GraphError(f"edge {self.index}: non-positive length {self.length}")
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size < 2:
            raise GraphError(f"edge {self.index}: need at least 2 potential samples")
        if not np.all(np.isfinite(q)):
            bad = int(np.flatnonzero(~np.isfinite(q))[0])
            raise GraphError(
                f"edge {self.index}: non-finite potential sample at x = {bad * self.length / (q.size - 1):.6g}"
            )
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def grid_size(self) -> int:
        return self.q.size

    @property
    def x(self) -> np.ndarray:
        return uniform_grid(self.length, self.grid_size)

    @property
    def h(self) -> float:
        return self.length / (self.grid_size - 1)

    def q_at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.q)

    def q_integral(self, x) -> np.ndarray:
        """Running integral of the piecewise-linear potential from 0 to x."""
        xs = self.x
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self.q[1:] + self.q[:-1]) * np.diff(xs))])
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, self.grid_size - 2)
        dx = x - xs[k]
        qx = self.q_at(x)
        return cum[k] + 0.5 * (self.q[k] + qx) * dx


@dataclass(frozen=True, eq=False)
class StarGraph:
    edges: tuple[Edge, ...]

    def __post_init__(self):
        edges = tuple(self.edges)
        if len(edges) < 2:
            raise GraphError("a star graph needs at least 2 edges")
        for k, e in enumerate(edges, start=1):
            if e.index != k:
                raise GraphError(f"edge indices must be 1..M in order; got {e.index} at position {k}")
        object.__setattr__(self, "edges", edges)

    @property
    def M(self) -> int:
        return len(self.edges)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.edges])

    def edge(self, i: int) -> Edge:
        return self.edges[i - 1]

    def succ(self, i: int) -> int:
        return succ(i, self.M)


def uniform_grid(length: float, n: int) -> np.ndarray:
    """Nodes L*k/(n-1); a refinement by an integer factor hits the same floats at shared nodes."""
    return length * (np.arange(n) / (n - 1))


def succ(i: int, M: int) -> int:
    """Cyclic successor on 1..M."""
    return 1 if i == M else i + 1


def build_edge(index: int, length: float, potential: dict | Sequence[float] | Callable,
               grid_size: int | None = None) -> Edge:
    length = float(length)
    if not length > 0:
        raise GraphError(f"edge {index}: non-positive length {length}")
    if isinstance(potential, dict) and "samples" in potential:
        samples = np.asarray(potential["samples"], dtype=float)
        return Edge(index, length, samples, dict(potential))
    if isinstance(potential, dict):
        f = potential_function(potential)
        spec = dict(potential)
    elif callable(potential):
        f, spec = potential, None
    else:
        samples = np.asarray(potential, dtype=float)
        return Edge(index, length, samples, None)
    n = DEFAULT_GRID_SIZE if grid_size is None else int(grid_size)
    if n < 2:
        raise GraphError(f"edge {index}: grid_size must be >= 2")
    x = uniform_grid(length, n)
    return Edge(index, length, f(x), spec)


def build_graph(edge_specs) -> StarGraph:
    """Build a graph from ``(length, potential[, grid_size])`` tuples or dicts.

    A potential is a ``{kind, params}`` mapping, ``{samples: [...]}``, a
    callable of x, or a bare sample sequence.
    """
    edges = []
    for k, item in enumerate(edge_specs, start=1):
        if isinstance(item, dict):
            length = item["length"]
            pot = item.get("potential", {"kind": "zero"})
            grid = item.get("grid_size")
        else:
            length, pot, *rest = item
            grid = rest[0] if rest else None
        edges.append(build_edge(k, length, pot, grid))
    return StarGraph(tuple(edges))


# --- spectral sampling ----------------------------------------------------


@dataclass(frozen=True)
class SpectralSamplingPlan:
    strategy: str = "uniform"  # "uniform" (alias "uniform-segment") | "log-uniform"
    m: int = 190
    a: complex = 1 + 0.1j
    b: complex = 100 + 0.1j
    delta: float = 0.1
    alpha_range: tuple[float, float] = (0.0, 2.0)

    def __post_init__(self):
        if self.strategy == "uniform-segment":
            object.__setattr__(self, "strategy", "uniform")
        if self.strategy not in ("uniform", "log-uniform"):
            raise GraphError(f"unknown sampling strategy {self.strategy!r}; "
                             "expected 'uniform-segment' or 'log-uniform'")
        if int(self.m) < 1:
            raise GraphError("sampling count m must be >= 1")


def sample_rho(plan: SpectralSamplingPlan) -> np.ndarray:
    m = int(plan.m)
    if plan.strategy == "uniform":
        t = np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1)
        rho = complex(plan.a) + t * (complex(plan.b) - complex(plan.a))
    else:
        lo, hi = plan.alpha_range
        alpha = np.linspace(lo, hi, m) if m > 1 else np.array([lo])
        rho = 10.0**alpha + 1j * plan.delta
    lam = rho * rho
    bad = np.abs(lam.imag) <= 1e-12
    if np.any(bad):
        raise GraphError(f"sampling plan yields real rho^2 at k = {int(np.flatnonzero(bad)[0]) + 1}")
    return rho


# --- Example 1 --------------------------------------------------------------

EXAMPLE1_LENGTHS = (math.e / 2, 1.0, math.pi / 2, math.pi / 3, math.e**2 / 4, 1.1, 1.2, 1.0, 1.4)

EXAMPLE1_POTENTIALS = (
    {"kind": "expr", "params": {"expr": "abs(x - 1) + 1"}},
    {"kind": "expr", "params": {"expr": "exp(-(x - 0.5)**2)"}},
    {"kind": "expr", "params": {"expr": "sin(8*x) + 2*pi/3"}},
    {"kind": "expr", "params": {"expr": "cos(9*x**2) + 2"}},
    {"kind": "expr", "params": {"expr": "1/(x + 0.1)"}},
    {"kind": "expr", "params": {"expr": "1/(x + 0.1)**2"}},
    {"kind": "expr", "params": {"expr": "exp(x)"}},
    {"kind": "saddle"},
    {"kind": "expr", "params": {"expr": "j0(9*x)"}},
)


def example1_edge_specs(grid_size: int = DEFAULT_GRID_SIZE) -> list[dict]:
    return [
        {"length": L, "potential": dict(p), "grid_size": grid_size}
        for L, p in zip(EXAMPLE1_LENGTHS, EXAMPLE1_POTENTIALS)
    ]


def example1_graph(grid_size: int = DEFAULT_GRID_SIZE) -> StarGraph:
    return build_graph(example1_edge_specs(grid_size))
