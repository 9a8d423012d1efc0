"""Reverse-mode differentiation over scalar expression graphs.

A :class:`Graph` records scalar operations on spatial inputs and trainable
parameters.  Gradients can be taken numerically (:func:`eval_with_gradients`)
or symbolically with :meth:`Graph.grad`, which appends the adjoint
computation to the same graph so that it can be differentiated again.  This
is what a variational loss needs: the energy depends on ``du/dx`` and the
optimizer needs the parameter gradient of that energy.

Example
-------
>>> g = Graph(n_inputs=1, n_params=1)
>>> x, th = g.inputs[0], g.params[0]
>>> g.set_output(g.grad(th * x, [x])[0])   # df/dx = theta
>>> eval_with_gradients(g, [2.0], [5.0]).dparams
array([1.])
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError

__all__ = [
    "Graph",
    "Node",
    "GradientBundle",
    "eval_with_gradients",
    "evaluate",
    "gradcheck",
    "standard_suite",
]


def _sigmoid(a, beta):
    t = beta * a
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _softplus(a, beta):
    return max(a, 0.0) + math.log1p(math.exp(-beta * abs(a))) / beta


class Node:
    """Handle to one node of a :class:`Graph`; supports arithmetic operators."""

    __slots__ = ("graph", "index")

    def __init__(self, graph: "Graph", index: int):
        self.graph = graph
        self.index = index

    def __repr__(self):
        tag = self.graph._ops[self.index][0]
        return f"Node({self.index}, {tag})"

    def _lift(self, other):
        if isinstance(other, Node):
            if other.graph is not self.graph:
                raise ConfigError("operands belong to different graphs")
            return other
        return self.graph.const(float(other))

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.add(self, self.graph.neg(self._lift(other)))

    def __rsub__(self, other):
        return self.graph.add(self._lift(other), self.graph.neg(self))

    def __mul__(self, other):
        return self.graph.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.mul(self, self.graph.recip(self._lift(other)))

    def __rtruediv__(self, other):
        return self.graph.mul(self._lift(other), self.graph.recip(self))

    def __neg__(self):
        return self.graph.neg(self)

    def __pow__(self, k):
        return self.graph.pow(self, float(k))


@dataclass
class GradientBundle:
    value: float
    dparams: np.ndarray
    dinputs: np.ndarray


class Graph:
    """Append-only scalar expression graph.

    Nodes are stored in creation order, which is a valid topological order
    because every operation refers only to existing nodes.  Once
    :meth:`set_output` has been called the graph is frozen.
    """

    def __init__(self, n_inputs: int, n_params: int):
        if n_inputs < 0 or n_params < 0:
            raise ConfigError("input and parameter counts must be nonnegative")
        self._ops: list[tuple] = []
        self._frozen = False
        self.output: Node | None = None
        self.inputs = [self._push("input", (), i) for i in range(n_inputs)]
        self.params = [self._push("param", (), i) for i in range(n_params)]

    @property
    def n_inputs(self):
        return len(self.inputs)

    @property
    def n_params(self):
        return len(self.params)

    def __len__(self):
        return len(self._ops)

    def _push(self, tag, args, attr=None):
        if self._frozen:
            raise ConfigError("graph is frozen; build a new graph instead")
        self._ops.append((tag, tuple(a.index for a in args), attr))
        return Node(self, len(self._ops) - 1)

    # -- primitive constructors -------------------------------------------
    def const(self, value: float) -> Node:
        return self._push("const", (), float(value))

    def add(self, a: Node, b: Node) -> Node:
        return self._push("add", (a, b))

    def mul(self, a: Node, b: Node) -> Node:
        return self._push("mul", (a, b))

    def neg(self, a: Node) -> Node:
        return self._push("neg", (a,))

    def recip(self, a: Node) -> Node:
        return self._push("recip", (a,))

    def relu(self, a: Node) -> Node:
        return self._push("relu", (a,))

    def step(self, a: Node) -> Node:
        """Heaviside step with value 0 at 0; the derivative of :meth:`relu`."""
        return self._push("step", (a,))

    def exp(self, a: Node) -> Node:
        return self._push("exp", (a,))

    def log(self, a: Node) -> Node:
        return self._push("log", (a,))

    def pow(self, a: Node, k: float) -> Node:
        return self._push("pow", (a,), float(k))

    def dot(self, a: Sequence[Node], b: Sequence[Node]) -> Node:
        if len(a) != len(b) or not a:
            raise ConfigError("dot operands must be nonempty and of equal length")
        return self._push("dot", tuple(a) + tuple(b), len(a))

    def norm(self, v: Sequence[Node]) -> Node:
        if not v:
            raise ConfigError("norm of an empty vector")
        return self._push("norm", tuple(v))

    def softplus(self, a: Node, beta: float = 1.0) -> Node:
        return self._push("softplus", (a,), float(beta))

    def sigmoid(self, a: Node, beta: float = 1.0) -> Node:
        return self._push("sigmoid", (a,), float(beta))

    def set_output(self, node: Node) -> "Graph":
        if node.graph is not self:
            raise ConfigError("output node belongs to another graph")
        self.output = node
        self._frozen = True
        return self

    # -- symbolic reverse mode -------------------------------------------
    def _local_partials(self, i):
        """Partial derivative nodes of node ``i`` with respect to its operands."""
        tag, args, attr = self._ops[i]
        me = Node(self, i)
        A = [Node(self, k) for k in args]
        if tag == "add":
            one = self.const(1.0)
            return [one, one]
        if tag == "mul":
            return [A[1], A[0]]
        if tag == "neg":
            return [self.const(-1.0)]
        if tag == "recip":
            return [self.neg(self.mul(me, me))]
        if tag == "relu":
            return [self.step(A[0])]
        if tag == "step":
            return [self.const(0.0)]
        if tag == "exp":
            return [me]
        if tag == "log":
            return [self.recip(A[0])]
        if tag == "pow":
            k = attr
            if k == 1.0:
                return [self.const(1.0)]
            return [self.mul(self.const(k), self.pow(A[0], k - 1.0))]
        if tag == "dot":
            n = attr
            return A[n:] + A[:n]
        if tag == "norm":
            inv = self.recip(me)
            return [self.mul(a, inv) for a in A]
        if tag == "softplus":
            return [self.sigmoid(A[0], attr)]
        if tag == "sigmoid":
            one_minus = self.add(self.const(1.0), self.neg(me))
            return [self.mul(self.const(attr), self.mul(me, one_minus))]
        raise AssertionError(f"no partials for {tag}")

    def grad(self, out: Node, wrt: Sequence[Node]) -> list[Node]:
        """Return nodes holding d(out)/d(w) for each ``w`` in ``wrt``.

        The returned nodes live in this graph and may themselves be
        differentiated.
        """
        if self._frozen:
            raise ConfigError("graph is frozen; take gradients before set_output")
        n = out.index + 1
        live = [False] * n
        live[out.index] = True
        for i in range(out.index, -1, -1):
            if live[i]:
                for k in self._ops[i][1]:
                    live[k] = True
        adj: dict[int, Node] = {out.index: self.const(1.0)}
        for i in range(out.index, -1, -1):
            if not live[i] or i not in adj:
                continue
            args = self._ops[i][1]
            if not args:
                continue
            partials = self._local_partials(i)
            for k, d in zip(args, partials):
                contrib = self.mul(d, adj[i])
                adj[k] = contrib if k not in adj else self.add(adj[k], contrib)
        zero = None
        result = []
        for w in wrt:
            if w.index in adj:
                result.append(adj[w.index])
            else:
                zero = zero if zero is not None else self.const(0.0)
                result.append(zero)
        return result


def _forward(graph: Graph, params, x):
    ops = graph._ops
    val = [0.0] * len(ops)
    for i, (tag, args, attr) in enumerate(ops):
        try:
            if tag == "input":
                v = float(x[attr])
            elif tag == "param":
                v = float(params[attr])
            elif tag == "const":
                v = attr
            elif tag == "add":
                v = val[args[0]] + val[args[1]]
            elif tag == "mul":
                v = val[args[0]] * val[args[1]]
            elif tag == "neg":
                v = -val[args[0]]
            elif tag == "recip":
                v = 1.0 / val[args[0]]
            elif tag == "relu":
                v = max(val[args[0]], 0.0)
            elif tag == "step":
                v = 1.0 if val[args[0]] > 0.0 else 0.0
            elif tag == "exp":
                v = math.exp(val[args[0]])
            elif tag == "log":
                v = math.log(val[args[0]])
            elif tag == "pow":
                v = val[args[0]] ** attr
            elif tag == "dot":
                v = math.fsum(val[args[k]] * val[args[k + attr]] for k in range(attr))
            elif tag == "norm":
                v = math.sqrt(math.fsum(val[k] * val[k] for k in args))
            elif tag == "softplus":
                v = _softplus(val[args[0]], attr)
            elif tag == "sigmoid":
                v = _sigmoid(val[args[0]], attr)
            else:
                raise AssertionError(tag)
        except (OverflowError, ZeroDivisionError, ValueError) as exc:
            raise NonFiniteError(f"node {i} ({tag}) failed: {exc}", node=i, tag=tag) from exc
        if isinstance(v, complex) or not math.isfinite(v):
            raise NonFiniteError(f"node {i} ({tag}) is non-finite", node=i, tag=tag)
        val[i] = v
    return val


def _check_sizes(graph, params, x):
    if graph.output is None:
        raise ConfigError("graph has no output; call set_output first")
    if len(params) != graph.n_params:
        raise ConfigError(f"expected {graph.n_params} parameters, got {len(params)}")
    if len(x) != graph.n_inputs:
        raise ConfigError(f"expected a {graph.n_inputs}-dimensional point, got {len(x)}")


def evaluate(graph: Graph, params, x) -> float:
    params = np.atleast_1d(np.asarray(params, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    _check_sizes(graph, params, x)
    return _forward(graph, params, x)[graph.output.index]


def eval_with_gradients(graph: Graph, params, x) -> GradientBundle:
    """Value of the graph output and its gradients w.r.t. parameters and inputs."""
    params = np.atleast_1d(np.asarray(params, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    _check_sizes(graph, params, x)
    val = _forward(graph, params, x)
    ops = graph._ops
    out = graph.output.index
    adj = [0.0] * (out + 1)
    adj[out] = 1.0
    for i in range(out, -1, -1):
        g = adj[i]
        if g == 0.0:
            continue
        tag, args, attr = ops[i]
        if not args:
            continue
        if tag == "add":
            adj[args[0]] += g
            adj[args[1]] += g
        elif tag == "mul":
            adj[args[0]] += g * val[args[1]]
            adj[args[1]] += g * val[args[0]]
        elif tag == "neg":
            adj[args[0]] -= g
        elif tag == "recip":
            adj[args[0]] -= g * val[i] * val[i]
        elif tag == "relu":
            if val[args[0]] > 0.0:
                adj[args[0]] += g
        elif tag == "step":
            pass
        elif tag == "exp":
            adj[args[0]] += g * val[i]
        elif tag == "log":
            adj[args[0]] += g / val[args[0]]
        elif tag == "pow":
            adj[args[0]] += g * attr * val[args[0]] ** (attr - 1.0)
        elif tag == "dot":
            for k in range(attr):
                adj[args[k]] += g * val[args[k + attr]]
                adj[args[k + attr]] += g * val[args[k]]
        elif tag == "norm":
            for k in args:
                adj[k] += g * val[k] / val[i]
        elif tag == "softplus":
            adj[args[0]] += g * _sigmoid(val[args[0]], attr)
        elif tag == "sigmoid":
            adj[args[0]] += g * attr * val[i] * (1.0 - val[i])
    dparams = np.array([adj[p.index] if p.index <= out else 0.0 for p in graph.params])
    dinputs = np.array([adj[p.index] if p.index <= out else 0.0 for p in graph.inputs])
    if not (np.all(np.isfinite(dparams)) and np.all(np.isfinite(dinputs))):
        raise NonFiniteError("non-finite gradient")
    return GradientBundle(val[out], dparams, dinputs)


def gradcheck(graph: Graph, params, x, eps: float = 1e-6) -> float:
    """Max relative error between AD gradients and central differences.

    The error in each direction is ``|ad - fd| / max(|ad|, 1e-12)``, taken
    over every parameter and every input coordinate.
    """
    if not 0.0 < eps <= 1e-3:
        raise ConfigError("eps must lie in (0, 1e-3]", key="eps")
    params = np.atleast_1d(np.asarray(params, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    bundle = eval_with_gradients(graph, params, x)
    worst = 0.0
    for vec, ad, is_param in ((params, bundle.dparams, True), (x, bundle.dinputs, False)):
        for k in range(vec.size):
            up, dn = vec.copy(), vec.copy()
            up[k] += eps
            dn[k] -= eps
            # divide by the representable step, not the nominal one
            step = up[k] - dn[k]
            if is_param:
                fd = (evaluate(graph, up, x) - evaluate(graph, dn, x)) / step
            else:
                fd = (evaluate(graph, params, up) - evaluate(graph, params, dn)) / step
            err = abs(ad[k] - fd) / max(abs(ad[k]), 1e-12)
            worst = max(worst, err)
    return worst


def _suite_band():
    g = Graph(1, 3)
    (x,), (y_p, c, jump) = g.inputs, g.params
    z = (x - y_p) / c
    phi = g.softplus(z + 0.5, 100.0) - g.softplus(z - 0.5, 100.0)
    return g.set_output(jump * phi), [0.5, 0.2, 1.3], [0.62]


def _suite_elastic():
    # energy density of u = a + b x + d x^2 through a symbolic spatial derivative
    g = Graph(1, 3)
    (x,), (a, b, d) = g.inputs, g.params
    u = a + b * x + d * x * x
    du = g.grad(u, [x])[0]
    return g.set_output(0.5 * 2.0 * du * du + a * a), [0.3, -0.7, 1.1], [0.45]


def _suite_perceptron():
    g = Graph(2, 9)
    x, p = g.inputs, g.params
    h1 = g.softplus(g.dot(p[0:2], x) + p[2], 1.0)
    h2 = g.sigmoid(g.dot(p[3:5], x) + p[5], 1.0)
    out = p[6] * h1 + p[7] * h2 + p[8]
    return g.set_output(g.norm([out, h1 * h2]) + g.exp(-out) ** 2), \
        [0.4, -0.3, 0.1, 0.7, 0.2, -0.5, 1.2, -0.8, 0.3], [0.35, 0.8]


def _suite_mixed():
    g = Graph(1, 2)
    (x,), (a, b) = g.inputs, g.params
    e = g.log(1.0 + g.exp(a * x)) ** 1.5 / (b + 2.0)
    return g.set_output(e + g.relu(x - a) * b), [0.25, 0.6], [0.9]


def standard_suite(eps: float = 1e-6) -> dict:
    """Gradient-check errors for a fixed set of representative graphs."""
    cases = {
        "band_activation": _suite_band,
        "elastic_density": _suite_elastic,
        "perceptron": _suite_perceptron,
        "exp_log_pow_relu": _suite_mixed,
    }
    out = {}
    for name, build in cases.items():
        graph, params, x = build()
        out[name] = gradcheck(graph, params, x, eps)
    return out
