"""Minimal reverse-mode autodiff over dense float64 arrays.

A :class:`Graph` is built once from symbolic ops, then evaluated with
concrete inputs via :func:`eval_forward`. :func:`backward` walks the tape in
reverse and returns a gradient for every named leaf. :func:`grad_check`
compares analytic gradients against central finite differences.

Everything runs in float64. Forward evaluation is pure: identical inputs
give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# rows with an L2 norm below this are treated as "zero direction" by
# cosine_sim: similarity 0 to everything, zero gradient
COSINE_NORM_FLOOR = 1e-12


class GraphError(ValueError):
    """Structured graph failure; `node` names the offending node."""

    def __init__(self, node: str, message: str):
        self.node = node
        super().__init__(f"{node}: {message}")


@dataclass
class Node:
    idx: int
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None  # bound name for leaves

    @property
    def label(self) -> str:
        return self.name if self.name is not None else f"{self.kind}#{self.idx}"


@dataclass(frozen=True)
class Var:
    """Handle to one node of a graph."""

    graph: "Graph"
    idx: int

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.nodes[self.idx].shape

    def __add__(self, other: "Var") -> "Var":
        return self.graph.add(self, other)

    def __mul__(self, other: "Var") -> "Var":
        return self.graph.mul(self, other)

    def __matmul__(self, other: "Var") -> "Var":
        return self.graph.matmul(self, other)


# custom op kinds registered from other modules: kind -> (forward, backward)
# forward(node, input_arrays) -> (out_array, aux)
# backward(node, input_arrays, aux, grad_out) -> tuple of input grads
_CUSTOM_OPS: dict = {}


def register_op(kind: str, forward, backward) -> None:
    if kind in _CUSTOM_OPS:
        raise ValueError(f"op kind {kind!r} already registered")
    _CUSTOM_OPS[kind] = (forward, backward)


class Graph:
    """Append-only op tape; nodes are in topological order by construction."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._input_names: dict[str, int] = {}
        self._consts: dict[int, np.ndarray] = {}

    # -- leaves ------------------------------------------------------------

    def input(self, name: str, shape: tuple[int, ...] | list[int]) -> Var:
        if name in self._input_names:
            raise GraphError(name, "duplicate input name")
        v = self._push("input", (), tuple(int(s) for s in shape), name=name)
        self._input_names[name] = v.idx
        return v

    def const(self, value) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        v = self._push("const", (), arr.shape)
        self._consts[v.idx] = arr
        return v

    @property
    def input_names(self) -> list[str]:
        return list(self._input_names)

    # -- elementwise / broadcast -------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        return self._push("add", (a.idx, b.idx), self._bshape("add", a, b))

    def sub(self, a: Var, b: Var) -> Var:
        return self._push("sub", (a.idx, b.idx), self._bshape("sub", a, b))

    def mul(self, a: Var, b: Var) -> Var:
        return self._push("mul", (a.idx, b.idx), self._bshape("mul", a, b))

    def scale(self, a: Var, c: float) -> Var:
        return self._push("scale", (a.idx,), a.shape, attrs={"c": float(c)})

    def gelu(self, a: Var) -> Var:
        return self._push("gelu", (a.idx,), a.shape)

    def log(self, a: Var) -> Var:
        return self._push("log", (a.idx,), a.shape)

    # -- linear algebra ------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        if len(a.shape) != 2 or len(b.shape) != 2:
            raise GraphError(self._next_label("matmul"), f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise GraphError(self._next_label("matmul"), f"inner dims differ: {a.shape} @ {b.shape}")
        return self._push("matmul", (a.idx, b.idx), (a.shape[0], b.shape[1]))

    def transpose(self, a: Var) -> Var:
        if len(a.shape) != 2:
            raise GraphError(self._next_label("transpose"), f"transpose needs a matrix, got {a.shape}")
        return self._push("transpose", (a.idx,), (a.shape[1], a.shape[0]))

    def conv1d(self, x: Var, w: Var, stride: int) -> Var:
        """No-padding strided convolution: x (Cin, n), w (Cout, Cin, k) -> (Cout, T)."""
        label = self._next_label("conv1d")
        if len(x.shape) != 2 or len(w.shape) != 3:
            raise GraphError(label, f"conv1d expects (Cin,n) and (Cout,Cin,k), got {x.shape}, {w.shape}")
        cin, n = x.shape
        cout, cin_w, k = w.shape
        if cin != cin_w:
            raise GraphError(label, f"channel mismatch: input {cin}, kernel {cin_w}")
        if n < k:
            raise GraphError(label, f"input length {n} shorter than kernel {k}")
        t = (n - k) // stride + 1
        return self._push("conv1d", (x.idx, w.idx), (cout, t), attrs={"stride": int(stride)})

    def layer_norm(self, x: Var, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
        label = self._next_label("layer_norm")
        d = x.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise GraphError(label, f"gain/bias must be ({d},), got {gain.shape}, {bias.shape}")
        return self._push("layer_norm", (x.idx, gain.idx, bias.idx), x.shape, attrs={"eps": float(eps)})

    # -- shape plumbing ------------------------------------------------------

    def slice_cols(self, a: Var, lo: int, hi: int) -> Var:
        label = self._next_label("slice_cols")
        if len(a.shape) != 2 or not (0 <= lo < hi <= a.shape[1]):
            raise GraphError(label, f"bad column slice [{lo}:{hi}] of {a.shape}")
        return self._push("slice_cols", (a.idx,), (a.shape[0], hi - lo), attrs={"lo": lo, "hi": hi})

    def concat_cols(self, parts: list[Var]) -> Var:
        label = self._next_label("concat_cols")
        if not parts:
            raise GraphError(label, "empty concat")
        rows = parts[0].shape[0]
        for p in parts:
            if len(p.shape) != 2 or p.shape[0] != rows:
                raise GraphError(label, f"row mismatch in concat: {[p.shape for p in parts]}")
        cols = sum(p.shape[1] for p in parts)
        return self._push("concat_cols", tuple(p.idx for p in parts), (rows, cols))

    # -- softmax family ------------------------------------------------------

    def softmax(self, a: Var) -> Var:
        return self._push("softmax", (a.idx,), a.shape)

    def log_softmax(self, a: Var) -> Var:
        return self._push("log_softmax", (a.idx,), a.shape)

    # -- similarity / lookup ---------------------------------------------------

    def cosine_sim(self, x: Var, y: Var) -> Var:
        """Row-wise cosine similarity matrix: x (N,D), y (M,D) -> (N,M)."""
        label = self._next_label("cosine_sim")
        if len(x.shape) != 2 or len(y.shape) != 2 or x.shape[1] != y.shape[1]:
            raise GraphError(label, f"cosine_sim needs (N,D),(M,D); got {x.shape}, {y.shape}")
        return self._push("cosine_sim", (x.idx, y.idx), (x.shape[0], y.shape[0]))

    def gather_rows(self, table: Var, ids) -> Var:
        """Embedding lookup: table (V,D), integer ids (n,) -> (n,D)."""
        label = self._next_label("gather_rows")
        ids = np.asarray(ids, dtype=np.int64)
        if len(table.shape) != 2 or ids.ndim != 1:
            raise GraphError(label, f"gather_rows needs (V,D) table and 1-D ids")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise GraphError(label, f"row id out of range [0,{table.shape[0]})")
        return self._push("gather_rows", (table.idx,), (ids.size, table.shape[1]), attrs={"ids": ids})

    def take_per_row(self, x: Var, ids) -> Var:
        """x (N,M), ids (N,) -> (N,) with out[i] = x[i, ids[i]]."""
        label = self._next_label("take_per_row")
        ids = np.asarray(ids, dtype=np.int64)
        if len(x.shape) != 2 or ids.shape != (x.shape[0],):
            raise GraphError(label, f"take_per_row needs (N,M) and ids (N,), got {x.shape}, {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= x.shape[1]):
            raise GraphError(label, f"column id out of range [0,{x.shape[1]})")
        return self._push("take_per_row", (x.idx,), (x.shape[0],), attrs={"ids": ids})

    # -- reductions --------------------------------------------------------

    def sum(self, a: Var) -> Var:
        return self._push("sum", (a.idx,), ())

    def mean(self, a: Var) -> Var:
        return self._push("mean", (a.idx,), ())

    # -- custom (registered) kinds -------------------------------------------

    def custom(self, kind: str, inputs: list[Var], shape: tuple[int, ...], attrs: dict) -> Var:
        if kind not in _CUSTOM_OPS:
            raise GraphError(self._next_label(kind), f"unregistered op kind {kind!r}")
        return self._push(kind, tuple(v.idx for v in inputs), shape, attrs=attrs)

    # -- internals -----------------------------------------------------------

    def _next_label(self, kind: str) -> str:
        return f"{kind}#{len(self.nodes)}"

    def _bshape(self, kind: str, a: Var, b: Var) -> tuple[int, ...]:
        try:
            return np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise GraphError(self._next_label(kind), f"shapes {a.shape} and {b.shape} do not broadcast") from None

    def _push(self, kind: str, inputs: tuple[int, ...], shape: tuple[int, ...],
              attrs: dict | None = None, name: str | None = None) -> Var:
        node = Node(len(self.nodes), kind, inputs, tuple(shape), attrs or {}, name)
        self.nodes.append(node)
        return Var(self, node.idx)


class Execution:
    """Evaluated state of one graph: node values plus per-node aux caches."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self.values: list[np.ndarray | None] = [None] * len(graph.nodes)
        self.aux: list = [None] * len(graph.nodes)

    def value(self, v: Var) -> np.ndarray:
        out = self.values[v.idx]
        if out is None:
            raise GraphError(self.graph.nodes[v.idx].label, "node not evaluated")
        return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(Cin, n) -> (T, Cin*k) window matrix."""
    cin, n = x.shape
    t = (n - k) // stride + 1
    cols = np.empty((t, cin, k), dtype=np.float64)
    for j in range(k):
        cols[:, :, j] = x[:, j:j + (t - 1) * stride + 1:stride].T
    return cols.reshape(t, cin * k)


def eval_forward(graph: Graph, inputs: dict[str, np.ndarray], check_finite: bool = True) -> Execution:
    """Evaluate every node; raises GraphError on shape or finiteness violations."""
    ex = Execution(graph)
    bound = {}
    for name, arr in inputs.items():
        if name not in graph._input_names:
            raise GraphError(name, "not an input of this graph")
        bound[name] = np.asarray(arr, dtype=np.float64)

    for node in graph.nodes:
        kind = node.kind
        if kind == "input":
            if node.name not in bound:
                raise GraphError(node.label, "input not bound")
            val = bound[node.name]
            if val.shape != node.shape:
                raise GraphError(node.label, f"bound shape {val.shape} != declared {node.shape}")
        elif kind == "const":
            val = graph._consts[node.idx]
        else:
            args = [ex.values[i] for i in node.inputs]
            with np.errstate(all="ignore"):
                val = _forward_one(node, args, ex)
        if check_finite and kind != "const" and not np.all(np.isfinite(val)):
            raise GraphError(node.label, "non-finite output")
        ex.values[node.idx] = val
    return ex


def _forward_one(node: Node, args: list[np.ndarray], ex: Execution) -> np.ndarray:
    kind = node.kind
    if kind == "add":
        return args[0] + args[1]
    if kind == "sub":
        return args[0] - args[1]
    if kind == "mul":
        return args[0] * args[1]
    if kind == "scale":
        return args[0] * node.attrs["c"]
    if kind == "gelu":
        x = args[0]
        return 0.5 * x * (1.0 + erf(x * INV_SQRT2))
    if kind == "log":
        return np.log(args[0])
    if kind == "matmul":
        return args[0] @ args[1]
    if kind == "transpose":
        return args[0].T.copy()
    if kind == "conv1d":
        x, w = args
        cout, cin, k = w.shape
        cols = _im2col(x, k, node.attrs["stride"])
        ex.aux[node.idx] = cols
        return (cols @ w.reshape(cout, cin * k).T).T.copy()
    if kind == "layer_norm":
        x, gain, bias = args
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + node.attrs["eps"])
        xhat = xc * inv
        ex.aux[node.idx] = (xhat, inv)
        return xhat * gain + bias
    if kind == "softmax":
        x = args[0]
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    if kind == "log_softmax":
        x = args[0]
        z = x - x.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    if kind == "cosine_sim":
        x, y = args
        xn = np.linalg.norm(x, axis=1)
        yn = np.linalg.norm(y, axis=1)
        xs = np.where(xn < COSINE_NORM_FLOOR, 1.0, xn)
        ys = np.where(yn < COSINE_NORM_FLOOR, 1.0, yn)
        xu = x / xs[:, None]
        yu = y / ys[:, None]
        xu[xn < COSINE_NORM_FLOOR] = 0.0
        yu[yn < COSINE_NORM_FLOOR] = 0.0
        ex.aux[node.idx] = (xu, yu, xs, ys, xn < COSINE_NORM_FLOOR, yn < COSINE_NORM_FLOOR)
        return xu @ yu.T
    if kind == "gather_rows":
        return args[0][node.attrs["ids"]]
    if kind == "take_per_row":
        x = args[0]
        return x[np.arange(x.shape[0]), node.attrs["ids"]]
    if kind == "sum":
        return np.asarray(args[0].sum())
    if kind == "mean":
        return np.asarray(args[0].mean())
    if kind == "slice_cols":
        return args[0][:, node.attrs["lo"]:node.attrs["hi"]].copy()
    if kind == "concat_cols":
        return np.concatenate(args, axis=1)
    if kind in _CUSTOM_OPS:
        out, aux = _CUSTOM_OPS[kind][0](node, args)
        ex.aux[node.idx] = aux
        return out
    raise GraphError(node.label, f"unknown op kind {kind!r}")


def backward(ex: Execution, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every named input; unused leaves get zeros."""
    graph = ex.graph
    loss_node = graph.nodes[loss.idx]
    if loss_node.shape != ():
        raise GraphError(loss_node.label, f"loss must be scalar, has shape {loss_node.shape}")
    if ex.values[loss.idx] is None:
        raise GraphError(loss_node.label, "forward not evaluated")

    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    grads[loss.idx] = np.asarray(1.0)

    for node in reversed(graph.nodes[: loss.idx + 1]):
        g = grads[node.idx]
        if g is None or node.kind in ("input", "const"):
            continue
        args = [ex.values[i] for i in node.inputs]
        in_grads = _backward_one(node, args, ex, g)
        for src, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            if grads[src] is None:
                grads[src] = ig
            else:
                grads[src] = grads[src] + ig

    out = {}
    for name, idx in graph._input_names.items():
        g = grads[idx]
        out[name] = np.zeros(graph.nodes[idx].shape) if g is None else g
    return out


def _backward_one(node: Node, args: list[np.ndarray], ex: Execution, g: np.ndarray):
    kind = node.kind
    if kind == "add":
        return (_unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape))
    if kind == "sub":
        return (_unbroadcast(g, args[0].shape), _unbroadcast(-g, args[1].shape))
    if kind == "mul":
        return (_unbroadcast(g * args[1], args[0].shape), _unbroadcast(g * args[0], args[1].shape))
    if kind == "scale":
        return (g * node.attrs["c"],)
    if kind == "gelu":
        x = args[0]
        d = 0.5 * (1.0 + erf(x * INV_SQRT2)) + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI
        return (g * d,)
    if kind == "log":
        return (g / args[0],)
    if kind == "matmul":
        a, b = args
        return (g @ b.T, a.T @ g)
    if kind == "transpose":
        return (g.T.copy(),)
    if kind == "conv1d":
        x, w = args
        stride = node.attrs["stride"]
        cout, cin, k = w.shape
        cols = ex.aux[node.idx]  # (T, cin*k)
        gt = g.T  # (T, cout)
        dw = (gt.T @ cols).reshape(cout, cin, k)
        dcols = (gt @ w.reshape(cout, cin * k)).reshape(-1, cin, k)
        dx = np.zeros_like(x)
        t = dcols.shape[0]
        for j in range(k):
            dx[:, j:j + (t - 1) * stride + 1:stride] += dcols[:, :, j].T
        return (dx, dw)
    if kind == "layer_norm":
        x, gain, bias = args
        xhat, inv = ex.aux[node.idx]
        d = x.shape[-1]
        dbias = g.reshape(-1, d).sum(axis=0)
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dxhat = g * gain
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgain, dbias)
    if kind == "softmax":
        y = ex.values[node.idx]
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)
    if kind == "log_softmax":
        y = ex.values[node.idx]
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)
    if kind == "cosine_sim":
        xu, yu, xs, ys, xdead, ydead = ex.aux[node.idx]
        s = ex.values[node.idx]
        dxu = g @ yu
        dyu = g.T @ xu
        dx = (dxu - xu * (dxu * xu).sum(axis=1, keepdims=True)) / xs[:, None]
        dy = (dyu - yu * (dyu * yu).sum(axis=1, keepdims=True)) / ys[:, None]
        dx[xdead] = 0.0
        dy[ydead] = 0.0
        return (dx, dy)
    if kind == "gather_rows":
        dt = np.zeros(args[0].shape)
        np.add.at(dt, node.attrs["ids"], g)
        return (dt,)
    if kind == "take_per_row":
        dx = np.zeros(args[0].shape)
        dx[np.arange(dx.shape[0]), node.attrs["ids"]] = g
        return (dx,)
    if kind == "sum":
        return (np.broadcast_to(g, args[0].shape).copy(),)
    if kind == "mean":
        return (np.broadcast_to(g / args[0].size, args[0].shape).copy(),)
    if kind == "slice_cols":
        dx = np.zeros(args[0].shape)
        dx[:, node.attrs["lo"]:node.attrs["hi"]] = g
        return (dx,)
    if kind == "concat_cols":
        outs = []
        at = 0
        for i in node.inputs:
            w = ex.graph.nodes[i].shape[1]
            outs.append(g[:, at:at + w].copy())
            at += w
        return tuple(outs)
    if kind in _CUSTOM_OPS:
        return _CUSTOM_OPS[kind][1](node, args, ex.aux[node.idx], g)
    raise GraphError(node.label, f"unknown op kind {kind!r}")


def grad_check(graph: Graph, loss: Var, inputs: dict[str, np.ndarray],
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per entry is |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
    maximised over every entry of every input tensor.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    inputs = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in inputs.items()}
    ex = eval_forward(graph, inputs)
    analytic = backward(ex, loss)

    worst = 0.0
    for name, base in inputs.items():
        flat = base.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(eval_forward(graph, inputs).value(loss))
            flat[i] = orig - epsilon
            dn = float(eval_forward(graph, inputs).value(loss))
            flat[i] = orig
            num = (up - dn) / (2.0 * epsilon)
            err = abs(ga[i] - num) / max(1e-8, abs(ga[i]) + abs(num))
            worst = max(worst, err)
    return worst
