"""Reverse-mode differentiation over a recorded computation graph.

A :class:`Tape` records operations as :class:`Node` objects in creation
order, which is also a valid topological order.  The graph is defined once
and evaluated many times: :func:`forward` binds numeric arrays to the leaves
and computes every node, :func:`backward` propagates adjoints from a scalar
seed back to the leaves.

Node values are float64 numpy arrays.  Per-example values are scalars and
vectors; every op also accepts a leading batch axis so that one graph
evaluates a whole mini-batch at once.

The engine itself is first order.  Objectives that contain input gradients
of an MLP (double backprop) are handled by writing the input gradient into
the graph analytically with :func:`input_gradient_expression`; ordinary
reverse mode over that graph then yields the parameter gradients.

Example::

    tape = Tape()
    w = tape.parameter((2,), "w")
    x = tape.input((2,), "x")
    y = tape.dot(w, x)
    values = forward(tape, {"w": [1.0, 2.0], "x": [3.0, 4.0]})
    grads = backward(tape, values, y)   # grads[w.id] == [3., 4.]
"""
import numpy as np
from scipy.special import expit

__all__ = [
    "AutodiffError", "ShapeError", "Node", "Tape", "MlpGraph",
    "forward", "backward", "mlp_expression", "input_gradient_expression",
    "grad_check",
]

LEAF_OPS = ("constant", "parameter", "input")


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    """Raised when operand shapes are incompatible; names the offending node."""

    def __init__(self, node, message):
        self.node_id = node.id
        self.op = node.op
        label = f"node {node.id} ({node.op}"
        if node.name:
            label += f" {node.name!r}"
        super().__init__(f"{label}): {message}")


class Node:
    __slots__ = ("tape", "id", "op", "parents", "shape", "name", "attrs")

    def __init__(self, tape, id, op, parents=(), shape=None, name=None, attrs=None):
        self.tape = tape
        self.id = id
        self.op = op
        self.parents = tuple(parents)
        self.shape = shape
        self.name = name
        self.attrs = attrs or {}

    def __repr__(self):
        return f"Node({self.id}, {self.op!r}, parents={self.parents})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.add(self, self.tape.negate(other))

    def __rsub__(self, other):
        return self.tape.add(other, self.tape.negate(self))

    def __mul__(self, other):
        return self.tape.multiply(self, other)

    def __rmul__(self, other):
        return self.tape.multiply(other, self)

    def __neg__(self):
        return self.tape.negate(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


class Tape:
    """Records a computation graph; single-threaded."""

    def __init__(self):
        self.nodes = []
        self.parameter_leaves = []
        self.input_leaves = []
        self._by_name = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, parents=(), shape=None, name=None, **attrs):
        ids = []
        for p in parents:
            p = self._as_node(p)
            ids.append(p.id)
        node = Node(self, len(self.nodes), op, ids, shape, name, attrs)
        self.nodes.append(node)
        return node

    def _as_node(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise AutodiffError(f"{x!r} belongs to another tape")
            return x
        return self.constant(x)

    def leaf(self, name):
        return self._by_name[name]

    # -- leaves -------------------------------------------------------------

    def constant(self, value):
        value = np.asarray(value, dtype=float)
        return self._push("constant", shape=value.shape, value=value)

    def _leaf(self, op, shape, name):
        if name is not None and name in self._by_name:
            raise AutodiffError(f"duplicate leaf name {name!r}")
        node = self._push(op, shape=tuple(shape), name=name)
        if name is not None:
            self._by_name[name] = node
        return node

    def parameter(self, shape, name=None):
        node = self._leaf("parameter", shape, name)
        self.parameter_leaves.append(node.id)
        return node

    def input(self, shape, name=None):
        """An input leaf.  ``None`` in ``shape`` matches any extent."""
        node = self._leaf("input", shape, name)
        self.input_leaves.append(node.id)
        return node

    # -- operations ---------------------------------------------------------

    def add(self, a, b):
        return self._push("add", (a, b))

    def multiply(self, a, b):
        return self._push("multiply", (a, b))

    def negate(self, a):
        return self._push("negate", (a,))

    def matmul(self, a, b):
        return self._push("matmul", (a, b))

    def matvec(self, a, v):
        return self._push("matvec", (a, v))

    def dot(self, u, v):
        return self._push("dot", (u, v))

    def transpose(self, a):
        return self._push("transpose", (a,))

    def reshape(self, a, shape):
        return self._push("reshape", (a,), newshape=tuple(shape))

    def sum(self, a, axis=None):
        return self._push("sum", (a,), axis=axis)

    def mean(self, a, axis=None):
        return self._push("mean", (a,), axis=axis)

    def softplus(self, a):
        return self._push("softplus", (a,))

    def relu(self, a):
        return self._push("relu", (a,))

    def step(self, a):
        """Heaviside step ``1[a > 0]``; its derivative is taken as zero."""
        return self._push("step", (a,))

    def logistic(self, a):
        return self._push("logistic", (a,))

    def log(self, a):
        return self._push("log", (a,))

    def reciprocal(self, a):
        return self._push("reciprocal", (a,))

    def square(self, a):
        return self._push("square", (a,))


# -- forward ------------------------------------------------------------------

def _broadcast(node, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(node, f"cannot broadcast {a.shape} with {b.shape}") from None


def _fwd_add(node, a, b):
    _broadcast(node, a, b)
    return a + b


def _fwd_multiply(node, a, b):
    _broadcast(node, a, b)
    return a * b


def _fwd_matmul(node, a, b):
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(node, f"matmul needs 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(node, f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def _fwd_matvec(node, a, v):
    if a.ndim != 2 or v.ndim != 1:
        raise ShapeError(node, f"matvec needs a matrix and a vector, got {a.shape}, {v.shape}")
    return _fwd_matmul(node, a, v)


def _fwd_dot(node, u, v):
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(node, f"dot needs two vectors, got {u.shape}, {v.shape}")
    return _fwd_matmul(node, u, v)


def _fwd_transpose(node, a):
    if a.ndim != 2:
        raise ShapeError(node, f"transpose needs a matrix, got {a.shape}")
    return a.T


def _fwd_reshape(node, a):
    try:
        return a.reshape(node.attrs["newshape"])
    except ValueError:
        raise ShapeError(node, f"cannot reshape {a.shape} to {node.attrs['newshape']}") from None


def _fwd_reduce(fn):
    def run(node, a):
        axis = node.attrs["axis"]
        if axis is not None and not -a.ndim <= axis < a.ndim:
            raise ShapeError(node, f"axis {axis} out of range for shape {a.shape}")
        return np.asarray(fn(a, axis=axis))
    return run


def _fwd_log(node, a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(a)


def _fwd_reciprocal(node, a):
    with np.errstate(divide="ignore"):
        return 1.0 / a


_FORWARD = {
    "add": _fwd_add,
    "multiply": _fwd_multiply,
    "negate": lambda node, a: -a,
    "matmul": _fwd_matmul,
    "matvec": _fwd_matvec,
    "dot": _fwd_dot,
    "transpose": _fwd_transpose,
    "reshape": _fwd_reshape,
    "sum": _fwd_reduce(np.sum),
    "mean": _fwd_reduce(np.mean),
    "softplus": lambda node, a: np.logaddexp(0.0, a),
    "relu": lambda node, a: np.maximum(a, 0.0),
    "step": lambda node, a: (a > 0).astype(float),
    "logistic": lambda node, a: expit(a),
    "log": _fwd_log,
    "reciprocal": _fwd_reciprocal,
    "square": lambda node, a: a * a,
}


def _check_leaf(node, value):
    declared = node.shape
    if len(declared) != value.ndim or any(
        d is not None and d != s for d, s in zip(declared, value.shape)
    ):
        raise ShapeError(node, f"bound value has shape {value.shape}, declared {declared}")


def _resolve(tape, key):
    if isinstance(key, Node):
        return key.id
    if isinstance(key, str):
        return tape.leaf(key).id
    return int(key)


def _needed(tape, outputs):
    need = np.zeros(len(tape.nodes), dtype=bool)
    stack = [_resolve(tape, o) for o in outputs]
    while stack:
        i = stack.pop()
        if need[i]:
            continue
        need[i] = True
        stack.extend(tape.nodes[i].parents)
    return need


def forward(tape, bindings, outputs=None):
    """Evaluate the graph.

    ``bindings`` maps leaves (as nodes, ids or names) to values.  With
    ``outputs`` given, only their ancestors are evaluated and only their
    leaves need bindings.  Returns a list indexed by node id; entries that
    were not evaluated are ``None``.
    """
    bound = {_resolve(tape, k): np.asarray(v, dtype=float) for k, v in bindings.items()}
    need = None if outputs is None else _needed(tape, outputs)
    values = [None] * len(tape.nodes)
    for node in tape.nodes:
        if need is not None and not need[node.id]:
            continue
        if node.op == "constant":
            values[node.id] = node.attrs["value"]
        elif node.op in ("parameter", "input"):
            if node.id not in bound:
                raise ShapeError(node, "leaf has no binding")
            value = bound[node.id]
            _check_leaf(node, value)
            values[node.id] = value
        else:
            args = [values[p] for p in node.parents]
            values[node.id] = _FORWARD[node.op](node, *args)
    return values


# -- backward -----------------------------------------------------------------

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _vjp_matmul(g, a, b):
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return b @ g, np.outer(a, g)
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g * b, g * a


def _vjp_mean(node, g, out, a):
    axis = node.attrs["axis"]
    count = a.size if axis is None else a.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape) / count,)


def _vjp_sum(node, g, out, a):
    axis = node.attrs["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


_BACKWARD = {
    "add": lambda node, g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    "multiply": lambda node, g, out, a, b: (_unbroadcast(g * b, a.shape),
                                            _unbroadcast(g * a, b.shape)),
    "negate": lambda node, g, out, a: (-g,),
    "matmul": lambda node, g, out, a, b: _vjp_matmul(g, a, b),
    "matvec": lambda node, g, out, a, b: _vjp_matmul(g, a, b),
    "dot": lambda node, g, out, a, b: _vjp_matmul(g, a, b),
    "transpose": lambda node, g, out, a: (g.T,),
    "reshape": lambda node, g, out, a: (g.reshape(a.shape),),
    "sum": _vjp_sum,
    "mean": _vjp_mean,
    "softplus": lambda node, g, out, a: (g * expit(a),),
    "relu": lambda node, g, out, a: (g * (a > 0),),
    "step": lambda node, g, out, a: (np.zeros_like(a),),
    "logistic": lambda node, g, out, a: (g * out * (1.0 - out),),
    "log": lambda node, g, out, a: (g / a,),
    "reciprocal": lambda node, g, out, a: (-g * out * out,),
    "square": lambda node, g, out, a: (2.0 * g * a,),
}


def backward(tape, values, seed):
    """Gradients of the scalar node ``seed`` with respect to every leaf.

    ``values`` is the list returned by :func:`forward`.  Returns a dict
    mapping parameter and input leaf ids to gradient arrays (zeros for
    leaves the seed does not depend on).
    """
    seed_id = _resolve(tape, seed)
    seed_node = tape.nodes[seed_id]
    if values[seed_id] is None:
        raise AutodiffError(f"seed node {seed_id} was not evaluated")
    if np.ndim(values[seed_id]) != 0:
        raise ShapeError(seed_node, f"seed must be scalar, has shape {np.shape(values[seed_id])}")
    adjoints = [None] * len(tape.nodes)
    adjoints[seed_id] = np.ones(())
    for i in range(seed_id, -1, -1):
        g = adjoints[i]
        node = tape.nodes[i]
        if g is None or node.op in LEAF_OPS:
            continue
        parent_vals = [values[p] for p in node.parents]
        grads = _BACKWARD[node.op](node, g, values[i], *parent_vals)
        for p, gp in zip(node.parents, grads):
            if tape.nodes[p].op == "constant":
                continue
            adjoints[p] = gp if adjoints[p] is None else adjoints[p] + gp
    out = {}
    for leaf in tape.parameter_leaves + tape.input_leaves:
        if values[leaf] is None:
            continue
        g = adjoints[leaf]
        out[leaf] = np.zeros_like(values[leaf]) if g is None else np.array(g, dtype=float)
    return out


# -- MLP expressions ----------------------------------------------------------

class MlpGraph:
    """Parameter leaves and output nodes of one MLP recorded on a tape.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])``.
    ``logit`` has shape ``()`` for a vector input and ``(B,)`` for a batch.
    """

    def __init__(self, tape, layer_sizes, activation, x, weights, biases, pre, logit,
                 center, inv_scale):
        self.tape = tape
        self.center = center
        self.inv_scale = inv_scale
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.x = x
        self.weights = weights
        self.biases = biases
        self.pre = pre
        self.logit = logit
        self._input_grad = None

    @property
    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def bind(self, params):
        """Bindings for this graph's leaves from an ``MlpParams``."""
        out = {self.center.id: params.input_center, self.inv_scale.id: 1.0 / params.input_scale}
        for node, value in zip(self.weights, params.weights):
            out[node.id] = value
        for node, value in zip(self.biases, params.biases):
            out[node.id] = value
        return out

    def input_gradient(self):
        if self._input_grad is None:
            self._input_grad = input_gradient_expression(self)
        return self._input_grad


def mlp_expression(tape, layer_sizes, activation, x, prefix=""):
    """Record ``logit(f_θ(x))`` for an MLP with fresh parameter leaves.

    ``x`` is an input node of shape ``(D,)`` or ``(B, D)``.  The fixed input
    map ``(x - center) * inv_scale`` is fed by two extra input leaves.
    """
    if activation not in ("softplus", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
        raise ValueError(f"layer_sizes must run from D to 1, got {layer_sizes}")
    act = tape.softplus if activation == "softplus" else tape.relu
    weights, biases, pre = [], [], []
    d = layer_sizes[0]
    center = tape.input((d,), f"{prefix}center")
    inv_scale = tape.input((d,), f"{prefix}inv_scale")
    h = (x - center) * inv_scale
    n_layers = len(layer_sizes) - 1
    for l in range(n_layers):
        fan_in, fan_out = layer_sizes[l], layer_sizes[l + 1]
        w = tape.parameter((fan_out, fan_in), f"{prefix}W{l}")
        b = tape.parameter((fan_out,), f"{prefix}b{l}")
        z = tape.add(tape.matmul(h, tape.transpose(w)), b)
        weights.append(w)
        biases.append(b)
        pre.append(z)
        if l < n_layers - 1:
            h = act(z)
    # drop the trailing unit axis of the output layer
    logit = tape.sum(pre[-1], axis=-1)
    return MlpGraph(tape, layer_sizes, activation, x, weights, biases, pre, logit,
                    center, inv_scale)


def input_gradient_expression(mlp):
    """Record ``∇_x logit`` of ``mlp`` analytically as graph nodes.

    Builds ``W_L · diag(σ'(z_{L-1})) · W_{L-1} ··· W_1`` from right to left,
    where σ' is ``logistic`` for softplus and ``step`` for relu, then applies
    the input map's ``inv_scale``.  The resulting node is itself
    differentiable with respect to the weights.
    """
    tape = mlp.tape
    deriv = tape.logistic if mlp.activation == "softplus" else tape.step
    g = tape.reshape(mlp.weights[-1], (mlp.layer_sizes[-2],))
    for l in range(len(mlp.weights) - 2, -1, -1):
        g = tape.matmul(tape.multiply(g, deriv(mlp.pre[l])), mlp.weights[l])
    return g * mlp.inv_scale


# -- finite-difference checking -----------------------------------------------

def grad_check(build, point, step=1e-5, wrt=None):
    """Worst relative error between reverse-mode and central-difference gradients.

    ``build(tape)`` records a scalar expression and returns its node.
    ``point`` maps leaf names to values.  ``wrt`` lists the leaf names to
    check (default: every parameter leaf).  The relative error of each
    entry uses the denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tape = Tape()
    seed = build(tape)
    point = {k: np.array(v, dtype=float) for k, v in point.items()}
    values = forward(tape, point)
    grads = backward(tape, values, seed)
    names = wrt if wrt is not None else [tape.nodes[i].name for i in tape.parameter_leaves]
    worst = 0.0
    for name in names:
        leaf = tape.leaf(name)
        analytic = grads[leaf.id]
        base = point[name]
        numeric = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + step
            f_plus = forward(tape, point, outputs=[seed])[seed.id]
            base[idx] = orig - step
            f_minus = forward(tape, point, outputs=[seed])[seed.id]
            base[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        if analytic.size:
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
