"""Classifier model classes: MLPs and the non-neural baselines.

All models expose ``predict_proba(X)`` and ``predict(X)`` on an ``(N, D)``
array; labels are 1 wherever the class-1 probability is at least 0.5.
"""
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .autodiff import Tape, forward, mlp_expression
from .seeding import stream, sub_seed

ACTIVATIONS = ("softplus", "relu")


def labels_from_proba(p):
    return (np.asarray(p) >= 0.5).astype(int)


def labels_from_logit(z):
    # logistic(z) >= 0.5  <=>  z >= 0
    return (np.asarray(z) >= 0).astype(int)


# -- MLP ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights and biases of one binary MLP classifier.

    ``weights[l]`` has shape ``(layer_sizes[l+1], layer_sizes[l])`` and the
    last layer has a single output unit producing the logit.  Inputs are
    first mapped to ``(x - input_center) / input_scale``; the map is fixed,
    not trained, and defaults to the identity.
    """
    layer_sizes: tuple
    activation: str
    weights: tuple
    biases: tuple
    input_center: np.ndarray = None
    input_scale: np.ndarray = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if sizes[-1] != 1:
            raise ValueError("binary classifier needs a single output unit")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        weights = tuple(np.asarray(w, dtype=float) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias vector per layer")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: shapes {w.shape}, {b.shape} disagree with {sizes}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        center = np.zeros(sizes[0]) if self.input_center is None else \
            np.asarray(self.input_center, dtype=float)
        scale = np.ones(sizes[0]) if self.input_scale is None else \
            np.asarray(self.input_scale, dtype=float)
        if center.shape != (sizes[0],) or scale.shape != (sizes[0],) or np.any(scale <= 0):
            raise ValueError("input_center/input_scale must be D-vectors with positive scale")
        center.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "input_center", center)
        object.__setattr__(self, "input_scale", scale)

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def n_parameters(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays):
        return MlpParams(self.layer_sizes, self.activation, arrays[0::2], arrays[1::2],
                         self.input_center, self.input_scale)

    def logit(self, X):
        return mlp_logit(self, X)

    def predict_proba(self, X):
        return expit(self.logit(X))

    def predict(self, X):
        return labels_from_logit(self.logit(X))

    def to_dict(self):
        return {
            "kind": "mlp",
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_center": self.input_center.tolist(),
            "input_scale": self.input_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("kind", "mlp") != "mlp":
            raise ValueError(f"not an MLP record: kind={d.get('kind')!r}")
        sizes = [int(s) for s in d["layer_sizes"]]
        weights = [np.asarray(w, dtype=float).reshape(sizes[l + 1], sizes[l])
                   for l, w in enumerate(d["weights"])]
        return cls(tuple(sizes), d["activation"], weights, d["biases"],
                   d.get("input_center"), d.get("input_scale"))


def mlp_init(layer_sizes, activation, seed, member=0, input_center=None, input_scale=None):
    """Zero biases and N(0, 1/fan_in) weights from stream ``(seed, "init", member)``."""
    if not layer_sizes:
        raise ValueError("layer_sizes is empty")
    rng = stream(seed, "init", member)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), activation, weights, biases, input_center, input_scale)


def domain_normalizer(domain):
    """Center and half-width mapping ``domain`` onto ``[-1, 1]^D``."""
    return (domain.lower + domain.upper) / 2, (domain.upper - domain.lower) / 2


def mlp_logit(params, X):
    """Pre-logistic score for a single input ``(D,)`` or a batch ``(N, D)``."""
    h = np.asarray(X, dtype=float)
    if h.shape[-1] != params.input_dim:
        raise ValueError(f"input has {h.shape[-1]} features, model expects {params.input_dim}")
    h = (h - params.input_center) * (1.0 / params.input_scale)
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.logaddexp(0.0, h) if params.activation == "softplus" else np.maximum(h, 0.0)
    return h[..., 0]


@functools.lru_cache(maxsize=32)
def _gradient_graph(layer_sizes, activation):
    tape = Tape()
    x = tape.input((None, layer_sizes[0]), "x")
    mlp = mlp_expression(tape, layer_sizes, activation, x)
    return tape, x, mlp, mlp.input_gradient()


def mlp_input_gradient(params, X):
    """Input gradient of the logit for ``(D,)`` or ``(N, D)`` inputs."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    tape, x, mlp, grad = _gradient_graph(params.layer_sizes, params.activation)
    bindings = mlp.bind(params)
    bindings[x.id] = X2
    g = forward(tape, bindings, outputs=[grad])[grad.id]
    g = np.broadcast_to(g, X2.shape).copy()
    return g[0] if single else g


def save_model(params, path):
    with open(path, "w") as f:
        json.dump(params.to_dict(), f)


def load_model(path):
    with open(path) as f:
        return MlpParams.from_dict(json.load(f))


# -- decision tree ------------------------------------------------------------

LEAF = -1


@dataclass(eq=False)
class DecisionTree:
    """A CART tree stored as parallel node arrays; node 0 is the root.

    Internal node ``i`` sends ``x`` left when ``x[feature[i]] <= threshold[i]``.
    Thresholds are training values (the largest on the left side), which
    keeps predictions invariant under monotone feature transforms.
    Leaves have ``feature == LEAF`` and carry the class-1 fraction.
    """
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    probability: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature == LEAF))

    def apply(self, X):
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] != LEAF
        while np.any(active):
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict_proba(self, X):
        return self.probability[self.apply(X)]

    def predict(self, X):
        return labels_from_proba(self.predict_proba(X))


def _best_split(x, y, min_leaf):
    """Best Gini split of one feature; returns (weighted impurity, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    n_left = np.arange(1, n)
    pos_left = np.cumsum(ys)[:-1]
    total_pos = pos_left[-1] + ys[-1]
    n_right = n - n_left
    pos_right = total_pos - pos_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    # n * gini = n - (pos^2 + neg^2) / n
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    impurity = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    impurity = np.where(valid, impurity, np.inf)
    k = int(np.argmin(impurity))
    return impurity[k], xs[k]


def tree_fit(X, Y, max_depth=None, min_leaf=1, max_features=None, rng=None):
    """Greedy CART with Gini impurity.

    ``max_features`` features are sampled per split (all when ``None``);
    sampling needs ``rng``.  Impure nodes are split whenever a valid split
    exists, so an unlimited tree fits any data without duplicate inputs.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y).astype(float)
    n, d = X.shape
    if n < 1:
        raise ValueError("tree_fit needs at least one example")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    feature, threshold, left, right, prob = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        prob.append(float(Y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        p = prob[node]
        if p == 0.0 or p == 1.0 or len(idx) < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if max_features is None or max_features >= d:
            candidates = range(d)
        else:
            candidates = np.sort(rng.choice(d, size=max_features, replace=False))
        best = None
        for f in candidates:
            found = _best_split(X[idx, f], Y[idx], min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], f, found[1])
        if best is None:
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        li = new_node(idx[mask])
        ri = new_node(idx[~mask])
        feature[node], threshold[node] = int(f), float(thr)
        left[node], right[node] = li, ri
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))

    return DecisionTree(d, np.array(feature, dtype=int), np.array(threshold),
                        np.array(left, dtype=int), np.array(right, dtype=int), np.array(prob))


@dataclass(eq=False)
class RandomForest:
    """Bootstrap-aggregated CART trees; predicts the mean leaf probability."""
    trees: list
    bootstrap_seeds: list = field(default_factory=list)

    def predict_proba(self, X):
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def predict(self, X):
        return labels_from_proba(self.predict_proba(X))


def forest_fit(X, Y, n_trees=100, max_depth=None, seed=0, min_leaf=1, max_features="sqrt",
               bootstrap=True):
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    n, d = X.shape
    if max_features == "sqrt":
        max_features = max(1, int(math.sqrt(d)))
    trees, seeds = [], []
    for t in range(n_trees):
        s = sub_seed(seed, "tree", t)
        rng = np.random.default_rng(s)
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(tree_fit(X[idx], Y[idx], max_depth, min_leaf, max_features, rng))
        seeds.append(s)
    return RandomForest(trees, seeds)
