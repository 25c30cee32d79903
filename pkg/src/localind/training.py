"""Local independence training and the plain single-model baseline.

The ensemble objective on a mini-batch is

    mean_x [ sum_m CE(f_m(x), y) + lam * sum_{a<b} cos2(grad_x logit_a, grad_x logit_b) ]

with ``cos2(v, w) = (v.w)^2 / ((v.v)(w.w) + eps_stab)``.  All models are
updated jointly with Adam.  ``M=1`` (or ``lam=0``) is ordinary training.
"""
import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, backward, forward, mlp_expression
from .models import ACTIVATIONS, domain_normalizer, mlp_init, mlp_input_gradient
from .seeding import stream

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite objective {value!r} at epoch {epoch}, batch {batch}")


@dataclass
class EnsembleConfig:
    M: int = 2
    lam: float = 0.1
    eps_stab: float = 1e-6
    accuracy_epsilon: float = 0.05
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    hidden: tuple = (256, 256)
    activation: str = "softplus"
    normalize_inputs: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self, input_dim=None):
        if self.M < 1:
            raise ValueError("M must be a positive integer")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.eps_stab <= 0:
            raise ValueError("eps_stab must be > 0")
        if not 0 < self.accuracy_epsilon < 1:
            raise ValueError("accuracy_epsilon must lie in (0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_sizes(self, input_dim):
        return (input_dim,) + self.hidden + (1,)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# -- scalar building blocks ---------------------------------------------------

def cross_entropy(logit, y):
    """``-y log f - (1-y) log(1-f)`` with ``f = logistic(logit)``, in logit form."""
    logit = np.asarray(logit, dtype=float)
    return np.logaddexp(0.0, logit) - np.asarray(y) * logit


def cos_squared(v, w, eps_stab=1e-6):
    """Stabilized squared cosine along the last axis."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    vw = np.sum(v * w, axis=-1)
    return vw * vw / (np.sum(v * v, axis=-1) * np.sum(w * w, axis=-1) + eps_stab)


def diversity_penalty(models, x, eps_stab=1e-6):
    """Sum of pairwise ``cos_squared`` between the models' log-odds input gradients."""
    grads = [mlp_input_gradient(m, x) for m in models]
    total = 0.0
    for a, b in itertools.combinations(range(len(grads)), 2):
        total = total + cos_squared(grads[a], grads[b], eps_stab)
    return total


# -- the ensemble objective as a graph ----------------------------------------

class EnsembleObjective:
    """The batch objective recorded once on a tape and re-evaluated per step."""

    def __init__(self, input_dim, M, hidden, activation, lam, eps_stab):
        self.M = M
        self.lam = lam
        tape = self.tape = Tape()
        self.x = tape.input((None, input_dim), "x")
        self.y = tape.input((None,), "y")
        sizes = (input_dim,) + tuple(hidden) + (1,)
        self.mlps = [mlp_expression(tape, sizes, activation, self.x, prefix=f"m{m}.")
                     for m in range(M)]
        self.ce = []
        for mlp in self.mlps:
            z = mlp.logit
            self.ce.append(tape.mean(tape.softplus(z) - self.y * z))
        ce_sum = self.ce[0]
        for c in self.ce[1:]:
            ce_sum = ce_sum + c
        self.ce_sum = ce_sum
        self.penalty = None
        if M >= 2:
            grads = [mlp.input_gradient() for mlp in self.mlps]
            sq = [tape.sum(g * g, axis=-1) for g in grads]
            per_example = None
            for a, b in itertools.combinations(range(M), 2):
                dot = tape.sum(grads[a] * grads[b], axis=-1)
                c2 = tape.square(dot) * tape.reciprocal(sq[a] * sq[b] + eps_stab)
                per_example = c2 if per_example is None else per_example + c2
            self.penalty = tape.mean(per_example)
        if self.penalty is not None and lam > 0:
            self.objective = ce_sum + lam * self.penalty
        else:
            self.objective = ce_sum
        self.outputs = [self.objective, *self.ce] + ([self.penalty] if self.penalty else [])

    def bindings(self, models, X, Y):
        b = {self.x.id: X, self.y.id: Y}
        for mlp, params in zip(self.mlps, models):
            b.update(mlp.bind(params))
        return b

    def evaluate(self, models, X, Y, gradients=True):
        """Returns ``(objective, per-model CE, penalty, per-model gradient arrays)``."""
        values = forward(self.tape, self.bindings(models, X, Y), outputs=self.outputs)
        obj = float(values[self.objective.id])
        ces = [float(values[c.id]) for c in self.ce]
        pen = float(values[self.penalty.id]) if self.penalty is not None else 0.0
        grads = None
        if gradients:
            g = backward(self.tape, values, self.objective)
            grads = [[g[n.id] for n in mlp.parameters] for mlp in self.mlps]
        return obj, ces, pen, grads


def lit_objective(models, X, Y, config):
    """Batch objective and its gradient w.r.t. every model's parameter arrays."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    if len(X) == 0:
        raise ValueError("empty batch")
    m0 = models[0]
    obj = EnsembleObjective(m0.input_dim, len(models), m0.layer_sizes[1:-1], m0.activation,
                            config.lam, config.eps_stab)
    value, _, _, grads = obj.evaluate(models, X, Y)
    return value, grads


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def zeros(cls, arrays):
        return cls(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update of a list of arrays; returns ``(params, state)``."""
    lr, b1, b2, eps = config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


# -- training loop ------------------------------------------------------------

@dataclass
class TrainingHistory:
    ce: list = field(default_factory=list)          # per epoch: list of M floats
    accuracy: list = field(default_factory=list)    # per epoch: list of M floats
    mean_cos2: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    initial: dict = field(default_factory=dict)

    @property
    def epochs(self):
        return len(self.objective)

    def final_accuracy(self):
        return list(self.accuracy[-1]) if self.accuracy else []

    def to_dict(self):
        return asdict(self)

    def to_csv(self, path):
        M = len(self.ce[0]) if self.ce else 0
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch"] + [f"ce_{m}" for m in range(M)]
                       + [f"train_acc_{m}" for m in range(M)] + ["mean_cos2", "objective"])
            for e in range(self.epochs):
                w.writerow([e + 1] + [repr(v) for v in self.ce[e]]
                           + [repr(v) for v in self.accuracy[e]]
                           + [repr(self.mean_cos2[e]), repr(self.objective[e])])


def train_ensemble(dataset, config, callback=None):
    """Jointly train ``config.M`` MLPs on ``dataset``; returns ``(models, history)``."""
    X, Y = dataset.X, dataset.Y.astype(float)
    n, d = X.shape
    config.validate(d)
    if n == 0 or Y.min() == Y.max():
        raise ValueError("training data must contain both labels")
    if config.M > d:
        # at most d gradients can be pairwise orthogonal; the oversize diagnostic reports it
        log.warning("M=%d exceeds the input dimension %d", config.M, d)
    sizes = config.layer_sizes(d)
    center, scale = domain_normalizer(dataset.domain) if config.normalize_inputs else (None, None)
    models = [mlp_init(sizes, config.activation, config.seed, member=m,
                       input_center=center, input_scale=scale) for m in range(config.M)]
    objective = EnsembleObjective(d, config.M, config.hidden, config.activation,
                                  config.lam, config.eps_stab)
    n_pairs = config.M * (config.M - 1) // 2
    states = [AdamState.zeros(p.arrays()) for p in models]
    rng = stream(config.seed, "shuffle")
    history = TrainingHistory()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        ce_acc = np.zeros(config.M)
        pen_acc = obj_acc = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            # non-finite values are caught just below
            with np.errstate(over="ignore", invalid="ignore"):
                value, ces, pen, grads = objective.evaluate(models, X[idx], Y[idx])
            if not math.isfinite(value):
                raise NumericalError(epoch, b, value)
            if epoch == 1 and b == 0:
                ce_total = sum(ces)
                history.initial = {
                    "cross_entropy": ce_total,
                    "penalty": pen,
                    "penalty_to_ce_ratio": config.lam * pen / ce_total if ce_total > 0 else 0.0,
                }
                log.info("initial CE sum %.4g, lambda*penalty %.4g (ratio %.3g)",
                         ce_total, config.lam * pen, history.initial["penalty_to_ce_ratio"])
            k = len(idx)
            ce_acc += k * np.asarray(ces)
            pen_acc += k * pen
            obj_acc += k * value
            for m in range(config.M):
                arrays, states[m] = adam_step(models[m].arrays(), grads[m], states[m], config)
                models[m] = models[m].with_arrays(arrays)
        acc = [float(np.mean(p.predict(X) == dataset.Y)) for p in models]
        history.ce.append((ce_acc / n).tolist())
        history.accuracy.append(acc)
        history.mean_cos2.append(pen_acc / n / n_pairs if n_pairs else 0.0)
        history.objective.append(obj_acc / n)
        if callback is not None:
            callback(epoch, models, history)
    return models, history


def m_oversize_diagnostic(history, config, input_dim=None):
    """Flag models whose final training accuracy is below ``1 - accuracy_epsilon``.

    Under local independence training an ensemble larger than the number of
    rules supported by the data shows up as members with poor training
    accuracy rather than as members with aligned gradients.
    """
    threshold = 1.0 - config.accuracy_epsilon
    final = history.final_accuracy()
    low = [m for m, a in enumerate(final) if a < threshold]
    if low:
        message = (f"models {low} have training accuracy below {threshold:.3f}; "
                   f"M={config.M} may exceed the number of distinct rules in the data")
    else:
        message = f"all {len(final)} models reach training accuracy >= {threshold:.3f}"
    exceeds = input_dim is not None and config.M > input_dim
    if exceeds:
        message += f"; M={config.M} exceeds the input dimension {input_dim}"
    return bool(low), {
        "flag": bool(low),
        "m_exceeds_input_dim": exceeds,
        "threshold": threshold,
        "final_accuracy": final,
        "low_accuracy_models": low,
        "message": message,
    }
