"""Recovery, orthogonality and mutual-information measurements.

* agreement of each model with each ground-truth rule over uniform samples
  of the full domain, and the best model-to-rule matching;
* mean pairwise squared cosine of log-odds input gradients;
* the Gaussian-perturbation identity ``I = -1/2 ln(1 - cos^2)`` checked
  against Monte Carlo estimates;
* logit grids over 2D slices or projections, for contour plots.
"""
import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logit as _logit

from .datasets import DomainBox, gen_rule_testset
from .models import mlp_input_gradient
from .seeding import stream
from .training import cos_squared

DIVERGENT = math.inf
DEFAULT_EVAL_SAMPLES = 10_000
PROJECTION_SAMPLES = 256


# -- agreement and matching ---------------------------------------------------

def rule_testset(rule, domain, n, seed, k=None):
    name = rule.name if k is None else k
    return gen_rule_testset(rule, domain, n, seed, stream_name=("eval", name))


def agreement(model, rule, domain, n=DEFAULT_EVAL_SAMPLES, seed=0):
    """Fraction of uniform domain samples where ``model`` and ``rule`` assign the same label."""
    if n < 1:
        raise ValueError("n must be >= 1")
    test = rule_testset(rule, domain, n, seed)
    return float(np.mean(model.predict(test.X) == test.Y))


def agreement_matrix(models, rules, domain, n=DEFAULT_EVAL_SAMPLES, seed=0):
    out = np.zeros((len(models), len(rules)))
    for k, rule in enumerate(rules):
        test = rule_testset(rule, domain, n, seed)
        for m, model in enumerate(models):
            out[m, k] = np.mean(model.predict(test.X) == test.Y)
    return out


def match_models(agreement):
    """Assign models to rules maximizing summed agreement.

    Returns ``(perm, score)`` where model ``m`` is matched to rule
    ``perm[m]``.  Permutations are enumerated in lexicographic order and
    only a strictly better score replaces the incumbent, so ties go to the
    lexicographically smallest permutation.
    """
    A = np.asarray(agreement, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matching needs as many models as rules, got {A.shape}")
    M = A.shape[0]
    if M > 8:
        raise ValueError("exhaustive matching supports at most 8 models")
    best, best_score = None, -math.inf
    rows = np.arange(M)
    for perm in itertools.permutations(range(M)):
        score = float(A[rows, perm].sum())
        if score > best_score:
            best, best_score = perm, score
    return best, best_score


# -- gradient orthogonality ---------------------------------------------------

def cos2_stats(models, points, eps_stab=1e-6):
    """``M x M`` matrix of pairwise ``cos_squared`` of input gradients, averaged over points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) < 1:
        raise ValueError("need at least one point")
    grads = [mlp_input_gradient(m, points) for m in models]
    M = len(models)
    out = np.zeros((M, M))
    for a in range(M):
        for b in range(a, M):
            out[a, b] = out[b, a] = float(np.mean(cos_squared(grads[a], grads[b], eps_stab)))
    return out


# -- mutual information -------------------------------------------------------

def mi_formula(cos2):
    """Mutual information of two unit-variance Gaussians with squared correlation ``cos2``."""
    cos2 = float(cos2)
    if cos2 < 0:
        raise ValueError("cos2 must be >= 0")
    if cos2 >= 1:
        return DIVERGENT
    return -0.5 * math.log1p(-cos2)


@dataclass(frozen=True)
class PerturbationSpec:
    """Isotropic Gaussian input perturbation ``N(0, sigma^2 I)``.

    ``sigma`` should be small against the domain, at most about 1e-3 of the
    box width, so that models are close to their linearization.
    """
    sigma: float
    n_samples: int = 100_000

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")

    @classmethod
    def for_domain(cls, domain, n_samples=100_000, rel=1e-4):
        return cls(float(rel * np.mean(domain.width)), n_samples)


def _mi_from_samples(a, b):
    rho = np.corrcoef(a, b)[0, 1]
    if not np.isfinite(rho):
        raise ValueError("degenerate projections")
    return mi_formula(min(rho * rho, 1.0))


def mi_empirical(grad_i, grad_j, spec, seed=0):
    """Monte Carlo MI of ``delta . grad_i`` and ``delta . grad_j`` for Gaussian ``delta``."""
    gi = np.asarray(grad_i, dtype=float)
    gj = np.asarray(grad_j, dtype=float)
    if not np.any(gi) or not np.any(gj):
        raise ValueError("gradients must be nonzero")
    delta = spec.sigma * stream(seed, "mi").standard_normal((spec.n_samples, len(gi)))
    return _mi_from_samples(delta @ gi, delta @ gj)


def mi_perturbed(model_i, model_j, x, spec, seed=0):
    """MI of the two models' logits under ``x + delta``, estimated through their correlation."""
    x = np.asarray(x, dtype=float)
    delta = spec.sigma * stream(seed, "mi").standard_normal((spec.n_samples, len(x)))
    pts = x + delta
    return _mi_from_samples(model_i.logit(pts), model_j.logit(pts))


# -- grids --------------------------------------------------------------------

@dataclass
class Grid:
    dims: tuple
    axis_i: np.ndarray
    axis_j: np.ndarray
    values: np.ndarray       # values[a, b] at (axis_i[a], axis_j[b])
    kind: str = "logit"
    n_samples: int = 0

    def to_csv(self, path, meta=None):
        with open(path, "w", newline="") as f:
            f.write(f"# dims: {self.dims[0]},{self.dims[1]}\n")
            f.write(f"# resolution: {len(self.axis_i)}x{len(self.axis_j)}\n")
            f.write(f"# value: {self.kind}\n")
            f.write(f"# projection_samples: {self.n_samples}\n")
            for k, v in (meta or {}).items():
                f.write(f"# {k}: {v}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["dim_i", "dim_j", "value"])
            for a, xi in enumerate(self.axis_i):
                for b, xj in enumerate(self.axis_j):
                    w.writerow([repr(float(xi)), repr(float(xj)), repr(float(self.values[a, b]))])


def read_grid_csv(path):
    meta, rows = {}, []
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip() and not line.startswith("dim_i"):
                rows.append([float(v) for v in line.split(",")])
    return meta, np.array(rows)


def grid_logits(model, domain, resolution, dims=(0, 1), n_samples=None, seed=0):
    """Model logits on a ``resolution x resolution`` lattice over two domain dimensions.

    For models with more than two inputs the other coordinates are drawn
    uniformly from the domain (``n_samples`` draws shared by every lattice
    point); probabilities are averaged and the mean is reported as a logit.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    i, j = dims
    D = domain.dim
    ai = np.linspace(domain.lower[i], domain.upper[i], resolution)
    aj = np.linspace(domain.lower[j], domain.upper[j], resolution)
    II, JJ = np.meshgrid(ai, aj, indexing="ij")
    if D == 2 and sorted(dims) == [0, 1]:
        pts = np.zeros((resolution * resolution, 2))
        pts[:, i] = II.ravel()
        pts[:, j] = JJ.ravel()
        return Grid((i, j), ai, aj, _model_logit(model, pts).reshape(resolution, resolution))
    if not n_samples:
        raise ValueError("projection sample count required")
    rest = domain.sample(stream(seed, "grid"), n_samples)
    out = np.empty(resolution * resolution)
    flat_i, flat_j = II.ravel(), JJ.ravel()
    for start in range(0, len(out), 64):
        stop = min(start + 64, len(out))
        pts = np.repeat(rest[None], stop - start, axis=0)
        pts[:, :, i] = flat_i[start:stop, None]
        pts[:, :, j] = flat_j[start:stop, None]
        p = _model_proba(model, pts.reshape(-1, D)).reshape(stop - start, n_samples)
        out[start:stop] = p.mean(axis=1)
    out = _logit(np.clip(out, 1e-12, 1 - 1e-12))
    return Grid((i, j), ai, aj, out.reshape(resolution, resolution), "logit_of_mean_probability",
                n_samples)


def _model_logit(model, X):
    if hasattr(model, "logit"):
        return model.logit(X)
    return _logit(np.clip(model.predict_proba(X), 1e-12, 1 - 1e-12))


def _model_proba(model, X):
    if hasattr(model, "logit"):
        return expit(model.logit(X))
    return model.predict_proba(X)


# -- reports ------------------------------------------------------------------

@dataclass
class EvaluationReport:
    rule_names: list
    agreement: list                  # M x K
    train_accuracy: list
    mean_cos2: list                  # M x M
    matching: list = None            # rule index per model, when M == K
    matched_agreement: list = None
    mi_check: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return len(self.agreement)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if not text_or_path.lstrip().startswith("{"):
            with open(text_or_path) as f:
                text = f.read()
        return cls.from_dict(json.loads(text))

    def rows(self, labels=None):
        """Flat rows ``(model, rule, agreement, matched)``."""
        labels = labels or [f"model {m}" for m in range(self.M)]
        out = []
        for m in range(self.M):
            for k, name in enumerate(self.rule_names):
                matched = self.matching is not None and self.matching[m] == k
                out.append((labels[m], name, self.agreement[m][k], matched))
        return out

    def to_csv(self, path, labels=None):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "rule", "agreement", "matched"])
            for label, rule, acc, matched in self.rows(labels):
                w.writerow([label, rule, repr(acc), int(matched)])


def build_report(models, rules, dataset, domain=None, spec=None, seed=0,
                 n_eval=DEFAULT_EVAL_SAMPLES, n_mi_points=3, eps_stab=1e-6):
    """Evaluate an ensemble against the ground-truth rules of its training data."""
    domain = domain or dataset.domain
    spec = spec or PerturbationSpec.for_domain(domain, n_samples=20_000)
    for m in models:
        if m.input_dim != dataset.dim or domain.dim != dataset.dim:
            raise ValueError(f"model expects {m.input_dim} inputs, data has {dataset.dim}")
    A = agreement_matrix(models, rules, domain, n_eval, seed)
    matching = matched = None
    if len(models) == len(rules):
        perm, _ = match_models(A)
        matching = list(perm)
        matched = [float(A[m, perm[m]]) for m in range(len(models))]
    train_acc = [float(np.mean(m.predict(dataset.X) == dataset.Y)) for m in models]
    C = cos2_stats(models, dataset.X, eps_stab) if models and hasattr(models[0], "logit") else None
    mi = []
    if len(models) >= 2 and n_mi_points:
        pick = stream(seed, "mi", "points").choice(dataset.n, size=min(n_mi_points, dataset.n),
                                                    replace=False)
        for p in np.sort(pick):
            x = dataset.X[p]
            grads = [mlp_input_gradient(m, x) for m in models]
            for a, b in itertools.combinations(range(len(models)), 2):
                c2 = float(cos_squared(grads[a], grads[b], eps_stab))
                mi.append({
                    "point": int(p), "models": [a, b], "cos2": c2,
                    "formula_mi": mi_formula(c2),
                    "empirical_mi": mi_perturbed(models[a], models[b], x, spec, seed),
                })
    meta = {"n_eval": int(n_eval), "seed": int(seed), "domain": domain.to_dict(),
            "sigma": spec.sigma, "mi_samples": spec.n_samples}
    return EvaluationReport(
        rule_names=[r.name for r in rules],
        agreement=A.tolist(),
        train_accuracy=train_acc,
        mean_cos2=C.tolist() if C is not None else [],
        matching=matching,
        matched_agreement=matched,
        mi_check=mi,
        meta=meta,
    )


def comparison_rows(normal, diverse):
    """Per-rule agreement rows for the normal model and each matched diverse model.

    Diverse models are listed in rule order when a matching exists.
    """
    rows = [("Normal", normal.train_accuracy[0], list(normal.agreement[0]))]
    order = range(diverse.M)
    if diverse.matching is not None:
        order = sorted(range(diverse.M), key=lambda m: diverse.matching[m])
    for i, m in enumerate(order, start=1):
        rows.append((f"Diverse {i}", diverse.train_accuracy[m], list(diverse.agreement[m])))
    return rows


def markdown_table(header, rows, fmt="{:.3f}"):
    def cell(v):
        return fmt.format(v) if isinstance(v, float) else str(v)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(cell(v) for v in r) + " |")
    return "\n".join(lines)
