"""Confounded synthetic datasets, per-rule test sets and CSV ingestion.

A *confounded* training set keeps only the points of a box where several
ground-truth rules give the same label, so each rule alone classifies the
training data perfectly while the rules disagree elsewhere in the box.
"""
import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .seeding import stream

PROBE_DRAWS = 10**6
MIN_ACCEPTANCE = 1e-4


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("lower must be strictly below upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, low, high, dim):
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def width(self):
        return self.upper - self.lower

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def contains(self, X):
        X = np.asarray(X)
        return np.all((X >= self.lower) & (X <= self.upper), axis=-1)

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower"], d["upper"])


@dataclass(frozen=True, eq=False)
class GroundTruthRule:
    """A closed-form labeling function; label is 1 where ``fn(X) > 0``.

    ``fn`` takes an ``(N, D)`` array and must only read the columns in ``dims``.
    """
    name: str
    dims: tuple
    fn: object
    formula: str = ""

    def __call__(self, X):
        return self.fn(np.atleast_2d(np.asarray(X, dtype=float)))

    def value(self, X):
        return self(X)

    def label(self, X):
        return (self(X) > 0).astype(int)

    def describe(self):
        return {"name": self.name, "dims": list(self.dims), "formula": self.formula}


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    domain: DomainBox
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y).astype(int)
        if self.X.ndim != 2 or len(self.Y) != len(self.X):
            raise DatasetError("X must be N x D with one label per row")
        if not np.all((self.Y == 0) | (self.Y == 1)):
            raise DatasetError("labels must be 0 or 1")

    @property
    def n(self):
        return len(self.X)

    @property
    def dim(self):
        return self.X.shape[1]


# -- built-in rules -----------------------------------------------------------

SQRT3_2 = math.sqrt(3) / 2


def builtin_2d_cases():
    """The three rule pairs over [-10, 10]^2, keyed ``case1`` .. ``case3``."""
    return {
        "case1": [
            GroundTruthRule("x", (0, 1), lambda X: X[:, 0], "x"),
            GroundTruthRule("y", (0, 1), lambda X: X[:, 1], "y"),
        ],
        "case2": [
            GroundTruthRule("rot60_a", (0, 1), lambda X: 0.5 * X[:, 0] + SQRT3_2 * X[:, 1],
                            "x/2 + sqrt(3)/2 y"),
            GroundTruthRule("rot60_b", (0, 1), lambda X: -SQRT3_2 * X[:, 0] + 0.5 * X[:, 1],
                            "-sqrt(3)/2 x + y/2"),
        ],
        "case3": [
            GroundTruthRule("2xy", (0, 1), lambda X: 2 * X[:, 0] * X[:, 1], "2xy"),
            GroundTruthRule("x2-y2", (0, 1), lambda X: X[:, 0] ** 2 - X[:, 1] ** 2, "x^2 - y^2"),
        ],
    }


def builtin_8d_case():
    """Four rules on the disjoint axis pairs (0,1), (2,3), (4,5), (6,7) of [-20, 20]^8."""
    return [
        GroundTruthRule("linear", (0, 1), lambda X: X[:, 0] + X[:, 1], "x0 + x1"),
        GroundTruthRule("product", (2, 3), lambda X: X[:, 2] * X[:, 3], "x2 * x3"),
        GroundTruthRule("circle", (4, 5), lambda X: X[:, 4] ** 2 + X[:, 5] ** 2 - 200,
                        "x4^2 + x5^2 - 200"),
        GroundTruthRule("cubic", (6, 7), lambda X: X[:, 6] - X[:, 7] ** 3 / 100,
                        "x6 - x7^3 / 100"),
    ]


DOMAIN_2D = DomainBox.cube(-10, 10, 2)
DOMAIN_8D = DomainBox.cube(-20, 20, 8)


def builtin_experiment(name):
    """``(rules, domain)`` for ``case1``/``case2``/``case3``/``toy8d``."""
    if name == "toy8d":
        return builtin_8d_case(), DOMAIN_8D
    cases = builtin_2d_cases()
    if name not in cases:
        raise KeyError(f"unknown experiment {name!r}")
    return cases[name], DOMAIN_2D


# -- generators ---------------------------------------------------------------

def agreement_mask(rules, X):
    """Rows where all rule values are nonzero and share one sign, plus that sign as label."""
    values = np.column_stack([r(X) for r in rules])
    pos = np.all(values > 0, axis=1)
    neg = np.all(values < 0, axis=1)
    return pos | neg, pos.astype(int)


def acceptance_rate(rules, domain, seed, draws=PROBE_DRAWS):
    rng = stream(seed, "probe")
    done, kept = 0, 0
    while done < draws:
        m = min(200_000, draws - done)
        keep, _ = agreement_mask(rules, domain.sample(rng, m))
        kept += int(keep.sum())
        done += m
    return kept / draws


def gen_confounded(rules, domain, n, seed, chunk=65536):
    """Rejection-sample ``n`` uniform points of ``domain`` on which all rules agree."""
    if len(rules) < 2:
        raise DatasetError("a confounded dataset needs at least two rules")
    if n < 1:
        raise DatasetError("n must be positive")
    rate = acceptance_rate(rules, domain, seed)
    if rate < MIN_ACCEPTANCE:
        raise DatasetError(f"rules agree on {rate:.2e} of the domain; rule set is degenerate")
    rng = stream(seed, "data")
    xs, ys = [], []
    have = drawn = 0
    while have < n:
        X = domain.sample(rng, chunk)
        keep, y = agreement_mask(rules, X)
        hits = np.flatnonzero(keep)
        if have + len(hits) >= n:
            # count draws only up to the n-th accepted point
            drawn += hits[n - have - 1] + 1
        else:
            drawn += chunk
        xs.append(X[keep])
        ys.append(y[keep])
        have += len(hits)
    X = np.concatenate(xs)[:n]
    Y = np.concatenate(ys)[:n]
    prov = {
        "generator": "confounded",
        "rules": [r.describe() for r in rules],
        "domain": domain.to_dict(),
        "seed": int(seed),
        "n": int(n),
        "drawn": int(drawn),
        "acceptance_rate": rate,
    }
    return Dataset(X, Y, domain, prov)


def gen_rule_testset(rule, domain, n, seed, stream_name=("test",)):
    """``n`` uniform points over the whole domain labeled by ``rule`` alone."""
    rng = stream(seed, *stream_name)
    X = domain.sample(rng, n)
    prov = {
        "generator": "rule_testset",
        "rules": [rule.describe()],
        "domain": domain.to_dict(),
        "seed": int(seed),
        "n": int(n),
    }
    return Dataset(X, rule.label(X), domain, prov)


# -- CSV ----------------------------------------------------------------------

def save_csv(dataset, path):
    d = dataset.dim
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["y"])
        for row, y in zip(dataset.X, dataset.Y):
            w.writerow([format(v, ".17g") for v in row] + [int(y)])


def save_provenance(dataset, path):
    with open(path, "w") as f:
        json.dump(dataset.provenance, f, indent=2, sort_keys=True)


def sidecar_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def load_csv(path, domain=None):
    """Read a dataset written by :func:`save_csv` or any file with header ``x0,...,y``.

    The domain comes from ``domain``, else a provenance sidecar next to the
    file, else the bounding box of the data.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header != [f"x{i}" for i in range(d)] + ["y"]:
        raise DatasetError(f"{path}: line 1: header must be x0,...,x{{D-1}},y")
    X, Y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise DatasetError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            x = [float(v) for v in row[:-1]]
            yv = float(row[-1])
        except ValueError:
            raise DatasetError(f"{path}: line {lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in x):
            raise DatasetError(f"{path}: line {lineno}: non-finite feature")
        if yv not in (0.0, 1.0):
            raise DatasetError(f"{path}: line {lineno}: label {row[-1]!r} is not 0 or 1")
        X.append(x)
        Y.append(int(yv))
    if not X:
        raise DatasetError(f"{path}: no data rows")
    X = np.array(X)
    Y = np.array(Y)
    prov = {"generator": "csv", "path": os.path.abspath(path)}
    side = sidecar_path(path)
    if domain is None and os.path.exists(side):
        with open(side) as f:
            meta = json.load(f)
        if "domain" in meta:
            domain = DomainBox.from_dict(meta["domain"])
            prov = meta
    if domain is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        domain = DomainBox(lo, hi)
    return Dataset(X, Y, domain, prov)
