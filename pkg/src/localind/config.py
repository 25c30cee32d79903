"""Experiment configuration: presets, config files and run directories.

A config file is plain ``key = value`` text, one key per line, ``#`` starts
a comment.  Keys are the long CLI flag names with dashes or underscores,
e.g.::

    experiment = case1
    seed = 1
    M = 2
    lambda = 0.1
    hidden = 256,256

Values resolve as: CLI flag, then config file, then the experiment preset,
then the package default.
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace

from .training import EnsembleConfig

EXPERIMENTS = ("case1", "case2", "case3", "toy8d", "csv")
OUTPUT_ENV = "LOCALIND_OUTPUT_DIR"
DEFAULT_OUTPUT = "runs"


class ConfigError(ValueError):
    pass


# Calibrated defaults.  ``baseline_learning_rate`` applies to normal (M=1) training.
PRESETS = {
    "case1": dict(n=2000, M=2, activation="softplus", learning_rate=1e-3, epochs=300,
                  baseline_epochs=100, baseline_learning_rate=1e-3, grid_resolution=100),
    "case2": dict(n=2000, M=2, activation="softplus", learning_rate=1e-3, epochs=300,
                  baseline_epochs=100, baseline_learning_rate=1e-3, grid_resolution=100),
    "case3": dict(n=2000, M=2, activation="softplus", learning_rate=1e-3, epochs=300,
                  baseline_epochs=100, baseline_learning_rate=1e-3, grid_resolution=100),
    "toy8d": dict(n=10000, M=4, activation="relu", learning_rate=1e-4, epochs=300,
                  baseline_epochs=60, baseline_learning_rate=1e-3, grid_resolution=25),
    "csv": dict(n=0, M=2, activation="softplus", learning_rate=1e-3, epochs=100,
                baseline_epochs=100, baseline_learning_rate=1e-3, grid_resolution=50),
}


@dataclass
class ExperimentConfig:
    experiment: str = "case1"
    n: int = 2000
    seed: int = 0
    csv: str = None
    baseline: bool = False
    M: int = 2
    lam: float = 0.1
    eps_stab: float = 1e-6
    accuracy_epsilon: float = 0.05
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    hidden: tuple = (256, 256)
    activation: str = "softplus"
    n_eval: int = 10_000
    grid_resolution: int = 100
    projection_samples: int = 256
    out: str = None

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.experiment == "csv":
            if not self.csv:
                raise ConfigError("experiment 'csv' needs --csv PATH")
            if not os.path.exists(self.csv):
                raise ConfigError(f"csv file {self.csv!r} does not exist")
        elif self.n < 1:
            raise ConfigError("n must be positive")
        if self.grid_resolution < 2:
            raise ConfigError("grid resolution must be >= 2")
        try:
            self.ensemble()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self

    def ensemble(self):
        return EnsembleConfig(
            M=self.M, lam=self.lam, eps_stab=self.eps_stab,
            accuracy_epsilon=self.accuracy_epsilon, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            hidden=self.hidden, activation=self.activation,
        )

    def data_key(self):
        return {"experiment": self.experiment, "n": self.n, "seed": self.seed,
                "csv": os.path.abspath(self.csv) if self.csv else None}

    def train_key(self):
        d = self.data_key()
        d.update(self.ensemble().to_dict())
        return d

    def eval_key(self):
        d = self.train_key()
        d.update(n_eval=self.n_eval, grid_resolution=self.grid_resolution,
                 projection_samples=self.projection_samples)
        return d

    def output_root(self):
        return self.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT

    def run_dir(self, command):
        key = {"data": self.data_key, "train": self.train_key, "eval": self.eval_key}[command]()
        tag = "baseline" if self.baseline and command != "data" else self.experiment
        name = f"{command}-{self.experiment}" + ("-baseline" if tag == "baseline" else "")
        return os.path.join(self.output_root(), f"{name}-{config_hash(key)}")


def config_hash(obj):
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


_ALIASES = {"lambda": "lam", "lr": "learning_rate", "grid_res": "grid_resolution"}


def normalize_key(key):
    key = key.strip().replace("-", "_")
    return _ALIASES.get(key, key)


def parse_config_text(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[normalize_key(key)] = value.strip()
    return out


def read_config_file(path):
    with open(path) as f:
        return parse_config_text(f.read(), path)


def _coerce(name, value):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    if value is None or not isinstance(value, str):
        return value
    kind = types[name]
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is tuple:
            return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {name}") from None
    return value


def resolve(file_values=None, flag_values=None):
    """Merge config-file values and CLI flags over the experiment preset."""
    file_values = {normalize_key(k): v for k, v in (file_values or {}).items()}
    flag_values = {normalize_key(k): v for k, v in (flag_values or {}).items() if v is not None}
    merged = {}
    for src in (file_values, flag_values):
        for k, v in src.items():
            merged[k] = _coerce(k, v)
    experiment = merged.get("experiment", "case1")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    preset = dict(PRESETS[experiment])
    baseline = merged.get("baseline", False)
    base_epochs = preset.pop("baseline_epochs")
    base_lr = preset.pop("baseline_learning_rate")
    if baseline:
        preset.update(M=1, lam=0.0, epochs=base_epochs, learning_rate=base_lr)
    cfg = replace(ExperimentConfig(), **preset)
    cfg = replace(cfg, **merged)
    if baseline:
        # a baseline is a single normally trained model whatever M/lambda say
        cfg = replace(cfg, M=1, lam=0.0)
    return cfg.validate()
