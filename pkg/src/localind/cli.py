"""Command-line entry point: ``localind gen-data | train | eval | reproduce``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure during training, 4 model/dataset shape mismatch.
"""
import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .datasets import (DatasetError, builtin_experiment, gen_confounded, load_csv, save_csv,
                       save_provenance, sidecar_path)
from .evaluation import PerturbationSpec, build_report, comparison_rows, grid_logits, markdown_table
from .models import load_model, save_model
from .training import NumericalError, m_oversize_diagnostic, train_ensemble

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_SHAPE = 0, 2, 3, 4

log = logging.getLogger("localind")


class ShapeMismatch(Exception):
    pass


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# -- commands -----------------------------------------------------------------

def load_dataset(cfg):
    """The training set named by ``cfg`` plus its rules (empty for CSV input)."""
    if cfg.experiment == "csv":
        return load_csv(cfg.csv), []
    rules, domain = builtin_experiment(cfg.experiment)
    return gen_confounded(rules, domain, cfg.n, cfg.seed), rules


def cmd_gen_data(cfg):
    out = cfg.run_dir("data")
    os.makedirs(out, exist_ok=True)
    ds, _ = load_dataset(cfg)
    path = os.path.join(out, "data.csv")
    save_csv(ds, path)
    prov = dict(ds.provenance)
    prov.pop("path", None)
    ds.provenance = prov
    save_provenance(ds, sidecar_path(path))
    drawn = prov.get("drawn", ds.n)
    print(f"kept {ds.n} of {drawn} draws ({drawn - ds.n} rejected), D={ds.dim}")
    print(out)
    return out


def cmd_train(cfg):
    out = cfg.run_dir("train")
    os.makedirs(out, exist_ok=True)
    ds, _ = load_dataset(cfg)
    ens = cfg.ensemble()
    data_path = os.path.join(out, "data.csv")
    save_csv(ds, data_path)
    _write_json(sidecar_path(data_path), {"domain": ds.domain.to_dict(),
                                          "experiment": cfg.experiment, "seed": cfg.seed})
    models, history = train_ensemble(ds, ens)
    for m, params in enumerate(models):
        save_model(params, os.path.join(out, f"model_{m}.json"))
    history.to_csv(os.path.join(out, "history.csv"))
    flag, diag = m_oversize_diagnostic(history, ens, ds.dim)
    _write_json(os.path.join(out, "history.json"), {
        "config": ens.to_dict(),
        "experiment": cfg.experiment,
        "baseline": cfg.baseline,
        "initial": history.initial,
        "m_oversize_diagnostic": diag,
    })
    print(diag["message"])
    print(out)
    return out


def _load_models(path):
    files = sorted(glob.glob(os.path.join(path, "model_*.json")),
                   key=lambda p: int(os.path.basename(p)[6:-5]))
    if not files:
        raise FileNotFoundError(f"no model_*.json files in {path}")
    return [load_model(p) for p in files]


def _write_grids(models, domain, rules, cfg, out_dir, prefix, labels=None):
    os.makedirs(out_dir, exist_ok=True)
    labels = labels or [f"model_{m}" for m in range(len(models))]
    if domain.dim == 2:
        pairs = [(0, 1)]
    elif rules:
        pairs = [tuple(r.dims) for r in rules]
    else:
        pairs = [(0, 1)]
    paths = []
    for label, model in zip(labels, models):
        for dims in pairs:
            grid = grid_logits(model, domain, cfg.grid_resolution, dims=dims,
                               n_samples=None if domain.dim == 2 else cfg.projection_samples,
                               seed=cfg.seed)
            suffix = "" if len(pairs) == 1 else f"_dims{dims[0]}{dims[1]}"
            path = os.path.join(out_dir, f"{prefix}{label}{suffix}.csv")
            grid.to_csv(path, meta={"model": label})
            paths.append(path)
    return paths


def cmd_eval(cfg, models_dir=None, baseline_dir=None):
    models_dir = models_dir or cfg.run_dir("train")
    if not os.path.isdir(models_dir):
        raise FileNotFoundError(f"no trained models at {models_dir}; run 'train' first")
    models = _load_models(models_dir)
    data_path = os.path.join(models_dir, "data.csv")
    ds = load_csv(data_path) if os.path.exists(data_path) else load_dataset(cfg)[0]
    rules = [] if cfg.experiment == "csv" else builtin_experiment(cfg.experiment)[0]
    if rules and max(max(r.dims) for r in rules) >= ds.dim:
        raise ShapeMismatch(f"{cfg.experiment} rules need more than the dataset's {ds.dim} inputs")
    for m in models:
        if m.input_dim != ds.dim:
            raise ShapeMismatch(f"model expects {m.input_dim} inputs but the dataset has {ds.dim}")
    out = cfg.run_dir("eval")
    os.makedirs(out, exist_ok=True)
    spec = PerturbationSpec.for_domain(ds.domain, n_samples=20_000)
    report = build_report(models, rules, ds, ds.domain, spec, cfg.seed, cfg.n_eval)
    report.to_json(os.path.join(out, "report.json"))
    report.to_csv(os.path.join(out, "report.csv"))
    _write_grids(models, ds.domain, rules, cfg, os.path.join(out, "grids"), "")

    if baseline_dir is None:
        baseline_dir = find_baseline(cfg, data_path)
    if rules and baseline_dir and os.path.isdir(baseline_dir) and baseline_dir != models_dir:
        normal = _load_models(baseline_dir)[:1]
        normal_report = build_report(normal, rules, ds, ds.domain, spec, cfg.seed, cfg.n_eval)
        rows = comparison_rows(normal_report, report)
        header = ["Model", "Train"] + [f"vs {r.name}" for r in rules]
        table = markdown_table(header, [(name, tr, *acc) for name, tr, acc in rows])
        with open(os.path.join(out, "comparison.md"), "w") as f:
            f.write(table + "\n")
        print(table)
    print(out)
    return out


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def find_baseline(cfg, data_path):
    """A baseline train run on the same training data, or ``None``.

    Among ``train-<experiment>-baseline-*`` runs whose ``data.csv`` is
    byte-identical to ``data_path``, the run with the preset baseline
    settings wins, then the first by name.
    """
    root = cfg.output_root()
    if not os.path.exists(data_path) or not os.path.isdir(root):
        return None
    data = _read_bytes(data_path)
    found = []
    for name in sorted(os.listdir(root)):
        run = os.path.join(root, name)
        other = os.path.join(run, "data.csv")
        if name.startswith(f"train-{cfg.experiment}-baseline-") and os.path.exists(other) \
                and _read_bytes(other) == data:
            found.append(run)
    if not found:
        return None
    preset = cfgmod.resolve(flag_values={**_cfg_flags(cfg), "baseline": True}).run_dir("train")
    return preset if preset in found else found[0]


def _cfg_flags(cfg):
    keys = ("experiment", "n", "seed", "csv", "out", "hidden", "batch_size", "eps_stab",
            "accuracy_epsilon", "n_eval", "grid_resolution", "projection_samples")
    return {k: getattr(cfg, k) for k in keys}


# -- argument parsing ---------------------------------------------------------

def _add_common(p, train=True, evaluation=False):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--experiment", choices=cfgmod.EXPERIMENTS)
    p.add_argument("--csv", help="dataset CSV for --experiment csv")
    p.add_argument("--n", type=int, help="training-set size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output root (default ${cfgmod.OUTPUT_ENV} or ./runs)")
    if train:
        p.add_argument("--M", type=int, help="ensemble size")
        p.add_argument("--lambda", dest="lam", type=float, help="penalty strength")
        p.add_argument("--eps-stab", type=float)
        p.add_argument("--accuracy-epsilon", type=float)
        p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--hidden", help="comma-separated hidden widths, e.g. 256,256")
        p.add_argument("--activation", choices=("softplus", "relu"))
        p.add_argument("--baseline", action="store_const", const=True,
                       help="train one model normally (M=1, lambda=0)")
    if evaluation:
        p.add_argument("--n-eval", type=int)
        p.add_argument("--grid-resolution", type=int)
        p.add_argument("--projection-samples", type=int)
        p.add_argument("--models", help="directory with model_*.json (default: matching train run)")
        p.add_argument("--baseline-models", help="directory with a normally trained model")


def build_parser():
    parser = argparse.ArgumentParser(prog="localind",
                                     description="Local independence training of diverse ensembles")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("gen-data", help="generate a confounded training set"), train=False)
    _add_common(sub.add_parser("train", help="train an ensemble or a baseline model"))
    _add_common(sub.add_parser("eval", help="evaluate trained models"), evaluation=True)
    rp = sub.add_parser("reproduce", help="rerun a figure or table end to end")
    rp.add_argument("target", choices=("fig3", "fig5", "table1"))
    rp.add_argument("--profile", choices=("full", "ci"), default="full",
                    help="full = 256x256 networks; ci = 64x64 networks")
    rp.add_argument("--seeds", help="comma-separated seeds (default: the shipped seeds)")
    rp.add_argument("--out", help=f"output root (default ${cfgmod.OUTPUT_ENV} or ./runs)")
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "models", "baseline_models", "target", "profile",
               "seeds"}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "reproduce":
            from .reproduce import reproduce
            seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
            out = reproduce(args.target, profile=args.profile, seeds=seeds, out=args.out)
            print(out)
            return EXIT_OK
        file_values = cfgmod.read_config_file(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        cfg = cfgmod.resolve(file_values, flags)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        else:
            cmd_eval(cfg, args.models, args.baseline_models)
    except (cfgmod.ConfigError, FileNotFoundError) as e:
        print(f"localind: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as e:
        print(f"localind: dataset error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"localind: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ShapeMismatch as e:
        print(f"localind: shape mismatch: {e}", file=sys.stderr)
        return EXIT_SHAPE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
