"""End-to-end reruns of the 2D comparison, the 8D comparison and the 8D baseline table.

Each target writes a self-contained directory (models, histories, reports,
grids, ``summary.md``/``summary.json``) whose name hashes the profile and
seeds, and whose contents depend only on them.
"""
import json
import os

import numpy as np

from . import config as cfgmod
from .datasets import builtin_experiment, gen_confounded, save_csv
from .evaluation import (PerturbationSpec, agreement_matrix, build_report, comparison_rows,
                         grid_logits, markdown_table)
from .models import forest_fit, save_model, tree_fit
from .training import EnsembleConfig, m_oversize_diagnostic, train_ensemble

SHIPPED_SEEDS = (1,)
REFERENCE_SEEDS = (1, 2, 3, 4, 5)

PROFILES = {
    "full": {"hidden": (256, 256)},
    "ci": {"hidden": (64, 64)},
}

TABLE1_LOGREG_EPOCHS = 100
TABLE1_FOREST_TREES = 100


def experiment_config(experiment, seed, profile="full", baseline=False, **overrides):
    """The shipped :class:`EnsembleConfig` for one run of a built-in experiment."""
    flags = {"experiment": experiment, "seed": seed, "baseline": baseline,
             "hidden": PROFILES[profile]["hidden"]}
    flags.update(overrides)
    return cfgmod.resolve(flag_values=flags).ensemble()


def run_experiment(experiment, seed, profile="full", baseline=False, **overrides):
    """Generate the training set and train; returns ``(dataset, rules, models, history, config)``."""
    rules, domain = builtin_experiment(experiment)
    n = cfgmod.PRESETS[experiment]["n"]
    ds = gen_confounded(rules, domain, n, seed)
    ens = experiment_config(experiment, seed, profile, baseline, **overrides)
    models, history = train_ensemble(ds, ens)
    return ds, rules, models, history, ens


def _dump(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _save_run(run_dir, models, history, ens):
    dim = models[0].input_dim
    os.makedirs(run_dir, exist_ok=True)
    for m, p in enumerate(models):
        save_model(p, os.path.join(run_dir, f"model_{m}.json"))
    history.to_csv(os.path.join(run_dir, "history.csv"))
    _, diag = m_oversize_diagnostic(history, ens, dim)
    _dump(os.path.join(run_dir, "history.json"),
          {"config": ens.to_dict(), "initial": history.initial, "m_oversize_diagnostic": diag})


def _root(target, profile, seeds, out):
    base = out or os.environ.get(cfgmod.OUTPUT_ENV) or cfgmod.DEFAULT_OUTPUT
    key = {"target": target, "profile": PROFILES[profile], "seeds": list(seeds),
           "presets": cfgmod.PRESETS}
    return os.path.join(base, f"reproduce-{target}-{profile}-{cfgmod.config_hash(key)}")


def _diverse_order(report):
    if report.matching is None:
        return list(range(report.M))
    return sorted(range(report.M), key=lambda m: report.matching[m])


def reproduce_fig3(profile="full", seeds=SHIPPED_SEEDS, out=None):
    root = _root("fig3", profile, seeds, out)
    os.makedirs(os.path.join(root, "grids"), exist_ok=True)
    sections, summary = [], {}
    for case in ("case1", "case2", "case3"):
        for seed in seeds:
            tag = f"{case}_seed{seed}"
            ds, rules, div, h_div, e_div = run_experiment(case, seed, profile)
            _, _, norm, h_norm, e_norm = run_experiment(case, seed, profile, baseline=True)
            run = os.path.join(root, tag)
            os.makedirs(run, exist_ok=True)
            save_csv(ds, os.path.join(run, "data.csv"))
            _save_run(os.path.join(run, "diverse"), div, h_div, e_div)
            _save_run(os.path.join(run, "normal"), norm, h_norm, e_norm)
            spec = PerturbationSpec.for_domain(ds.domain, n_samples=20_000)
            r_div = build_report(div, rules, ds, ds.domain, spec, seed)
            r_norm = build_report(norm, rules, ds, ds.domain, spec, seed)
            r_div.to_json(os.path.join(run, "report_diverse.json"))
            r_norm.to_json(os.path.join(run, "report_normal.json"))
            for i, m in enumerate(_diverse_order(r_div), start=1):
                grid = grid_logits(div[m], ds.domain, cfgmod.PRESETS[case]["grid_resolution"])
                grid.to_csv(os.path.join(root, "grids", f"{tag}_diverse{i}.csv"),
                            meta={"case": case, "model": f"Diverse {i}"})
            rows = comparison_rows(r_norm, r_div)
            header = ["Model", "Train"] + [f"vs f{k + 1} ({r.name})" for k, r in enumerate(rules)]
            sections.append(f"### {case}, seed {seed}\n\n"
                            + markdown_table(header, [(n, t, *a) for n, t, a in rows]))
            summary[tag] = {
                "normal_agreement": r_norm.agreement[0],
                "diverse_matched_agreement": r_div.matched_agreement,
                "diverse_matching": r_div.matching,
                "diverse_mean_cos2_train": r_div.mean_cos2[0][1],
                "train_accuracy": {"normal": r_norm.train_accuracy, "diverse": r_div.train_accuracy},
            }
    _finish(root, "Normal vs. local independence training on the 2D datasets", sections, summary)
    return root


def reproduce_fig5(profile="full", seeds=SHIPPED_SEEDS, out=None):
    root = _root("fig5", profile, seeds, out)
    os.makedirs(os.path.join(root, "grids"), exist_ok=True)
    sections, summary = [], {}
    res = cfgmod.PRESETS["toy8d"]["grid_resolution"]
    for seed in seeds:
        tag = f"toy8d_seed{seed}"
        ds, rules, div, h_div, e_div = run_experiment("toy8d", seed, profile)
        _, _, norm, h_norm, e_norm = run_experiment("toy8d", seed, profile, baseline=True)
        run = os.path.join(root, tag)
        _save_run(os.path.join(run, "diverse"), div, h_div, e_div)
        _save_run(os.path.join(run, "normal"), norm, h_norm, e_norm)
        spec = PerturbationSpec.for_domain(ds.domain, n_samples=20_000)
        r_div = build_report(div, rules, ds, ds.domain, spec, seed)
        r_norm = build_report(norm, rules, ds, ds.domain, spec, seed)
        r_div.to_json(os.path.join(run, "report_diverse.json"))
        r_norm.to_json(os.path.join(run, "report_normal.json"))
        labelled = [("normal", norm[0])] + [(f"diverse{i}", div[m])
                                            for i, m in enumerate(_diverse_order(r_div), start=1)]
        for label, model in labelled:
            for rule in rules:
                grid = grid_logits(model, ds.domain, res, dims=rule.dims,
                                   n_samples=256, seed=seed)
                name = f"{tag}_{label}_dims{rule.dims[0]}{rule.dims[1]}.csv"
                grid.to_csv(os.path.join(root, "grids", name),
                            meta={"model": label, "rule": rule.name})
        rows = comparison_rows(r_norm, r_div)
        header = ["Model", "Train"] + [f"Test {k + 1} ({r.name})" for k, r in enumerate(rules)]
        sections.append(f"### seed {seed}\n\n"
                        + markdown_table(header, [(n, t, *a) for n, t, a in rows]))
        summary[tag] = {
            "normal_agreement": r_norm.agreement[0],
            "diverse_matched_agreement": r_div.matched_agreement,
            "diverse_matching": r_div.matching,
            "mean_matched_agreement": float(np.mean(r_div.matched_agreement)),
            "train_accuracy": {"normal": r_norm.train_accuracy, "diverse": r_div.train_accuracy},
        }
    _finish(root, "8D ensemble: agreement with each rule, normal vs. diverse", sections, summary)
    return root


def table1_models(ds, seed):
    """Fit the three non-neural baselines on a dataset; returns ``[(name, model)]``."""
    ens = EnsembleConfig(M=1, lam=0.0, hidden=(), epochs=TABLE1_LOGREG_EPOCHS, seed=seed,
                         learning_rate=1e-3, activation="softplus")
    (logreg,), _ = train_ensemble(ds, ens)
    tree = tree_fit(ds.X, ds.Y)
    forest = forest_fit(ds.X, ds.Y, n_trees=TABLE1_FOREST_TREES, seed=seed)
    return [("Logistic Reg.", logreg), ("Decision Tree", tree), ("Rand. Forest", forest)]


def reproduce_table1(profile="full", seeds=SHIPPED_SEEDS, out=None):
    root = _root("table1", profile, seeds, out)
    os.makedirs(root, exist_ok=True)
    rules, domain = builtin_experiment("toy8d")
    n = cfgmod.PRESETS["toy8d"]["n"]
    sections, summary = [], {}
    for seed in seeds:
        ds = gen_confounded(rules, domain, n, seed)
        fitted = table1_models(ds, seed)
        A = agreement_matrix([m for _, m in fitted], rules, domain, seed=seed)
        rows, rec = [], {}
        for (name, model), acc in zip(fitted, A):
            train = float(np.mean(model.predict(ds.X) == ds.Y))
            rows.append((name, train, *[float(a) for a in acc]))
            rec[name] = {"train": train, "test": [float(a) for a in acc]}
        save_model(fitted[0][1], os.path.join(root, f"logreg_seed{seed}.json"))
        header = ["Model", "Train"] + [f"Test {k + 1} ({r.name})" for k, r in enumerate(rules)]
        sections.append(f"### seed {seed}\n\n" + markdown_table(header, rows, fmt="{:.2f}"))
        summary[f"toy8d_seed{seed}"] = rec
    _finish(root, "8D baselines: training accuracy and agreement with each rule", sections, summary)
    return root


def _finish(root, title, sections, summary):
    with open(os.path.join(root, "summary.md"), "w") as f:
        f.write(f"## {title}\n\n" + "\n\n".join(sections) + "\n")
    _dump(os.path.join(root, "summary.json"), summary)


TARGETS = {"fig3": reproduce_fig3, "fig5": reproduce_fig5, "table1": reproduce_table1}


def reproduce(target, profile="full", seeds=None, out=None):
    if target not in TARGETS:
        raise cfgmod.ConfigError(f"unknown target {target!r}")
    if profile not in PROFILES:
        raise cfgmod.ConfigError(f"unknown profile {profile!r}")
    return TARGETS[target](profile, tuple(seeds or SHIPPED_SEEDS), out)
