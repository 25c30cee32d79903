"""
Non-neural baselines on the 8D confounded set
=============================================

Trees, forests and logistic regression fit the training data almost
perfectly and still track none of the four rules on their own.
"""
import numpy as np

from localind.datasets import DOMAIN_8D, builtin_8d_case, gen_confounded
from localind.evaluation import agreement_matrix, markdown_table
from localind.models import forest_fit, tree_fit
from localind.training import EnsembleConfig, train_ensemble

rules = builtin_8d_case()
ds = gen_confounded(rules, DOMAIN_8D, 5000, seed=1)

(logreg,), _ = train_ensemble(ds, EnsembleConfig(M=1, lam=0.0, hidden=(), epochs=100, seed=1))
models = [("Logistic Reg.", logreg), ("Decision Tree", tree_fit(ds.X, ds.Y)),
          ("Rand. Forest", forest_fit(ds.X, ds.Y, n_trees=20, seed=1))]

A = agreement_matrix([m for _, m in models], rules, DOMAIN_8D, seed=1)
rows = [(name, float(np.mean(m.predict(ds.X) == ds.Y)), *map(float, acc))
        for (name, m), acc in zip(models, A)]
print(markdown_table(["Model", "Train"] + [r.name for r in rules], rows, fmt="{:.2f}"))
