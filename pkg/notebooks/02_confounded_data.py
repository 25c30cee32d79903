"""
Confounded training sets
========================

Every rule labels the training points identically; off the training
support the rules disagree.
"""
import os
import tempfile

import numpy as np

from localind.datasets import (DOMAIN_2D, DOMAIN_8D, acceptance_rate, builtin_2d_cases,
                               builtin_8d_case, gen_confounded, gen_rule_testset, load_csv,
                               save_csv)

cases = builtin_2d_cases()
for name, rules in cases.items():
    ds = gen_confounded(rules, DOMAIN_2D, 2000, seed=1)
    print(name, [r.formula for r in rules], "kept %.3f of draws" % (ds.n / ds.provenance["drawn"]),
          "label balance %.3f" % ds.Y.mean())

# the four 8D rules live on disjoint axis pairs
rules8 = builtin_8d_case()
for r in rules8:
    print(r.name, r.dims, r.formula)
print("8D acceptance rate %.3f" % acceptance_rate(rules8, DOMAIN_8D, seed=0))

# off the training support, x and y agree only half the time
x_rule, y_rule = cases["case1"]
test = gen_rule_testset(x_rule, DOMAIN_2D, 10_000, seed=0)
print("x vs y labels over the whole square: %.3f" % np.mean(test.Y == y_rule.label(test.X)))

# CSV round trip
ds = gen_confounded(cases["case3"], DOMAIN_2D, 100, seed=2)
path = os.path.join(tempfile.mkdtemp(), "case3.csv")
save_csv(ds, path)
back = load_csv(path)
print("round trip exact:", np.array_equal(back.X, ds.X) and np.array_equal(back.Y, ds.Y))
