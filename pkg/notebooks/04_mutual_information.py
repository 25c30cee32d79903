"""
Orthogonal gradients and independent outputs
============================================

Under a tiny isotropic Gaussian perturbation two models' logits move along
their input gradients, and their mutual information depends only on the
angle between those gradients.
"""
import numpy as np

from localind.evaluation import PerturbationSpec, mi_empirical, mi_formula
from localind.training import cos_squared

spec = PerturbationSpec(sigma=1e-3, n_samples=100_000)
base = np.array([1.0, 0.0])
for degrees in (90, 75, 60, 45, 30, 15):
    t = np.radians(degrees)
    other = np.array([np.cos(t), np.sin(t)])
    c2 = float(cos_squared(base, other, 0.0))
    print("%2d deg  cos^2 %.3f  formula %.4f  sampled %.4f"
          % (degrees, c2, mi_formula(c2), mi_empirical(base, other, spec, seed=degrees)))

print("parallel gradients:", mi_formula(1.0))
