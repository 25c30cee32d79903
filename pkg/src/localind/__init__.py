"""Diverse classifier ensembles via local independence training.

Trains ensembles whose members have mutually orthogonal input gradients of
their log-odds, on synthetic datasets where several decision rules explain
the training labels equally well, and measures which rules each member
recovers.
"""
from .autodiff import Tape, backward, forward, grad_check, input_gradient_expression, mlp_expression
from .datasets import (DOMAIN_2D, DOMAIN_8D, Dataset, DomainBox, GroundTruthRule,
                       builtin_2d_cases, builtin_8d_case, builtin_experiment, gen_confounded, gen_rule_testset, load_csv, save_csv)
from .evaluation import (EvaluationReport, PerturbationSpec, agreement, build_report, cos2_stats,
                         grid_logits, match_models, mi_empirical, mi_formula)
from .models import (DecisionTree, MlpParams, RandomForest, forest_fit, mlp_init,
                     mlp_input_gradient, mlp_logit, tree_fit)
from .training import (EnsembleConfig, TrainingHistory, adam_step, cos_squared, cross_entropy,
                       diversity_penalty, lit_objective, m_oversize_diagnostic, train_ensemble)

__version__ = "0.1.0"
