"""Simulate-then-learn battery state-of-health estimation.

Modules, bottom up: :mod:`ecm` (cell model and aging), :mod:`ukf` (state
estimator), :mod:`profiles` (load profiles, campaigns, traces),
:mod:`dataset` (windows, features, labels, splits), :mod:`gbt` and :mod:`mlp`
(learners), :mod:`costs` (operation and memory proxies), :mod:`explore`
(grid search and Pareto fronts) and :mod:`cli`.
"""

__version__ = "0.1.0"
