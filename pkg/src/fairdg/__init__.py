"""Fairness-aware domain generalisation under covariate and dependence shift.

Modules: ``data`` (datasets, splits, tabular IO), ``metrics`` (fairness
metrics, JS distance, target-domain bound), ``transform`` (disentangling
auto-encoder), ``trainer`` (primal-dual classifier training and
ablations), ``synth`` (synthetic benchmarks), ``harness`` (experiments and
reports) and ``cli``.
"""

__version__ = "0.1.0"
