"""Heterogeneous-horizon exact-weight local SGD.

Submodules: ``scalar`` (envelope kernels), ``models`` (finite-sum
objectives and oracles), ``certificate`` (coefficient systems and upper
states), ``solvers`` (control solvers), ``algorithms`` (round procedures and
baselines), ``data`` (ingestion and partitioning), ``experiment`` (runs,
sweeps, verification) and ``plotting``.
"""

__version__ = "0.1.0"
