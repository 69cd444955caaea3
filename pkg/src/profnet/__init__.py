"""Probabilistic functional network for forecasting panels of curves.

The package is organized bottom up: a reverse-mode tape over a small fixed
op vocabulary (:mod:`profnet.engine`) with swappable numpy/numba kernels
(:mod:`profnet.kernels`), function-space utilities (:mod:`profnet.basis`),
the network itself (:mod:`profnet.model`), its objective
(:mod:`profnet.objective`), the SGD loop and checkpoints
(:mod:`profnet.training`), Monte Carlo forecasting
(:mod:`profnet.forecasting`), synthetic panels (:mod:`profnet.synthgen`),
and the CSV/config layer (:mod:`profnet.dataio`).  ``profnet.cli`` wires
them into the ``profnet`` command.

Set ``PROFNET_BACKEND=numpy`` or ``numba`` to pin the kernel backend; the
default uses numba when importable.
"""

from . import (basis, dataio, engine, errors, forecasting, kernels, model,
               objective, rng, synthgen, training)

__all__ = [
    "basis", "dataio", "engine", "errors", "forecasting", "kernels",
    "model", "objective", "rng", "synthgen", "training",
]

__version__ = "0.1.0"
