"""Shared builders for the test suite."""

import numpy as np

from profnet.basis import Grid, make_basis
from profnet.model import ModelConfig, ProfnetModel
from profnet.rng import rng_for


def build_model(n_regions=2, grid_size=21, seed=0, time_span=None,
                **cfg_kw) -> ProfnetModel:
    """Freshly initialized model on a regular [0, 1] grid.

    ``time_span`` sets the label range mapped onto unit time; pass the
    panel's last label when the model will see integer time indices.
    """
    cfg_kw.setdefault("n_basis", 8)
    cfg = ModelConfig(n_regions=n_regions, grid_size=grid_size, **cfg_kw)
    grid = Grid.regular(0.0, 1.0, grid_size)
    basis = make_basis(cfg.basis_kind, cfg.n_basis, grid)
    time_base = (0.0, float(time_span)) if time_span is not None else (0.0, 1.0)
    return ProfnetModel.initialize(cfg, basis, rng_for(seed, "init"),
                                   time_base=time_base)


def zero_params(model: ProfnetModel, prefixes) -> ProfnetModel:
    """Zero every parameter tensor whose name starts with one of the
    prefixes (in place); returns the model for chaining."""
    for name, tensor in model.params.tensors.items():
        if any(name.startswith(p) for p in prefixes):
            tensor.data[...] = 0.0
    return model


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
