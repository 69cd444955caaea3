"""Training objective: grid-mean squared reconstruction error plus a KL
term pulling each conditional latent toward its unit-variance prior.

The KL between N(m, v) and N(mu, 1) has the closed form

    -log(v)/2 + (v + (m - mu)^2)/2 - 1/2

summed over processes.  A variance floor of 1e-8 keeps the log finite for
the degenerate zero-lag conditional.  ``single_sample_kl`` in the model
config swaps the closed form for the one-draw log-density ratio
log q(z') - log p(z') evaluated at the sampled z'; it is unbiased but
noisy, and is kept only for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .basis import Curve
from .errors import ContractError
from .model import KL_VAR_FLOOR, ForwardGraph, ProfnetModel


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    recon: float
    kl: float


def recon_loss(target, generated) -> float:
    """Mean squared difference over the grid, (1/M) * sum_j (x_j - y_j)^2."""
    if isinstance(target, Curve) and isinstance(generated, Curve):
        if not target.grid.same_as(generated.grid):
            raise ContractError("recon_loss: curves live on different grids")
    tv = target.values if isinstance(target, Curve) else np.asarray(target, dtype=np.float64)
    gv = generated.values if isinstance(generated, Curve) else np.asarray(generated, dtype=np.float64)
    if tv.shape != gv.shape:
        raise ContractError(f"recon_loss: shape mismatch {tv.shape} vs {gv.shape}")
    return float(np.mean((tv - gv) ** 2))


def kl_divergence(cond_mean, cond_var, prior_mean) -> float:
    """Closed-form KL of the conditional against the N(prior_mean, 1)
    prior, summed over all entries.  Always >= 0 up to the variance floor."""
    m = np.asarray(cond_mean, dtype=np.float64)
    v = np.asarray(cond_var, dtype=np.float64)
    mu = np.asarray(prior_mean, dtype=np.float64)
    if np.any(v < 0):
        raise ContractError("kl_divergence: conditional variance must be >= 0")
    v = v + KL_VAR_FLOOR
    per = -0.5 * np.log(v) + 0.5 * (v + (m - mu) ** 2) - 0.5
    return float(np.sum(per))


def kl_from_states(states) -> float:
    """KL of one forward pass from its per-process latent records."""
    return kl_divergence([s.cond_mean for s in states],
                         [s.cond_var for s in states],
                         [s.mu for s in states])


def total_loss(recon: float, kl: float, kl_weight: float = 1.0) -> LossBreakdown:
    return LossBreakdown(total=float(recon + kl_weight * kl),
                         recon=float(recon), kl=float(kl))


def build_loss_graph(model: ProfnetModel, graph: ForwardGraph,
                     targets: np.ndarray, kl_weight: float = 1.0):
    """Extend a batched forward tape with the loss head.

    ``targets`` is (B, M).  Returns (total, recon, kl) scalar nodes; recon
    is averaged over the batch and the grid, KL is summed over processes
    then averaged over the batch.
    """
    targets = np.asarray(targets, dtype=np.float64)
    b, m = targets.shape
    k = model.config.n_processes

    diff = E.add(graph.output, E.scale(E.Tensor(targets), -1.0))
    mean_m = E.Tensor(np.full((m, 1), 1.0 / m))
    mean_b = E.Tensor(np.full((1, b), 1.0 / b))
    recon = E.matmul(mean_b, E.matmul(E.square(diff), mean_m))

    v = E.add(graph.cond_var, E.Tensor(np.full((1, 1), KL_VAR_FLOOR)))
    if model.config.single_sample_kl:
        dq = E.add(graph.z_tp, E.scale(graph.cond_mean, -1.0))
        dp = E.add(graph.z_tp, E.scale(graph.mu, -1.0))
        per = E.add(E.add(E.scale(E.log(v), -0.5),
                          E.scale(E.mul(E.square(dq), E.reciprocal(v)), -0.5)),
                    E.scale(E.square(dp), 0.5))
    else:
        d = E.add(graph.cond_mean, E.scale(graph.mu, -1.0))
        per = E.add(E.add(E.scale(E.log(v), -0.5),
                          E.scale(E.add(v, E.square(d)), 0.5)),
                    E.Tensor(np.full((1, 1), -0.5)))
    kl = E.matmul(mean_b, E.matmul(per, E.Tensor(np.ones((k, 1)))))

    total = E.add(recon, E.scale(kl, kl_weight))
    return total, recon, kl
