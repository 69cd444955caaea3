"""Synthetic curve panels with known generating structure.

Two generators.  ``simulate_dataset`` draws latent unit-variance GPs with
squared-exponential kernels and pushes them through a fixed random
network; every region sees the same shared curve plus its own smooth
offset, plus white observation noise.  The generating means,
length-scales, latent paths, network weights, and offsets are returned
as a truth record so tests can score recovery against them.
``rollout_panel`` instead generates a panel from a fitted (or freshly
initialized) model's own one-step-ahead law, which is the reference
setting for checking band calibration.

Latent paths are sampled in two stages: a joint Cholesky draw over the
first half of the time points, then a step-by-step conditional draw for
the rest, each new point conditioned on the full history.  Both stages use
the same standard-normal stream, one draw per time point and process.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from .basis import Grid
from .dataio import FtsDataset
from .engine import glorot_uniform
from .errors import ConfigError, FormatError, NumericalError
from .rng import rng_for

TRUTH_FORMAT = "profnet-truth-v1"

_JITTER_START = 1e-8
_JITTER_MAX = 1e-4


@dataclass(frozen=True)
class SimConfig:
    n_times: int = 50
    n_regions: int = 10
    grid_size: int = 51
    n_processes: int = 4
    mean_sd: float = 1.0
    rho_shape: float = 4.0
    rho_rate: float = 0.5
    hidden: int = 32
    region_amp: float = 0.5
    signal_scale: float = 1.0
    noise_sd: float = 0.05

    def __post_init__(self):
        if self.n_times < 2:
            raise ConfigError("SimConfig.n_times must be >= 2")
        for name in ("n_regions", "grid_size", "n_processes", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SimConfig.{name} must be >= 1")
        for name in ("mean_sd", "rho_shape", "rho_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"SimConfig.{name} must be > 0")
        if self.region_amp < 0 or self.noise_sd < 0 or self.signal_scale < 0:
            raise ConfigError("SimConfig amplitudes must be >= 0")


@dataclass
class SimTruth:
    """Everything the generator used, for scoring recovery."""

    config: SimConfig
    mu: np.ndarray               # K
    rho: np.ndarray              # K
    latents: np.ndarray          # T x K
    net: dict                    # generator weights
    offsets: np.ndarray          # H x M


def sample_gp_params(rng: np.random.Generator, n_processes: int,
                     cfg: SimConfig):
    """Means ~ N(0, mean_sd^2), length-scales ~ Gamma(shape, 1/rate)."""
    if n_processes < 1:
        raise ConfigError("sample_gp_params: n_processes must be >= 1")
    mu = rng.normal(0.0, cfg.mean_sd, n_processes)
    rho = rng.gamma(cfg.rho_shape, 1.0 / cfg.rho_rate, n_processes)
    return mu, rho


def _cholesky_jittered(c: np.ndarray, rho: float) -> np.ndarray:
    jitter = _JITTER_START
    while jitter <= _JITTER_MAX:
        try:
            return np.linalg.cholesky(c + jitter * np.eye(c.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"latent covariance for rho={rho:g} is not positive definite even "
        f"with jitter {_JITTER_MAX:g}")


def simulate_latent(rng: np.random.Generator, mu: np.ndarray,
                    rho: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Sample each process's path at ``times`` (unit scale).

    The first ceil(T/2) points come from one joint Cholesky draw; each
    later point is drawn from its exact conditional given all earlier
    points, so the joint law is the same GP either way.
    """
    mu = np.asarray(mu, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if np.any(rho <= 0):
        raise ConfigError("simulate_latent: length-scales must be positive")
    t = len(times)
    k = len(mu)
    n0 = math.ceil(t / 2)
    z = np.empty((t, k))
    diffs = times[:, None] - times[None, :]
    for j in range(k):
        cov = np.exp(-0.5 * (diffs / rho[j]) ** 2)
        eta = rng.standard_normal(t)
        chol = _cholesky_jittered(cov[:n0, :n0], float(rho[j]))
        z[:n0, j] = mu[j] + chol @ eta[:n0]
        for i in range(n0, t):
            past = cov[:i, :i] + _JITTER_START * np.eye(i)
            alpha = np.linalg.solve(past, cov[:i, i])
            m = mu[j] + alpha @ (z[:i, j] - mu[j])
            v = max(cov[i, i] - alpha @ cov[:i, i], 0.0)
            z[i, j] = m + math.sqrt(v) * eta[i]
    return z


def _net_init(rng, n_processes, hidden, grid_size, scale):
    # output-layer gain sets how much the curves move over time relative
    # to the static region structure
    return {
        "w0": glorot_uniform(rng, n_processes, hidden),
        "b0": np.zeros(hidden),
        "w1": glorot_uniform(rng, hidden, hidden),
        "b1": np.zeros(hidden),
        "w2": scale * glorot_uniform(rng, hidden, grid_size),
        "b2": np.zeros(grid_size),
    }


def _net_apply(net: dict, z: np.ndarray) -> np.ndarray:
    a = np.tanh(z @ net["w0"] + net["b0"])
    a = np.tanh(a @ net["w1"] + net["b1"])
    return a @ net["w2"] + net["b2"]


def simulate_dataset(cfg: SimConfig, seed: int):
    """Generate a panel and its truth record from one master seed."""
    rng = rng_for(seed, "sim")
    mu, rho = sample_gp_params(rng, cfg.n_processes, cfg)
    # length-scales are in time-step units, so neighbouring curves correlate
    # strongly and distant ones decay toward the marginal law
    labels = np.arange(cfg.n_times, dtype=np.float64)
    z = simulate_latent(rng, mu, rho, labels)
    net = _net_init(rng, cfg.n_processes, cfg.hidden, cfg.grid_size,
                    cfg.signal_scale)
    grid = Grid.regular(0.0, 1.0, cfg.grid_size)
    coefs = cfg.region_amp * rng.standard_normal((cfg.n_regions, 3))
    two_pi_u = 2.0 * np.pi * grid.points
    offsets = (coefs[:, [0]] + coefs[:, [1]] * np.sin(two_pi_u)
               + coefs[:, [2]] * np.cos(two_pi_u))
    noise = cfg.noise_sd * rng.standard_normal(
        (cfg.n_times, cfg.n_regions, cfg.grid_size))
    shared = _net_apply(net, z)
    values = shared[:, None, :] + offsets[None, :, :] + noise
    ds = FtsDataset(grid=grid,
                    regions=tuple(f"r{h}" for h in range(cfg.n_regions)),
                    times=labels, values=values)
    truth = SimTruth(config=cfg, mu=mu, rho=rho, latents=z, net=net,
                     offsets=offsets)
    return ds, truth


def rollout_panel(model, n_times: int, rng: np.random.Generator,
                  burn_in: int = 10) -> FtsDataset:
    """Generate a panel from a model's own one-step-ahead law.

    Starting from flat curves, each step replaces every region's curve
    with a single draw of the model's forecast for that region one step
    ahead.  After the burn-in the panel is a sample of the model's
    self-consistent curve process, so forecasts made by the same model
    are calibrated on it by construction.  Time labels are 0..n_times-1.
    """
    if n_times < 2:
        raise ConfigError("rollout_panel: n_times must be >= 2")
    if burn_in < 0:
        raise ConfigError("rollout_panel: burn_in must be >= 0")
    n_regions = model.config.n_regions
    m = model.basis.grid.m
    x = np.zeros((n_regions, m))
    values = np.zeros((n_times, n_regions, m))
    for step in range(-burn_in, n_times):
        new = np.empty_like(x)
        for h in range(n_regions):
            eps = rng.standard_normal((1, 2 * model.config.n_processes))
            new[h] = model.sample_curves(x[h], h, float(step - 1), float(step),
                                         eps, hp=h)[0]
        x = new
        if step >= 0:
            values[step] = x
    return FtsDataset(grid=model.basis.grid,
                      regions=tuple(f"r{h}" for h in range(n_regions)),
                      times=np.arange(n_times, dtype=np.float64),
                      values=values)


def save_truth(truth: SimTruth, path):
    from .training import _atomic_write_bytes
    payload = {
        "format": np.array(TRUTH_FORMAT),
        "config": np.array(json.dumps(asdict(truth.config))),
        "mu": truth.mu, "rho": truth.rho, "latents": truth.latents,
        "offsets": truth.offsets,
    }
    for name, arr in truth.net.items():
        payload[f"net:{name}"] = arr
    buf = io.BytesIO()
    np.savez(buf, **payload)
    _atomic_write_bytes(path, buf.getvalue())


def load_truth(path) -> SimTruth:
    try:
        with np.load(path, allow_pickle=False) as zf:
            if "format" not in zf or str(zf["format"]) != TRUTH_FORMAT:
                raise FormatError(f"{path}: not a {TRUTH_FORMAT} file")
            cfg = SimConfig(**json.loads(str(zf["config"])))
            net = {key[len("net:"):]: zf[key] for key in zf.files
                   if key.startswith("net:")}
            return SimTruth(config=cfg, mu=zf["mu"], rho=zf["rho"],
                            latents=zf["latents"], net=net,
                            offsets=zf["offsets"])
    except FormatError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile,
            json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read truth file ({exc})") from exc
