"""The ProFnet network.

Four blocks: a functional encoder (basis inner products + dense layers), a
spatial encoder (embedding lookup + dense layers), per-process GP parameter
heads producing a constant mean and a squared-exponential length-scale, and
a generator mapping conditionally sampled latents back to a curve on the
grid.

Two execution paths share one parameter set:

* a tape path (:func:`build_forward_graph`) used for training, expressed in
  :mod:`profnet.engine` ops so gradients flow to every parameter;
* a vectorized numpy path (:meth:`ProfnetModel.sample_curves`) used for
  Monte Carlo forecasting, where no gradients are needed.

Tests pin the two paths to agree to 1e-12 on shared noise.

Noise convention: a noise vector for one forward pass has 2K standard
normal entries; the first K drive the source-time draws z(t), the last K
the reparametrized target-time draws z(t').
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import engine as E
from .basis import BasisSystem, Curve
from .errors import ConfigError, ContractError

# length-scales are softplus outputs shifted by this floor, keeping the
# squared-exponential kernel well defined
RHO_FLOOR = 1e-3

# variance floor applied before KL evaluation
KL_VAR_FLOOR = 1e-8

# tiny guard inside sqrt so the degenerate t' == t conditional (variance
# exactly 0) has a finite gradient; shifts sampled values by at most 1e-15
SAMPLE_VAR_GUARD = 1e-30

# init gain that keeps activation variance roughly constant through tanh
# layers; without it signals shrink ~0.6x per layer and deep paths train
# orders of magnitude slower
TANH_GAIN = 5.0 / 3.0


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``n_processes`` latent GPs drive the generator; ``curve_dim`` and
    ``region_dim`` are the widths of the functional and spatial encodings;
    ``enc_layers`` / ``head_layers`` / ``gen_layers`` are the depths of the
    encoder branches, the GP parameter heads, and the generator stack.
    """

    n_regions: int
    grid_size: int
    n_processes: int = 8
    curve_dim: int = 8
    region_dim: int = 4
    n_basis: int = 15
    enc_layers: int = 2
    head_layers: int = 2
    gen_layers: int = 2
    hidden: int = 32
    basis_kind: str = "bspline"
    deterministic_source: bool = False
    single_sample_kl: bool = False

    def __post_init__(self):
        for name in ("n_regions", "grid_size", "n_processes", "curve_dim",
                     "region_dim", "n_basis", "enc_layers", "head_layers",
                     "gen_layers", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1")

    @property
    def latent_dim(self) -> int:
        return self.curve_dim + self.region_dim


def _head_widths(cfg: ModelConfig) -> list:
    return [cfg.latent_dim] + [cfg.hidden] * (cfg.head_layers - 1) + [cfg.n_processes]


def _gen_widths(cfg: ModelConfig) -> list:
    return [cfg.n_processes] + [cfg.hidden] * (cfg.gen_layers - 1) + [cfg.curve_dim]


class ProfnetParams:
    """All trainable tensors, keyed by a stable naming scheme."""

    def __init__(self, tensors: dict):
        self.tensors = tensors

    @classmethod
    def initialize(cls, cfg: ModelConfig, rng: np.random.Generator,
                   omega_row_scale: np.ndarray | None = None) -> "ProfnetParams":
        t = {}

        def weight(name, fan_in, fan_out, gain=1.0):
            t[name] = E.Tensor(E.glorot_uniform(rng, fan_in, fan_out, gain=gain),
                               requires_grad=True, name=name)

        def bias(name, width):
            t[name] = E.Tensor(np.zeros((1, width)), requires_grad=True, name=name)

        weight("enc.omega", cfg.n_basis, cfg.curve_dim, gain=TANH_GAIN)
        if omega_row_scale is not None:
            # basis inner products carry each basis function's mass, so undo
            # it at init to give layer 1 unit-scale preactivations
            t["enc.omega"].data *= np.asarray(omega_row_scale, dtype=np.float64)[:, None]
        for i in range(cfg.enc_layers - 1):
            weight(f"enc.w{i}", cfg.curve_dim, cfg.curve_dim, gain=TANH_GAIN)
            bias(f"enc.b{i}", cfg.curve_dim)
        # region codes start as random points of the unit cube so the dense
        # stack above them sees unit-scale inputs from the first update on
        t["spa.table"] = E.Tensor(rng.uniform(-1.0, 1.0,
                                              (cfg.n_regions, cfg.region_dim)),
                                  requires_grad=True, name="spa.table")
        for i in range(cfg.enc_layers - 1):
            weight(f"spa.w{i}", cfg.region_dim, cfg.region_dim, gain=TANH_GAIN)
            bias(f"spa.b{i}", cfg.region_dim)
        for head in ("mu", "rho"):
            widths = _head_widths(cfg)
            last = len(widths) - 2
            for i in range(len(widths) - 1):
                weight(f"{head}.w{i}", widths[i], widths[i + 1],
                       gain=1.0 if i == last else TANH_GAIN)
                bias(f"{head}.b{i}", widths[i + 1])
        widths = _gen_widths(cfg)
        for i in range(len(widths) - 1):
            weight(f"gen.w{i}", widths[i], widths[i + 1], gain=TANH_GAIN)
            bias(f"gen.b{i}", widths[i + 1])
        weight("out.w", cfg.region_dim + cfg.curve_dim, cfg.grid_size)
        bias("out.b", cfg.grid_size)
        return cls(t)

    def __getitem__(self, name: str) -> E.Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def arrays(self) -> dict:
        return {name: t.data for name, t in self.tensors.items()}

    def n_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "ProfnetParams":
        return ProfnetParams({
            name: E.Tensor(t.data.copy(), requires_grad=True, name=name)
            for name, t in self.tensors.items()})


@dataclass
class LatentGpState:
    """Per-process record of one conditional sampling step."""

    mu: float
    rho: float
    z_t: float
    cond_mean: float
    cond_var: float
    z_tp: float
    t: float
    tp: float


def gp_conditional(mu, rho, t: float, tp: float, z_t):
    """Conditional moments of z(t') given z(t) under the unit-variance
    squared-exponential kernel: correlation c = exp(-(t'-t)^2 / (2 rho^2)),
    mean mu + c (z(t) - mu), variance 1 - c^2 (clamped to [0, 1])."""
    mu = np.asarray(mu, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    if np.any(rho <= 0):
        raise ContractError("gp_conditional: length-scale must be positive")
    if not (np.isfinite(t) and np.isfinite(tp)):
        raise ContractError("gp_conditional: times must be finite")
    c = np.exp(-0.5 * ((tp - t) / rho) ** 2)
    cond_mean = mu + c * (z_t - mu)
    cond_var = np.clip(1.0 - c * c, 0.0, 1.0)
    return cond_mean, cond_var


def draw_noise(rng: np.random.Generator, n_processes: int, size: int | None = None):
    """Standard-normal noise vectors of length 2K (one pair per process)."""
    if size is None:
        return rng.standard_normal(2 * n_processes)
    return rng.standard_normal((size, 2 * n_processes))


def _check_basis_fits(config: ModelConfig, basis: BasisSystem):
    if basis.d != config.n_basis:
        raise ConfigError(
            f"basis has D={basis.d} but config expects {config.n_basis}")
    if basis.grid.m != config.grid_size:
        raise ConfigError(
            f"grid has M={basis.grid.m} but config expects {config.grid_size}")


@dataclass
class ForwardGraph:
    """Tape nodes of one batched forward pass (all shapes B x ...)."""

    output: E.Tensor          # B x M generated curves
    mu: E.Tensor              # B x K
    rho: E.Tensor             # B x K
    corr: E.Tensor            # B x K kernel correlation c(t', t)
    cond_mean: E.Tensor       # B x K
    cond_var: E.Tensor        # B x K (raw, in [0, 1))
    z_t: E.Tensor             # B x K source-time draws
    z_tp: E.Tensor            # B x K target-time draws
    enc_curve: E.Tensor       # B x curve_dim
    enc_region: E.Tensor      # B x region_dim


class ProfnetModel:
    """Parameter set + basis + time normalization, with both execution paths."""

    def __init__(self, config: ModelConfig, params: ProfnetParams,
                 basis: BasisSystem, time_base: tuple = (0.0, 1.0)):
        _check_basis_fits(config, basis)
        if time_base[1] <= 0:
            raise ConfigError("time scale must be positive")
        self.config = config
        self.params = params
        self.basis = basis
        self.time_base = (float(time_base[0]), float(time_base[1]))

    @classmethod
    def initialize(cls, config: ModelConfig, basis: BasisSystem,
                   rng: np.random.Generator, time_base: tuple = (0.0, 1.0)):
        _check_basis_fits(config, basis)
        # inner products against a smooth unit-scale curve have the size of
        # the basis function's integrated |mass|, so dividing by it keeps
        # the first encoder layer at unit scale for any basis family
        mass = np.einsum("m,md->d", basis.grid.weights, np.abs(basis.eval))
        scale = 1.0 / np.maximum(mass, 1e-12)
        params = ProfnetParams.initialize(config, rng, omega_row_scale=scale)
        return cls(config, params, basis, time_base)

    # -- time handling ------------------------------------------------------

    def time_to_unit(self, label) -> float:
        t0, span = self.time_base
        return (np.asarray(label, dtype=np.float64) - t0) / span

    # -- single-input operations (numpy path) -------------------------------

    def encode_functional(self, x: Curve) -> np.ndarray:
        if not x.grid.same_as(self.basis.grid):
            raise ContractError("encode_functional: curve grid does not match model grid")
        return self._encode_curves(x.values[None, :])[0]

    def encode_spatial(self, h: int) -> np.ndarray:
        hh = int(h)
        if hh < 0 or hh >= self.config.n_regions:
            raise IndexError(f"region index {h} outside [0, {self.config.n_regions})")
        return self._encode_regions(np.array([hh]))[0]

    def gp_params(self, w: np.ndarray):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.config.latent_dim,):
            raise ContractError(
                f"gp_params: expected latent vector of length {self.config.latent_dim}")
        mu, rho = self._heads(w[None, :])
        return mu[0], rho[0]

    def generate(self, z: np.ndarray, w_region: np.ndarray) -> Curve:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.config.n_processes,):
            raise ContractError(
                f"generate: expected latent vector of length {self.config.n_processes}")
        y = self._generate(z[None, :], np.asarray(w_region, dtype=np.float64)[None, :])
        return Curve(self.basis.grid, y[0])

    def forward_pass(self, x: Curve, h: int, hp: int, t, tp,
                     eps: np.ndarray):
        """One full pass: encode (x, h), parametrize the GPs, sample z(t')
        conditionally on z(t), and generate the curve for region hp at tp.

        ``t`` and ``tp`` are time labels (converted internally to unit
        scale); ``eps`` is a 2K noise vector.  Returns the generated curve
        and the per-process latent states.
        """
        tn = float(self.time_to_unit(t))
        tpn = float(self.time_to_unit(tp))
        if tpn < tn:
            raise ContractError(f"forward_pass: target time {tp} precedes source {t}")
        eps = np.asarray(eps, dtype=np.float64)
        k = self.config.n_processes
        if eps.shape != (2 * k,):
            raise ContractError(f"forward_pass: expected noise vector of length {2 * k}")

        w_x = self.encode_functional(x)
        w_h = self.encode_spatial(h)
        mu, rho = self.gp_params(np.concatenate([w_x, w_h]))
        eps1, eps2 = eps[:k], eps[k:]
        z_t = mu if self.config.deterministic_source else mu + eps1
        cond_mean, cond_var = gp_conditional(mu, rho, tn, tpn, z_t)
        z_tp = cond_mean + np.sqrt(cond_var + SAMPLE_VAR_GUARD) * eps2
        w_hp = self.encode_spatial(hp)
        curve = self.generate(z_tp, w_hp)
        states = [LatentGpState(mu=float(mu[i]), rho=float(rho[i]),
                                z_t=float(z_t[i]), cond_mean=float(cond_mean[i]),
                                cond_var=float(cond_var[i]), z_tp=float(z_tp[i]),
                                t=tn, tp=tpn)
                  for i in range(k)]
        return curve, states

    # -- vectorized numpy internals ----------------------------------------

    def _dense(self, z, prefix, n_layers):
        p = self.params
        for i in range(n_layers):
            z = np.tanh(z @ p[f"{prefix}.w{i}"].data + p[f"{prefix}.b{i}"].data)
        return z

    def _encode_curves(self, x_rows: np.ndarray) -> np.ndarray:
        ip = x_rows @ self.basis.weighted_eval          # basis inner products
        z = np.tanh(ip @ self.params["enc.omega"].data)
        return self._dense(z, "enc", self.config.enc_layers - 1)

    def _encode_regions(self, hs: np.ndarray) -> np.ndarray:
        z = self.params["spa.table"].data[hs]
        return self._dense(z, "spa", self.config.enc_layers - 1)

    def _heads(self, w: np.ndarray):
        p = self.params
        out = []
        for head in ("mu", "rho"):
            z = w
            n = self.config.head_layers
            for i in range(n - 1):
                z = np.tanh(z @ p[f"{head}.w{i}"].data + p[f"{head}.b{i}"].data)
            z = z @ p[f"{head}.w{n - 1}"].data + p[f"{head}.b{n - 1}"].data
            out.append(z)
        mu, raw = out
        rho = np.logaddexp(0.0, raw) + RHO_FLOOR        # softplus + floor
        return mu, rho

    def _generate(self, z: np.ndarray, w_region: np.ndarray) -> np.ndarray:
        w_xp = self._dense(z, "gen", self.config.gen_layers)
        wp = np.concatenate([w_region, w_xp], axis=1)
        return wp @ self.params["out.w"].data + self.params["out.b"].data

    def sample_curves(self, x: np.ndarray, h: int, t, tp,
                      eps: np.ndarray, hp: int | None = None):
        """Generate curves for many noise vectors at once.

        ``eps`` has shape (S, 2K).  With ``hp`` given, returns the (S, M)
        ensemble for that target region.  With ``hp=None``, returns
        ``(stochastic, shifts)`` where ``stochastic`` is the (S, M) part
        shared by every target and ``shifts`` is the (H, M) deterministic
        per-region offset; row hp of ``shifts`` added to ``stochastic``
        reproduces the single-target ensemble exactly (the output map is
        linear in the concatenated representation).
        """
        x = np.asarray(x, dtype=np.float64)
        eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
        k = self.config.n_processes
        tn = float(self.time_to_unit(t))
        tpn = float(self.time_to_unit(tp))
        if tpn < tn:
            raise ContractError(f"sample_curves: target time {tp} precedes source {t}")

        w_x = self._encode_curves(x[None, :])
        w_h = self._encode_regions(np.array([int(h)]))
        mu, rho = self._heads(np.concatenate([w_x, w_h], axis=1))
        c = np.exp(-0.5 * ((tpn - tn) / rho) ** 2)      # 1 x K
        eps1, eps2 = eps[:, :k], eps[:, k:]
        dev = 0.0 if self.config.deterministic_source else c * eps1
        cond_var = np.clip(1.0 - c * c, 0.0, 1.0)
        z_tp = mu + dev + np.sqrt(cond_var + SAMPLE_VAR_GUARD) * eps2   # S x K

        w_xp = self._dense(z_tp, "gen", self.config.gen_layers)
        out_w = self.params["out.w"].data
        out_b = self.params["out.b"].data
        region_rows = out_w[:self.config.region_dim]
        curve_rows = out_w[self.config.region_dim:]
        stochastic = w_xp @ curve_rows + out_b
        if hp is not None:
            w_hp = self._encode_regions(np.array([int(hp)]))
            return stochastic + w_hp @ region_rows
        all_regions = self._encode_regions(np.arange(self.config.n_regions))
        return stochastic, all_regions @ region_rows


# ---------------------------------------------------------------------------
# tape path (training)
# ---------------------------------------------------------------------------

def _dense_tape(z, params, prefix, n_layers, linear_last=False):
    for i in range(n_layers):
        z = E.add(E.matmul(z, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"])
        if not (linear_last and i == n_layers - 1):
            z = E.tanh(z)
    return z


def build_forward_graph(model: ProfnetModel, x_rows: np.ndarray,
                        src: np.ndarray, tgt: np.ndarray,
                        t_unit: np.ndarray, tp_unit: np.ndarray,
                        eps: np.ndarray) -> ForwardGraph:
    """Build the tape for a batch of training pairs.

    ``x_rows`` is (B, M) source curves; ``src`` / ``tgt`` are region index
    arrays; ``t_unit`` / ``tp_unit`` are unit-scale times with tp >= t;
    ``eps`` is (B, 2K) frozen noise.  Output nodes are collected in a
    :class:`ForwardGraph` for the loss to consume.
    """
    cfg = model.config
    p = model.params
    b, k = x_rows.shape[0], cfg.n_processes
    if np.any(tp_unit < t_unit):
        raise ContractError("build_forward_graph: every pair needs tp >= t")

    ip = E.Tensor(x_rows @ model.basis.weighted_eval)        # B x D, constant
    z = E.tanh(E.matmul(ip, p["enc.omega"]))
    w_x = _dense_tape(z, p, "enc", cfg.enc_layers - 1)

    onehot_src = np.zeros((b, cfg.n_regions))
    onehot_src[np.arange(b), src] = 1.0
    w_h = _dense_tape(E.matmul(E.Tensor(onehot_src), p["spa.table"]),
                      p, "spa", cfg.enc_layers - 1)

    w = E.concat([w_x, w_h], axis=1)
    mu = _dense_tape(w, p, "mu", cfg.head_layers, linear_last=True)
    raw = _dense_tape(w, p, "rho", cfg.head_layers, linear_last=True)
    rho = E.add(E.softplus(raw), E.Tensor(np.full((1, 1), RHO_FLOOR)))

    delta = E.Tensor((tp_unit - t_unit)[:, None])            # B x 1, constant
    corr = E.exp(E.scale(E.square(E.mul(E.reciprocal(rho), delta)), -0.5))

    eps1 = E.Tensor(eps[:, :k])
    eps2 = E.Tensor(eps[:, k:])
    if cfg.deterministic_source:
        z_t = mu
        cond_mean = mu
    else:
        z_t = E.add(mu, eps1)
        cond_mean = E.add(mu, E.mul(corr, eps1))
    cond_var = E.add(E.Tensor(np.ones((1, 1))), E.scale(E.square(corr), -1.0))
    std = E.sqrt(E.add(cond_var, E.Tensor(np.full((1, 1), SAMPLE_VAR_GUARD))))
    z_tp = E.add(cond_mean, E.mul(std, eps2))

    w_xp = _dense_tape(z_tp, p, "gen", cfg.gen_layers)
    onehot_tgt = np.zeros((b, cfg.n_regions))
    onehot_tgt[np.arange(b), tgt] = 1.0
    w_hp = _dense_tape(E.matmul(E.Tensor(onehot_tgt), p["spa.table"]),
                       p, "spa", cfg.enc_layers - 1)
    wp = E.concat([w_hp, w_xp], axis=1)
    output = E.add(E.matmul(wp, p["out.w"]), p["out.b"])

    return ForwardGraph(output=output, mu=mu, rho=rho, corr=corr,
                        cond_mean=cond_mean, cond_var=cond_var,
                        z_t=z_t, z_tp=z_tp, enc_curve=w_x, enc_region=w_h)


def config_with(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
