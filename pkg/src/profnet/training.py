"""SGD training loop over randomly sampled (source, target) pairs.

Each update rebuilds the tape for a fresh batch: source curve (t, h),
target curve (t', h') with t' >= t, frozen noise per pair.  Region indices
mix freely across the panel so the spatial embedding and the output head
learn cross-region structure; ``same_region_frac`` biases a fraction of
pairs to keep h' = h when a run wants more within-region signal.

Checkpoints are single .npz archives tagged ``profnet-ckpt-v1`` holding
the config, the grid, the basis family, the time normalization, and every
parameter array; loading rebuilds a model whose outputs match the saved
one bit for bit.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import time
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import engine as E
from .basis import Grid, make_basis
from .errors import ConfigError, ContractError, FormatError, NumericalError
from .model import ModelConfig, ProfnetModel, ProfnetParams, build_forward_graph, draw_noise
from .objective import build_loss_graph
from .rng import rng_for

CHECKPOINT_FORMAT = "profnet-ckpt-v1"

TRACE_HEADER = ("update", "total", "recon", "kl", "elapsed_ms")


@dataclass(frozen=True)
class TrainingPair:
    t: int
    h: int
    tp: int
    hp: int


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    updates: int = 5000
    batch: int = 32
    kl_weight: float = 1.0
    fixed_lag: int | None = None
    max_lag: int | None = None
    same_region_frac: float | None = None
    trace_every: int = 100

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("TrainConfig.lr must be >= 0")
        if self.updates < 1:
            raise ConfigError("TrainConfig.updates must be >= 1")
        if self.batch < 1:
            raise ConfigError("TrainConfig.batch must be >= 1")
        if self.kl_weight < 0:
            raise ConfigError("TrainConfig.kl_weight must be >= 0")
        if self.trace_every < 1:
            raise ConfigError("TrainConfig.trace_every must be >= 1")
        if self.fixed_lag is not None and self.max_lag is not None:
            raise ConfigError("TrainConfig: fixed_lag and max_lag are mutually exclusive")
        if self.fixed_lag is not None and self.fixed_lag < 0:
            raise ConfigError("TrainConfig.fixed_lag must be >= 0")
        if self.max_lag is not None and self.max_lag < 1:
            raise ConfigError("TrainConfig.max_lag must be >= 1")
        if self.same_region_frac is not None and not (0.0 <= self.same_region_frac <= 1.0):
            raise ConfigError("TrainConfig.same_region_frac must lie in [0, 1]")


def sample_pairs(rng: np.random.Generator, n_times: int, n_regions: int,
                 count: int, fixed_lag: int | None = None,
                 max_lag: int | None = None,
                 same_region_frac: float | None = None):
    """Draw training pairs uniformly over the admissible (t, t') set.

    The default set is the strict triangle 0 <= t < t' < n_times; the
    degenerate t' = t conditional pins z(t') to z(t), so such pairs carry
    an unbounded KL and no usable gradient and are excluded unless
    ``fixed_lag=0`` requests them explicitly.  ``max_lag`` trims the set
    to t' - t <= max_lag, ``fixed_lag`` pins t' - t exactly.  Regions are
    independent uniform draws.
    """
    if n_times < 1 or n_regions < 1 or count < 1:
        raise ConfigError("sample_pairs: n_times, n_regions, count must be >= 1")
    if fixed_lag is not None:
        if fixed_lag >= n_times:
            raise ConfigError(
                f"fixed_lag {fixed_lag} needs at least {fixed_lag + 1} time points, "
                f"have {n_times}")
        lag_cap = fixed_lag
        lag_floor = fixed_lag
    else:
        lag_cap = n_times - 1 if max_lag is None else min(max_lag, n_times - 1)
        lag_floor = 1

    # admissible lags per source time, decoded from one uniform integer
    per_t = np.minimum(lag_cap, n_times - 1 - np.arange(n_times)) - lag_floor + 1
    per_t = np.maximum(per_t, 0)
    cum = np.cumsum(per_t)
    if cum[-1] <= 0:
        raise ConfigError("sample_pairs: admissible pair set is empty")
    r = rng.integers(0, cum[-1], size=count)
    t = np.searchsorted(cum, r, side="right")
    offset = r - (cum[t] - per_t[t])
    tp = t + lag_floor + offset

    h = rng.integers(0, n_regions, size=count)
    hp = rng.integers(0, n_regions, size=count)
    if same_region_frac is not None and same_region_frac > 0:
        keep = rng.random(count) < same_region_frac
        hp = np.where(keep, h, hp)
    return [TrainingPair(int(t[i]), int(h[i]), int(tp[i]), int(hp[i]))
            for i in range(count)]


@dataclass
class TrainTrace:
    """Loss trajectory sampled every ``trace_every`` updates (plus the last)."""

    update: np.ndarray
    total: np.ndarray
    recon: np.ndarray
    kl: np.ndarray
    elapsed_ms: np.ndarray

    def __len__(self):
        return len(self.update)

    def to_csv(self, path):
        rows = [",".join(TRACE_HEADER)]
        for i in range(len(self.update)):
            rows.append("%d,%.17g,%.17g,%.17g,%.17g" % (
                self.update[i], self.total[i], self.recon[i],
                self.kl[i], self.elapsed_ms[i]))
        _atomic_write_text(path, "\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        if not lines or tuple(lines[0].split(",")) != TRACE_HEADER:
            raise FormatError(f"{path}: not a training trace (bad header)")
        cols = [[], [], [], [], []]
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != 5:
                raise FormatError(f"{path}: malformed trace row: {ln!r}")
            for c, v in zip(cols, parts):
                c.append(v)
        return cls(update=np.array(cols[0], dtype=np.int64),
                   total=np.array(cols[1], dtype=np.float64),
                   recon=np.array(cols[2], dtype=np.float64),
                   kl=np.array(cols[3], dtype=np.float64),
                   elapsed_ms=np.array(cols[4], dtype=np.float64))


def _pairs_to_arrays(pairs):
    t = np.array([p.t for p in pairs], dtype=np.int64)
    h = np.array([p.h for p in pairs], dtype=np.int64)
    tp = np.array([p.tp for p in pairs], dtype=np.int64)
    hp = np.array([p.hp for p in pairs], dtype=np.int64)
    return t, h, tp, hp


def train(model: ProfnetModel, values: np.ndarray, times: np.ndarray,
          cfg: TrainConfig, seed: int) -> TrainTrace:
    """Run ``cfg.updates`` SGD steps in place on ``model.params``.

    ``values`` is the training panel (T, H, M); ``times`` its T time
    labels.  Pair and noise streams are split off ``seed`` so a rerun with
    the same inputs is bit-identical.
    """
    values = np.asarray(values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if values.ndim != 3:
        raise ContractError(f"train: values must be (T, H, M), got {values.shape}")
    n_times, n_regions, m = values.shape
    if n_regions != model.config.n_regions or m != model.config.grid_size:
        raise ContractError(
            f"train: panel shape {values.shape} does not match model "
            f"(H={model.config.n_regions}, M={model.config.grid_size})")
    if times.shape != (n_times,):
        raise ContractError("train: times must have one label per panel row")

    rng_pairs = rng_for(seed, "pairs")
    rng_noise = rng_for(seed, "noise")
    k = model.config.n_processes

    rows = []
    start = time.perf_counter()
    for u in range(1, cfg.updates + 1):
        pairs = sample_pairs(rng_pairs, n_times, n_regions, cfg.batch,
                             fixed_lag=cfg.fixed_lag, max_lag=cfg.max_lag,
                             same_region_frac=cfg.same_region_frac)
        t, h, tp, hp = _pairs_to_arrays(pairs)
        eps = draw_noise(rng_noise, k, cfg.batch)
        graph = build_forward_graph(
            model, values[t, h], h, hp,
            model.time_to_unit(times[t]), model.time_to_unit(times[tp]), eps)
        total, recon, kl = build_loss_graph(model, graph, values[tp, hp],
                                            cfg.kl_weight)
        if not np.isfinite(total.item()):
            raise NumericalError(
                f"loss became non-finite at update {u} (lr={cfg.lr:g}); "
                f"try a smaller learning rate")
        grads = E.backward(total)
        E.sgd_step(model.params.tensors, grads, cfg.lr)
        if u % cfg.trace_every == 0 or u == cfg.updates:
            ms = (time.perf_counter() - start) * 1e3
            rows.append((u, total.item(), recon.item(), kl.item(), ms))

    rows = np.array(rows, dtype=np.float64).reshape(-1, 5)
    return TrainTrace(update=rows[:, 0].astype(np.int64), total=rows[:, 1],
                      recon=rows[:, 2], kl=rows[:, 3], elapsed_ms=rows[:, 4])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_bytes(path, payload: bytes):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: ProfnetModel, path, meta: dict | None = None):
    """Write the model to ``path`` as an .npz archive (atomic replace)."""
    payload = {
        "format": np.array(CHECKPOINT_FORMAT),
        "config": np.array(json.dumps(asdict(model.config))),
        "grid_points": model.basis.grid.points,
        "grid_weights": model.basis.grid.weights,
        "basis_kind": np.array(model.basis.kind),
        "time_base": np.array(model.time_base),
        "meta": np.array(json.dumps(meta or {})),
    }
    for name, arr in model.params.arrays().items():
        payload[f"param:{name}"] = arr
    buf = io.BytesIO()
    np.savez(buf, **payload)
    _atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Rebuild ``(model, meta)`` from a checkpoint written by
    :func:`save_checkpoint`.  Unknown or damaged files raise FormatError."""
    try:
        with np.load(path, allow_pickle=False) as z:
            if "format" not in z:
                raise FormatError(f"{path}: not a model checkpoint (no format tag)")
            tag = str(z["format"])
            if tag != CHECKPOINT_FORMAT:
                raise FormatError(
                    f"{path}: unsupported checkpoint format {tag!r}, "
                    f"expected {CHECKPOINT_FORMAT!r}")
            cfg = ModelConfig(**json.loads(str(z["config"])))
            grid = Grid.from_points(z["grid_points"])
            if not np.array_equal(grid.weights, z["grid_weights"]):
                raise FormatError(f"{path}: grid weights do not match grid points")
            basis = make_basis(str(z["basis_kind"]), cfg.n_basis, grid)
            tensors = {}
            for key in z.files:
                if key.startswith("param:"):
                    name = key[len("param:"):]
                    tensors[name] = E.Tensor(z[key], requires_grad=True, name=name)
            meta = json.loads(str(z["meta"]))
            tb = z["time_base"]
            model = ProfnetModel(cfg, ProfnetParams(tensors), basis,
                                 time_base=(float(tb[0]), float(tb[1])))
    except FormatError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile,
            json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read checkpoint ({exc})") from exc
    expect = set(ProfnetParams.initialize(cfg, np.random.default_rng(0)).tensors)
    have = set(model.params.tensors)
    if expect != have:
        missing = sorted(expect - have)
        extra = sorted(have - expect)
        raise FormatError(
            f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    return model, meta
