"""Dataset container and on-disk formats.

A panel is a dense array of curves: T time points x H regions x M grid
points, with one shared grid.  The interchange format is long CSV with
header ``region,time,u,value``; floats are written with 17 significant
digits so a write/read cycle reproduces every bit.

Run configuration files are flat ``key=value`` lines ('#' starts a
comment).  Values given on the command line win over the file, which wins
over defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .basis import BasisSystem, Curve, Grid, project_curve, reconstruct
from .errors import (ConfigError, ContractError, DomainError, FormatError,
                     IngestionError, ParseError)

CURVE_HEADER = "region,time,u,value"

_FMT = "%.17g"


@dataclass(frozen=True)
class FtsDataset:
    """Dense curve panel on one grid.

    ``values`` has shape (T, H, M); ``transform`` records any value-scale
    change already applied so it is not applied twice.
    """

    grid: Grid
    regions: tuple
    times: np.ndarray
    values: np.ndarray
    transform: str = "none"

    def __post_init__(self):
        t, h = len(self.times), len(self.regions)
        if len(set(self.regions)) != h or any(not r for r in self.regions):
            raise ContractError("FtsDataset: region names must be unique and non-empty")
        if self.values.shape != (t, h, self.grid.m):
            raise ContractError(
                f"FtsDataset: values shape {self.values.shape} does not match "
                f"(T={t}, H={h}, M={self.grid.m})")
        if t > 1 and np.any(np.diff(self.times) <= 0):
            raise ContractError("FtsDataset: times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("FtsDataset: values must be finite")

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def curve(self, t_idx: int, h_idx: int) -> Curve:
        return Curve(self.grid, self.values[t_idx, h_idx])

    def region_index(self, name: str) -> int:
        try:
            return self.regions.index(name)
        except ValueError:
            raise KeyError(f"unknown region {name!r}") from None


def write_curves(ds: FtsDataset, path):
    """Write the panel as long CSV, one row per (region, time, u)."""
    from .training import _atomic_write_text
    rows = [CURVE_HEADER]
    pts = ds.grid.points
    for h, name in enumerate(ds.regions):
        for t in range(ds.n_times):
            tv = _FMT % ds.times[t]
            vals = ds.values[t, h]
            for j in range(ds.grid.m):
                rows.append("%s,%s,%s,%s" % (name, tv, _FMT % pts[j], _FMT % vals[j]))
    _atomic_write_text(path, "\n".join(rows) + "\n")


def load_curves(path) -> FtsDataset:
    """Read a long-CSV panel back into a dense dataset.

    The file must contain every (region, time) combination on one shared
    grid.  Malformed rows raise ParseError with the line number, grid
    inconsistencies raise FormatError, and missing combinations raise
    IngestionError naming up to ten of them.
    """
    with open(path, "r", encoding="utf-8-sig") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != CURVE_HEADER:
        raise FormatError(f"{path}: expected header {CURVE_HEADER!r}")

    blocks = {}          # (region, time) -> list of (u, value)
    region_order = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"{path}:{i}: expected 4 fields, got {len(parts)}")
        region = parts[0].strip()
        if not region:
            raise ParseError(f"{path}:{i}: empty region name")
        try:
            tv, u, v = (float(parts[1]), float(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise ParseError(f"{path}:{i}: bad number ({exc})") from None
        if region not in region_order:
            region_order.append(region)
        blocks.setdefault((region, tv), []).append((u, v, i))

    if not blocks:
        raise IngestionError(f"{path}: no data rows")
    for rows in blocks.values():
        rows.sort(key=lambda r: r[0])        # row order in the file is free
    times = sorted({t for _, t in blocks})

    missing = [(r, t) for r in region_order for t in times if (r, t) not in blocks]
    if missing:
        shown = ", ".join(f"({r}, {_FMT % t})" for r, t in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise IngestionError(
            f"{path}: {len(missing)} missing (region, time) combinations: {shown}{more}")

    ref_key = (region_order[0], times[0])
    ref_u = np.array([u for u, _, _ in blocks[ref_key]])
    if len(ref_u) < 2 or np.any(np.diff(ref_u) <= 0):
        raise FormatError(
            f"{path}: grid for ({ref_key[0]}, {_FMT % ref_key[1]}) must be "
            f"strictly increasing with at least 2 points")
    values = np.empty((len(times), len(region_order), len(ref_u)))
    for hi, r in enumerate(region_order):
        for ti, t in enumerate(times):
            rows = blocks[(r, t)]
            u = np.array([x for x, _, _ in rows])
            if u.shape != ref_u.shape or not np.array_equal(u, ref_u):
                first_line = min(r[2] for r in rows)
                raise FormatError(
                    f"{path}: grid for ({r}, {_FMT % t}) near line {first_line} "
                    f"does not match the first block's grid")
            values[ti, hi] = [x for _, x, _ in rows]

    return FtsDataset(grid=Grid.from_points(ref_u), regions=tuple(region_order),
                      times=np.array(times), values=values)


def transform_log10(ds: FtsDataset) -> FtsDataset:
    """Apply log10 to every value; refuses non-positive data and datasets
    already on the log scale."""
    if ds.transform == "log10":
        raise ContractError("transform_log10: dataset is already log10-scaled")
    bad = int(np.count_nonzero(ds.values <= 0))
    if bad:
        raise DomainError(
            f"transform_log10: {bad} non-positive values; log10 needs strictly "
            f"positive data (min={ds.values.min():g})")
    return replace(ds, values=np.log10(ds.values), transform="log10")


def smooth_dataset(ds: FtsDataset, basis: BasisSystem) -> FtsDataset:
    """Project every curve onto the basis and evaluate it back on the grid."""
    if not basis.grid.same_as(ds.grid):
        raise ContractError("smooth_dataset: basis grid does not match dataset grid")
    out = np.empty_like(ds.values)
    for t in range(ds.n_times):
        for h in range(ds.n_regions):
            coeffs = project_curve(ds.curve(t, h), basis)
            out[t, h] = reconstruct(coeffs, basis).values
    return replace(ds, values=out)


def split_train_test(ds: FtsDataset, train_frac: float = 0.5):
    """Chronological split; the training block gets ceil(T * train_frac)
    time points and both blocks must be non-empty."""
    if not (0.0 < train_frac < 1.0):
        raise ConfigError("split_train_test: train_frac must lie in (0, 1)")
    n_train = math.ceil(ds.n_times * train_frac)
    if n_train >= ds.n_times:
        raise ConfigError(
            f"split_train_test: train_frac={train_frac} leaves no test block "
            f"for T={ds.n_times}")
    train = replace(ds, times=ds.times[:n_train], values=ds.values[:n_train])
    test = replace(ds, times=ds.times[n_train:], values=ds.values[n_train:])
    return train, test


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _parse_int_list(text: str):
    return tuple(int(p) for p in text.split(",") if p.strip())


# config-file key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "seed": ("seed", int),
    "out": ("out", str),
    "H": ("n_regions", int),
    "T": ("n_times", int),
    "K": ("n_processes", int),
    "lr": ("lr", float),
    "updates": ("updates", int),
    "batch": ("batch", int),
    "S": ("n_samples", int),
    "alpha": ("alpha", float),
    "delta": ("deltas", _parse_int_list),
    "threshold": ("threshold", float),
}


@dataclass(frozen=True)
class RunConfig:
    """End-to-end run parameters shared by the command-line tools."""

    seed: int = 0
    out: str = "out"
    n_regions: int = 10
    n_times: int = 50
    n_processes: int = 8
    lr: float = 0.05
    updates: int = 5000
    batch: int = 32
    n_samples: int = 500
    alpha: float = 0.05
    deltas: tuple = (1, 5, 10)
    threshold: float = 0.90

    def __post_init__(self):
        if self.n_regions < 1:
            raise ConfigError("H must be >= 1")
        if self.n_times < 2:
            raise ConfigError("T must be >= 2 (one time point cannot form a pair)")
        if self.n_processes < 1:
            raise ConfigError("K must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.updates < 1:
            raise ConfigError("updates must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.n_samples < 1:
            raise ConfigError("S must be >= 1")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.deltas or any(d < 1 for d in self.deltas):
            raise ConfigError("delta must list lead times >= 1")
        if not (self.threshold >= 0.0 and math.isfinite(self.threshold)):
            raise ConfigError("threshold must be a finite value >= 0 "
                              "(values above 1 yield an empty graph)")


def parse_config(path) -> dict:
    """Read a key=value file into RunConfig field overrides."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as f:
        for i, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{i}: expected key=value, got {raw.strip()!r}")
            key, text = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                known = ", ".join(sorted(CONFIG_KEYS))
                raise ConfigError(f"{path}:{i}: unknown key {key!r} (known: {known})")
            field_name, parser = CONFIG_KEYS[key]
            try:
                overrides[field_name] = parser(text)
            except ValueError as exc:
                raise ParseError(f"{path}:{i}: bad value for {key}: {exc}") from None
    return overrides


def resolve_config(file_overrides: dict | None = None,
                   cli_overrides: dict | None = None) -> RunConfig:
    """Apply precedence defaults < file < command line."""
    merged = {}
    merged.update(file_overrides or {})
    merged.update({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    return RunConfig(**merged)
