"""Command-line front end.

Subcommands: ``simulate`` writes a synthetic panel and its truth record,
``train`` fits a model on the chronological first half of a panel,
``forecast`` emits per-region prediction bands beyond the panel's end,
``evaluate`` scores a checkpoint on the held-out half, and ``bench``
measures training throughput as the latent process count grows.

Every output file is written atomically (temp file + rename) and the
process exits 0 only after all requested outputs exist.  Failures print a
single diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .basis import make_basis
from .dataio import (CONFIG_KEYS, RunConfig, load_curves, parse_config,
                     resolve_config, split_train_test, write_curves)
from .errors import ProfnetError
from .forecasting import (association_graph, evaluate_delta, forecast_ensemble,
                          quantile_band)
from .model import ModelConfig, ProfnetModel
from .rng import rng_for
from .synthgen import SimConfig, save_truth, simulate_dataset
from .training import (TrainConfig, _atomic_write_text, load_checkpoint,
                       save_checkpoint, train)

_FMT = "%.17g"

DEFAULT_BASIS_KIND = "bspline"
DEFAULT_BASIS_SIZE = 15
BENCH_PROCESS_COUNTS = (8, 32, 128, 512)


def _add_common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file with run parameters")
    p.add_argument("--seed", type=int, help="master seed for all random streams")
    p.add_argument("--out", help="output directory")
    p.add_argument("--H", type=int, help="number of regions")
    p.add_argument("--T", type=int, help="number of time points")
    p.add_argument("--K", type=int, help="number of latent processes")
    p.add_argument("--lr", type=float, help="SGD learning rate")
    p.add_argument("--updates", type=int, help="number of SGD updates")
    p.add_argument("--batch", type=int, help="pairs per update")
    p.add_argument("--S", type=int, help="Monte Carlo samples per forecast")
    p.add_argument("--alpha", type=float, action="append",
                   help="band miss level, e.g. 0.05; repeat for several bands")
    p.add_argument("--delta", help="comma-separated forecast lead times")
    p.add_argument("--threshold", type=float, help="association coverage threshold")


def _resolve(args) -> RunConfig:
    file_overrides = parse_config(args.config) if args.config else None
    cli = {}
    for flag, (field, parser) in CONFIG_KEYS.items():
        if flag == "out":
            continue
        raw = getattr(args, flag, None)
        if raw is None:
            continue
        if flag == "alpha":          # repeatable; RunConfig keeps the first
            raw = raw[0]
        cli[field] = parser(raw) if isinstance(raw, str) and parser is not str else raw
    if getattr(args, "out", None) is not None:
        cli["out"] = args.out
    return resolve_config(file_overrides, cli)


def _outdir(rc: RunConfig) -> str:
    os.makedirs(rc.out, exist_ok=True)
    return rc.out


def _model_from_dataset(rc: RunConfig, ds) -> ProfnetModel:
    basis = make_basis(DEFAULT_BASIS_KIND, DEFAULT_BASIS_SIZE, ds.grid)
    cfg = ModelConfig(n_regions=ds.n_regions, grid_size=ds.grid.m,
                      n_processes=rc.n_processes)
    time_base = (float(ds.times[0]),
                 float(ds.times[-1] - ds.times[0]) if ds.n_times > 1 else 1.0)
    return ProfnetModel.initialize(cfg, basis, rng_for(rc.seed, "init"),
                                   time_base=time_base)


def _cmd_simulate(args) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    sim = SimConfig(n_times=rc.n_times, n_regions=rc.n_regions)
    ds, truth = simulate_dataset(sim, rc.seed)
    data_path = os.path.join(out, "dataset.csv")
    truth_path = os.path.join(out, "truth.npz")
    write_curves(ds, data_path)
    save_truth(truth, truth_path)
    print(f"wrote {data_path} (T={ds.n_times} H={ds.n_regions} M={ds.grid.m}) "
          f"and {truth_path}")
    return 0


def _cmd_train(args) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    ds = load_curves(args.data)
    train_ds, _ = split_train_test(ds, 0.5)
    model = _model_from_dataset(rc, ds)
    tc = TrainConfig(lr=rc.lr, updates=rc.updates, batch=rc.batch)
    trace = train(model, train_ds.values, train_ds.times, tc, rc.seed)
    ckpt_path = os.path.join(out, "checkpoint.npz")
    trace_path = os.path.join(out, "trace.csv")
    save_checkpoint(model, ckpt_path,
                    meta={"seed": rc.seed, "n_train": train_ds.n_times,
                          "data": os.path.basename(args.data)})
    trace.to_csv(trace_path)
    print(f"trained {rc.updates} updates in {trace.elapsed_ms[-1] / 1e3:.1f}s "
          f"(final loss {trace.total[-1]:.4f}); wrote {ckpt_path}, {trace_path}")
    return 0


def _cmd_forecast(args) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_curves(args.data)
    if ds.n_times < 2:
        raise ProfnetError("forecast needs at least 2 time points to infer the step")
    alphas = [float(a) for a in (args.alpha or [rc.alpha])]
    delta = rc.deltas[0]
    t_last = float(ds.times[-1])
    step = float(ds.times[-1] - ds.times[-2])
    tp = t_last + delta * step
    rng = rng_for(rc.seed, "forecast")
    sample_rows = ["region_src,region_tgt,t_src,t_tgt,u,sample_id,value"]
    band_rows = {a: ["region_tgt,t_tgt,u,lower,upper,mean"] for a in alphas}
    for h, name in enumerate(ds.regions):
        ens = forecast_ensemble(model, ds.curve(ds.n_times - 1, h), h, h,
                                t_last, tp, rc.n_samples, rng)
        head = "%s,%s,%s,%s" % (name, name, _FMT % t_last, _FMT % tp)
        for s in range(ens.n_samples):
            for j in range(ds.grid.m):
                sample_rows.append("%s,%s,%d,%s" % (
                    head, _FMT % ds.grid.points[j], s, _FMT % ens.samples[s, j]))
        if rc.n_samples >= 2:
            for a in alphas:
                band = quantile_band(ens, a)
                for j in range(ds.grid.m):
                    band_rows[a].append("%s,%s,%s,%s,%s,%s" % (
                        name, _FMT % tp, _FMT % ds.grid.points[j],
                        _FMT % band.lower[j], _FMT % band.upper[j],
                        _FMT % band.mean[j]))
    fc_path = os.path.join(out, "forecast.csv")
    _atomic_write_text(fc_path, "\n".join(sample_rows) + "\n")
    written = [fc_path]
    if rc.n_samples >= 2:
        for a in alphas:
            path = os.path.join(out, f"band_{a:g}.csv")
            _atomic_write_text(path, "\n".join(band_rows[a]) + "\n")
            written.append(path)
    else:
        print("single-sample ensemble: skipping quantile bands")
    print(f"wrote {', '.join(written)} (lead {delta}, {ds.n_regions} regions, "
          f"{rc.n_samples} samples)")
    return 0


def _cmd_evaluate(args) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    model, _ = load_checkpoint(args.checkpoint)
    ds = load_curves(args.data)
    train_ds, _ = split_train_test(ds, 0.5)
    n_train = train_ds.n_times
    rng = rng_for(rc.seed, "forecast")
    rows = ["delta,n_cases,msfe_mean,msfe_single,coverage"]
    for d in rc.deltas:
        rep = evaluate_delta(model, ds.values, ds.times, n_train, d,
                             rc.n_samples, rc.alpha, rng)
        rows.append("%d,%d,%s,%s,%s" % (
            rep.delta, rep.n_cases, _FMT % rep.msfe_mean,
            _FMT % rep.msfe_single, _FMT % rep.coverage))
        print(f"delta={rep.delta}: msfe_mean={rep.msfe_mean:.5f} "
              f"msfe_single={rep.msfe_single:.5f} coverage={rep.coverage:.3f} "
              f"({rep.n_cases} cases)")
    eval_path = os.path.join(out, "evaluation.csv")
    _atomic_write_text(eval_path, "\n".join(rows) + "\n")
    graph = association_graph(model, ds.values, ds.times, n_train,
                              rc.threshold, rc.n_samples, rc.alpha, rng)
    graph_path = os.path.join(out, "association.csv")
    graph.to_csv(graph_path)
    best = graph.best_coverage()
    print(f"association: {len(graph.edges)} edges at threshold "
          f"{rc.threshold:g}, best-source coverage "
          f"min={best.min():.3f} mean={best.mean():.3f}; "
          f"wrote {eval_path}, {graph_path}")
    return 0


def bench_scaling(rc: RunConfig, process_counts=BENCH_PROCESS_COUNTS):
    """Train one small model per process count and time the updates.

    Returns (results, traces): results rows are (K, updates, elapsed_ms,
    ms_per_10k_updates); traces maps K to the TrainTrace.
    """
    sim = SimConfig(n_times=30, n_regions=5)
    ds, _ = simulate_dataset(sim, rc.seed)
    results = []
    traces = {}
    for k in process_counts:
        model = _model_from_dataset(replace(rc, n_processes=int(k)), ds)
        tc = TrainConfig(lr=rc.lr, updates=rc.updates, batch=rc.batch)
        trace = train(model, ds.values, ds.times, tc, rc.seed)
        elapsed = float(trace.elapsed_ms[-1])
        results.append((int(k), rc.updates, elapsed,
                        elapsed / rc.updates * 1e4))
        traces[int(k)] = trace
    return results, traces


def _cmd_bench(args) -> int:
    rc = _resolve(args)
    out = _outdir(rc)
    results, traces = bench_scaling(rc)
    rows = ["n_processes,updates,elapsed_ms,ms_per_10k_updates"]
    for k, updates, elapsed, per10k in results:
        rows.append("%d,%d,%s,%s" % (k, updates, _FMT % elapsed, _FMT % per10k))
        traces[k].to_csv(os.path.join(out, f"trace_k{k}.csv"))
        print(f"K={k}: {per10k / 1e3:.2f}s per 10k updates "
              f"(final loss {traces[k].total[-1]:.4f})")
    path = os.path.join(out, "bench.csv")
    _atomic_write_text(path, "\n".join(rows) + "\n")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="profnet",
        description="Probabilistic functional network for curve panel forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a synthetic panel")
    _add_common_flags(sp)
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("train", help="fit a model on the first half of a panel")
    sp.add_argument("data", help="panel CSV (region,time,u,value)")
    _add_common_flags(sp)
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("forecast", help="emit per-region bands beyond the panel")
    sp.add_argument("checkpoint", help="model checkpoint (.npz)")
    sp.add_argument("data", help="panel CSV (region,time,u,value)")
    _add_common_flags(sp)
    sp.set_defaults(fn=_cmd_forecast)

    sp = sub.add_parser("evaluate", help="score a checkpoint on the held-out half")
    sp.add_argument("checkpoint", help="model checkpoint (.npz)")
    sp.add_argument("data", help="panel CSV (region,time,u,value)")
    _add_common_flags(sp)
    sp.set_defaults(fn=_cmd_evaluate)

    sp = sub.add_parser("bench", help="time training across latent process counts")
    _add_common_flags(sp)
    sp.set_defaults(fn=_cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ProfnetError, OSError, ValueError) as exc:
        print(f"profnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
