"""End-to-end command checks through main(), on small panels."""

import numpy as np
import pytest

from profnet.basis import make_basis
from profnet.cli import DEFAULT_BASIS_KIND, DEFAULT_BASIS_SIZE, build_parser, main, _resolve
from profnet.dataio import load_curves
from profnet.model import ModelConfig, ProfnetModel
from profnet.rng import rng_for
from profnet.training import TrainTrace, load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One simulated panel and one trained checkpoint shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--T", "12", "--H", "3", "--seed", "5",
                 "--out", str(root / "sim")]) == 0
    assert main(["train", str(root / "sim" / "dataset.csv"),
                 "--updates", "60", "--batch", "8", "--lr", "0.02",
                 "--seed", "5", "--out", str(root / "fit")]) == 0
    return root


def _data(workspace):
    return str(workspace / "sim" / "dataset.csv")


def _ckpt(workspace):
    return str(workspace / "fit" / "checkpoint.npz")


# -- simulate ---------------------------------------------------------------

def test_simulate_writes_panel_and_truth(workspace):
    ds = load_curves(_data(workspace))
    assert ds.n_times == 12 and ds.n_regions == 3
    assert (workspace / "sim" / "truth.npz").exists()


def test_simulate_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--T", "6", "--H", "2", "--seed", "9",
                     "--out", str(tmp_path / d)]) == 0
    assert ((tmp_path / "a" / "dataset.csv").read_bytes()
            == (tmp_path / "b" / "dataset.csv").read_bytes())


def test_simulate_rejects_a_single_time_point(tmp_path, capsys):
    assert main(["simulate", "--T", "1", "--out", str(tmp_path / "x")]) == 1
    assert "profnet: error:" in capsys.readouterr().err


# -- train ------------------------------------------------------------------

def test_train_outputs_checkpoint_and_trace(workspace):
    model, meta = load_checkpoint(_ckpt(workspace))
    assert meta["seed"] == 5
    assert meta["n_train"] == 6            # half of T=12
    assert meta["data"] == "dataset.csv"
    trace = TrainTrace.from_csv(workspace / "fit" / "trace.csv")
    assert trace.update[-1] == 60
    assert np.all(np.diff(trace.elapsed_ms) >= 0)
    assert model.config.n_regions == 3


def test_zero_rate_training_keeps_the_fresh_network(workspace, tmp_path):
    assert main(["train", _data(workspace), "--updates", "5", "--lr", "0",
                 "--seed", "5", "--out", str(tmp_path / "frozen")]) == 0
    model, _ = load_checkpoint(tmp_path / "frozen" / "checkpoint.npz")
    ds = load_curves(_data(workspace))
    basis = make_basis(DEFAULT_BASIS_KIND, DEFAULT_BASIS_SIZE, ds.grid)
    cfg = ModelConfig(n_regions=ds.n_regions, grid_size=ds.grid.m, n_processes=8)
    fresh = ProfnetModel.initialize(
        cfg, basis, rng_for(5, "init"),
        time_base=(float(ds.times[0]), float(ds.times[-1] - ds.times[0])))
    for name, arr in fresh.params.arrays().items():
        assert np.array_equal(model.params.arrays()[name], arr)


def test_train_reports_missing_data_file(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o")]) == 1
    assert "profnet: error:" in capsys.readouterr().err


# -- forecast ---------------------------------------------------------------

def test_forecast_emits_samples_and_band(workspace, tmp_path):
    out = tmp_path / "fc"
    assert main(["forecast", _ckpt(workspace), _data(workspace),
                 "--S", "40", "--seed", "5", "--out", str(out)]) == 0
    lines = (out / "forecast.csv").read_text().strip().split("\n")
    ds = load_curves(_data(workspace))
    assert len(lines) == 1 + 3 * 40 * ds.grid.m
    band = (out / "band_0.05.csv").read_text().strip().split("\n")
    assert band[0] == "region_tgt,t_tgt,u,lower,upper,mean"
    assert len(band) == 1 + 3 * ds.grid.m
    row = band[1].split(",")
    assert float(row[1]) == 12.0           # one step beyond labels 0..11
    assert float(row[3]) <= float(row[5]) <= float(row[4])


def test_forecast_is_reproducible(workspace, tmp_path):
    for d in ("a", "b"):
        assert main(["forecast", _ckpt(workspace), _data(workspace),
                     "--S", "15", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert ((tmp_path / "a" / "forecast.csv").read_bytes()
            == (tmp_path / "b" / "forecast.csv").read_bytes())


def test_repeated_alpha_flags_give_nested_band_files(workspace, tmp_path):
    out = tmp_path / "bands"
    assert main(["forecast", _ckpt(workspace), _data(workspace),
                 "--S", "60", "--seed", "4", "--alpha", "0.05",
                 "--alpha", "0.2", "--out", str(out)]) == 0
    wide = (out / "band_0.05.csv").read_text().strip().split("\n")[1:]
    narrow = (out / "band_0.2.csv").read_text().strip().split("\n")[1:]
    assert len(wide) == len(narrow)
    for w, n in zip(wide, narrow):
        wlo, whi = float(w.split(",")[3]), float(w.split(",")[4])
        nlo, nhi = float(n.split(",")[3]), float(n.split(",")[4])
        assert wlo <= nlo and nhi <= whi


def test_single_sample_forecast_skips_bands(workspace, tmp_path, capsys):
    out = tmp_path / "one"
    assert main(["forecast", _ckpt(workspace), _data(workspace),
                 "--S", "1", "--seed", "2", "--out", str(out)]) == 0
    assert (out / "forecast.csv").exists()
    assert not list(out.glob("band_*.csv"))
    assert "skipping quantile bands" in capsys.readouterr().out


def test_forecast_rejects_mismatched_grid(workspace, tmp_path, capsys):
    rows = ["region,time,u,value"]
    for t in (0, 1):
        for u in (0.0, 0.5, 1.0):
            rows.append(f"a,{t},{u},1.0")
    small = tmp_path / "small.csv"
    small.write_text("\n".join(rows) + "\n")
    assert main(["forecast", _ckpt(workspace), str(small),
                 "--out", str(tmp_path / "o")]) == 1
    assert "profnet: error:" in capsys.readouterr().err


# -- evaluate ---------------------------------------------------------------

def test_evaluate_scores_each_lead_time(workspace, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", _ckpt(workspace), _data(workspace),
                 "--S", "30", "--delta", "1,3", "--seed", "5",
                 "--out", str(out)]) == 0
    lines = (out / "evaluation.csv").read_text().strip().split("\n")
    assert lines[0] == "delta,n_cases,msfe_mean,msfe_single,coverage"
    assert len(lines) == 3
    d1 = lines[1].split(",")
    assert int(d1[0]) == 1
    assert int(d1[1]) == 6 * 3             # six test times, three regions
    assert (out / "association.csv").exists()
    assert "delta=1:" in capsys.readouterr().out


def test_unreachable_threshold_empties_the_association_file(workspace, tmp_path):
    out = tmp_path / "thr"
    assert main(["evaluate", _ckpt(workspace), _data(workspace),
                 "--S", "20", "--delta", "1", "--threshold", "1.1",
                 "--seed", "5", "--out", str(out)]) == 0
    assert (out / "association.csv").read_text() == "src,tgt,coverage\n"


# -- bench ------------------------------------------------------------------

def test_bench_times_every_process_count(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--updates", "30", "--batch", "4", "--lr", "0.01",
                 "--seed", "1", "--out", str(out)]) == 0
    lines = (out / "bench.csv").read_text().strip().split("\n")
    assert lines[0] == "n_processes,updates,elapsed_ms,ms_per_10k_updates"
    ks = [int(ln.split(",")[0]) for ln in lines[1:]]
    assert ks == [8, 32, 128, 512]
    for k in ks:
        assert (out / f"trace_k{k}.csv").exists()
    per10k = [float(ln.split(",")[3]) for ln in lines[1:]]
    assert all(p > 0 for p in per10k)


# -- configuration plumbing -------------------------------------------------

def test_cli_flags_beat_the_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T = 12\nalpha = 0.2\nseed = 3\n")
    args = build_parser().parse_args(
        ["simulate", "--config", str(cfg), "--T", "14"])
    rc = _resolve(args)
    assert rc.n_times == 14              # flag wins
    assert rc.alpha == 0.2               # file wins over default
    assert rc.seed == 3


def test_first_alpha_flag_feeds_the_run_config():
    args = build_parser().parse_args(
        ["evaluate", "c.npz", "d.csv", "--alpha", "0.1", "--alpha", "0.3"])
    assert _resolve(args).alpha == 0.1


def test_unknown_config_key_fails_cleanly(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lrr = 0.1\n")
    assert main(["simulate", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "profnet: error:" in err and "lrr" in err
