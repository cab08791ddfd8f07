import csv

import pytest

from cogru_e2e import cli
from cogru_e2e.config import (PROFILES, BenchmarkConfig, ConfigError, dump_config, load_config,
                              load_config_file, to_dict)
from cogru_e2e.dsp import SyncError

TINY = """\
seed: 11
link:
  n_spans: 1
dsp:
  sync_preamble_len: 64
nlin:
  fit: false
  sigma_ase_sq: 1.0e-3
  eta_nl: 8.0e-4
  kappa_coeff: 4.0e-4
train:
  M: 16
  n_symbols: 512
  block: 128
  edge_discard: 16
  gru_hidden: 4
  dnn_hidden: [8]
  phase1_epochs: 2
  phase2_epochs: 2
  phase3_periods: 2
  schedule:
    period_epochs: 3
    joint_epochs: 1
    select_tail: 2
sweep:
  powers_dbm: [-1.0, 0.0]
  distances_km: [0.0, 80.0]
  n_symbols: 1024
benchmark:
  n_symbols: 512
  windows: [11, 21]
  hidden: 4
  block: 128
  edge_discard: 16
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def _run(*args):
    return cli.main([str(a) for a in args])


# --- config ------------------------------------------------------------------

def test_desk_defaults():
    cfg = load_config()
    assert (cfg.link.n_channels, cfg.link.n_spans, cfg.link.span_km, cfg.link.sps) == (1, 4, 80.0, 8)
    assert (cfg.train.M, cfg.train.n_symbols) == (64, 4096)
    assert (cfg.train.phase1_epochs, cfg.train.phase2_epochs, cfg.train.phase3_periods) == (200, 200, 2)


def test_paper_profile_overrides():
    cfg = load_config(profile="paper")
    assert cfg.link.n_channels == 5
    assert cfg.link.n_spans * cfg.link.span_km == 960.0
    assert cfg.train.phase2_epochs == 2000
    assert set(PROFILES) == {"desk", "paper"}


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError, match=r"line 3: link\.spans: unknown key"):
        load_config("seed: 1\nlink:\n  spans: 3\n")


def test_type_errors_carry_line():
    with pytest.raises(ConfigError, match=r"line 2: train\.M: expected an integer"):
        load_config("train:\n  M: sixty-four\n")
    with pytest.raises(ConfigError, match=r"line 1: nlin\.fit|line 2: nlin\.fit"):
        load_config("nlin:\n  fit: 1\n")


def test_invariant_violation_is_config_error():
    with pytest.raises(ConfigError, match="eq_taps"):
        load_config("dsp:\n  eq_taps: 10\n")
    with pytest.raises(ConfigError, match="warmup"):
        load_config("benchmark:\n  warmup: 1\n")


def test_duplicate_and_malformed():
    with pytest.raises(ConfigError, match="duplicate"):
        load_config("seed: 1\nseed: 2\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config("link: [\n")
    with pytest.raises(ConfigError):
        load_config("- 1\n- 2\n")


def test_seed_range_and_hidden_train_seed():
    with pytest.raises(ConfigError):
        load_config(seed=-1)
    assert load_config(seed=2 ** 64 - 1).seed == 2 ** 64 - 1
    with pytest.raises(ConfigError, match="unknown key"):
        load_config("train:\n  seed: 4\n")
    assert load_config(seed=9).train_config().seed == 9


def test_resolved_config_round_trip(tiny):
    cfg = load_config_file(tiny)
    text = dump_config(cfg)
    again = load_config(text)
    assert again == cfg
    assert dump_config(again) == text
    assert set(to_dict(cfg)) == {"seed", "link", "dsp", "nlin", "train", "sweep", "benchmark"}


# --- CLI ---------------------------------------------------------------------

def test_exit_codes(tmp_path, tiny, monkeypatch):
    bad = tmp_path / "bad.yaml"
    bad.write_text("link:\n  spans: 1\n")
    assert _run("simulate", "--config", bad, "--out", tmp_path / "o1") == cli.EXIT_CONFIG
    assert _run("simulate", "--config", tmp_path / "missing.yaml", "--out", tmp_path / "o2") == cli.EXIT_CONFIG
    assert _run("simulate", "--config", tiny, "--phase", "I", "--out", tmp_path / "o3") == cli.EXIT_CONFIG
    assert _run("evaluate", "--config", tiny, "--out", tmp_path / "o4") == cli.EXIT_CONFIG
    assert _run("train", "--config", tiny, "--phase", "III", "--out", tmp_path / "o5") == cli.EXIT_CONFIG

    diverge = tmp_path / "diverge.yaml"
    diverge.write_text(TINY.replace("sync_preamble_len: 64", "sync_preamble_len: 64\n  eq_mu: 50.0"))
    assert _run("simulate", "--config", diverge, "--out", tmp_path / "o6") == cli.EXIT_NUMERIC

    def lost(*a, **k):
        raise SyncError("no correlation peak")

    monkeypatch.setitem(cli.COMMANDS, "simulate", lost)
    assert _run("simulate", "--config", tiny, "--out", tmp_path / "o7") == cli.EXIT_SYNC


def test_simulate_rows_and_reproducible_bytes(tmp_path, tiny):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert _run("simulate", "--config", tiny, "--out", out) == cli.EXIT_OK
    names = sorted(p.name for p in outs[0].iterdir())
    assert "simulate.csv" in names and "resolved_config.yaml" in names
    assert "symbols_000.csv" in names and "symbols_003.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    with open(outs[0] / "simulate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert tuple(rows[0]) == cli.REPORT_FIELDS
    back_to_back = [r for r in rows if float(r["distance_km"]) == 0.0]
    assert all(float(r["ber"]) == 0.0 and float(r["evm_db"]) < -35 for r in back_to_back)


def test_resolved_config_reproduces_run(tmp_path, tiny):
    assert _run("simulate", "--config", tiny, "--out", tmp_path / "a") == 0
    resolved = tmp_path / "a" / "resolved_config.yaml"
    assert _run("simulate", "--config", resolved, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "simulate.csv").read_bytes() == (tmp_path / "b" / "simulate.csv").read_bytes()
    assert resolved.read_bytes() == (tmp_path / "b" / "resolved_config.yaml").read_bytes()


def test_seed_flag_changes_output(tmp_path, tiny):
    _run("simulate", "--config", tiny, "--out", tmp_path / "a")
    _run("simulate", "--config", tiny, "--seed", 12, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "symbols_001.csv").read_bytes() != (tmp_path / "b" / "symbols_001.csv").read_bytes()


@pytest.mark.slow
def test_train_evaluate_pipeline_and_phase_resume(tmp_path, tiny):
    full, split = tmp_path / "full", tmp_path / "split"
    assert _run("train", "--config", tiny, "--out", full) == 0
    for phase in ("I", "II", "III"):
        assert _run("train", "--config", tiny, "--phase", phase, "--out", split) == 0
    for name in ("history.csv", "constellation_e2e.txt"):
        assert (full / name).read_bytes() == (split / name).read_bytes(), name
    assert (full / "final.ckpt").exists()

    assert _run("evaluate", "--config", tiny, "--out", full, "--plots") == 0
    text = (full / "evaluate.csv").read_text()
    assert text.startswith("# full-scale reference")
    rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
    assert {(r["system"], r["p_dbm"], r["distance_km"]) for r in rows} == {
        (s, p, d) for s in ("e2e", "qam") for p in ("-1", "0") for d in ("0", "80")}
    assert (full / "evaluate.png").exists()
    assert (full / "constellation_qam.txt").exists()

    first = (full / "evaluate.csv").read_bytes()
    assert _run("evaluate", "--config", tiny, "--out", full) == 0
    assert (full / "evaluate.csv").read_bytes() == first


def test_dump_constellation_without_checkpoint(tmp_path, tiny):
    assert _run("dump-constellation", "--config", tiny, "--out", tmp_path) == 0
    lines = (tmp_path / "constellation_qam.txt").read_text().splitlines()
    assert lines[0] == "# index label real imag"
    assert len(lines) == 17
    assert not (tmp_path / "constellation_e2e.txt").exists()


def test_benchmark_command(tmp_path, tiny):
    assert _run("benchmark", "--config", tiny, "--out", tmp_path, "--plots") == 0
    with open(tmp_path / "benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["model"], r["window"], r["direction"]) for r in rows} == {
        (m, w, d) for m in ("cogru", "bigru") for w in ("11", "21") for d in ("forward", "backward")}
    assert all(int(r["repeats"]) == BenchmarkConfig().repeats for r in rows)
    assert (tmp_path / "benchmark.png").exists()
