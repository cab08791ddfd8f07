"""Command-line runner: simulate | train | evaluate | benchmark | dump-constellation.

Every command writes ``resolved_config.yaml`` and CSV tables (17 significant
digits) into ``--out``. ``--plots`` additionally renders PNG figures beside
the tables. Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 sync failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark, nn, signal, training
from .config import ConfigError, dump_config, load_config, load_config_file
from .dsp import EqualizerDivergence, SyncError
from .metrics import MetricReport
from .training import Trainer, TrainingAborted, write_csv

log = logging.getLogger("cogru_e2e")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SYNC = 0, 2, 3, 4

REPORT_FIELDS = ("system", "p_dbm", "distance_km") + tuple(MetricReport.__dataclass_fields__)
REFERENCE_NOTE = ("# full-scale reference (5 ch, 960 km): GMI gain up to 0.2 bits/sym, "
                  "Q2 gain up to 0.48 dB near the optimum power; not asserted here\n")
PHASE_CKPT = {"I": None, "II": "phase1", "III": "phase2"}


def _write_report(path, rows, note=""):
    write_csv(path, REPORT_FIELDS, rows)
    if note:
        text = Path(path).read_text()
        Path(path).write_text(note + text)


def _symbols_csv(path, tx, rx):
    rows = [{"pol": p, "k": k, "tx_re": tx[p, k].real, "tx_im": tx[p, k].imag,
             "rx_re": rx[p, k].real, "rx_im": rx[p, k].imag}
            for p in range(tx.shape[0]) for k in range(tx.shape[1])]
    write_csv(path, ("pol", "k", "tx_re", "tx_im", "rx_re", "rx_im"), rows)


def cmd_simulate(cfg, out: Path, plots=False):
    qam = signal.square_qam(cfg.train.M)
    results = training.evaluate({"qam": (qam, None)}, cfg.link, cfg.dsp, cfg.sweep.n_symbols,
                                cfg.sweep.powers_dbm, cfg.sweep.distances_km, cfg.seed,
                                cfg.sweep.workers, keep_symbols=True)
    rows = []
    for g, (row, tx, rx) in enumerate(results):
        rows.append(row)
        _symbols_csv(out / f"symbols_{g:03d}.csv", tx, rx)
    _write_report(out / "simulate.csv", rows)
    if plots:
        from . import plots as P
        P.plot_sweep(out / "simulate.csv")
    return rows


def _nlin(cfg, out: Path):
    if not cfg.nlin.fit:
        return cfg.nlin.coefficients()
    tc = cfg.train_config()
    nl = training.estimate_nlin(cfg.link, cfg.dsp, tc.n_symbols, tc.nlin_fit_powers, cfg.seed)
    write_csv(out / "nlin.csv", ("sigma_ase_sq", "eta_nl", "kappa_coeff"), [vars(nl)])
    return nl


def cmd_train(cfg, out: Path, phase=None, plots=False):
    """Runs Phases I-III, or one phase resuming from the previous phase's checkpoint."""
    phases = ("I", "II", "III") if phase is None else (phase,)
    trainer = Trainer(cfg.train_config(), cfg.link, cfg.dsp, out_dir=out)
    if "I" in phases:
        trainer.nlin = _nlin(cfg, out)
        for name in ("history.csv", "timing.csv"):
            (out / name).unlink(missing_ok=True)
    else:
        ckpt = out / f"{PHASE_CKPT[phases[0]]}.ckpt"
        if not ckpt.exists():
            raise ConfigError(f"--phase {phases[0]} needs {ckpt} from the previous phase")
        trainer.load(nn.load_arrays(ckpt))
        if phases[0] == "III":
            trainer.state.phase = "II"
    trainer.run(phases)
    signal.write_constellation(out / "constellation_e2e.txt", trainer.encoder.constellation())
    if plots:
        from . import plots as P
        P.plot_history(out / "history.csv")
        P.plot_constellation(out / "constellation_e2e.txt")
    return trainer


def _load_trained(cfg, out: Path):
    for name in ("final", "phase2", "phase1"):
        ckpt = out / f"{name}.ckpt"
        if ckpt.exists():
            trainer = Trainer(cfg.train_config(), cfg.link, cfg.dsp)
            trainer.load(nn.load_arrays(ckpt))
            log.info("loaded %s", ckpt)
            return trainer
    raise ConfigError(f"no checkpoint (final/phase2/phase1) in {out}; run train first")


def cmd_evaluate(cfg, out: Path, plots=False):
    trainer = _load_trained(cfg, out)
    const = trainer.encoder.constellation()
    qam = signal.square_qam(cfg.train.M)
    rows = training.evaluate({"e2e": (const, trainer.decoder), "qam": (qam, None)},
                             cfg.link, cfg.dsp, cfg.sweep.n_symbols, cfg.sweep.powers_dbm,
                             cfg.sweep.distances_km, cfg.seed + 1, cfg.sweep.workers)
    _write_report(out / "evaluate.csv", rows, REFERENCE_NOTE)
    signal.write_constellation(out / "constellation_e2e.txt", const)
    signal.write_constellation(out / "constellation_qam.txt", qam)
    if plots:
        from . import plots as P
        P.plot_sweep(out / "evaluate.csv")
        P.plot_constellation(out / "constellation_e2e.txt")
        P.plot_constellation(out / "constellation_qam.txt")
    return rows


def cmd_benchmark(cfg, out: Path, plots=False):
    rows = benchmark.run_benchmark(cfg.benchmark, cfg.seed)
    write_csv(out / "benchmark.csv", benchmark.FIELDS, rows)
    for (w, d), s in sorted(benchmark.speedups(rows).items()):
        log.info("window %d %s: Co-GRU %.1fx faster", w, d, s)
    if plots:
        from . import plots as P
        P.plot_benchmark(out / "benchmark.csv")
    return rows


def cmd_dump_constellation(cfg, out: Path, plots=False):
    qam = signal.square_qam(cfg.train.M)
    signal.write_constellation(out / "constellation_qam.txt", qam)
    paths = [out / "constellation_qam.txt"]
    try:
        trainer = _load_trained(cfg, out)
    except ConfigError:
        log.info("no trained checkpoint; wrote the square-QAM reference only")
    else:
        signal.write_constellation(out / "constellation_e2e.txt", trainer.encoder.constellation())
        paths.append(out / "constellation_e2e.txt")
    if plots:
        from . import plots as P
        for p in paths:
            P.plot_constellation(p)
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "dump-constellation": cmd_dump_constellation,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="cogru-e2e", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML overrides on top of the profile")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--phase", choices=("I", "II", "III"), help="train one phase only")
    ap.add_argument("--profile", choices=("desk", "paper"), default="desk")
    ap.add_argument("--plots", action="store_true", help="also render PNG figures")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            cfg = load_config_file(args.config, args.profile, args.seed)
        else:
            cfg = load_config("", args.profile, args.seed)
        if args.phase and args.command != "train":
            raise ConfigError("--phase only applies to train")
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "resolved_config.yaml").write_text(dump_config(cfg))
        kwargs = {"phase": args.phase} if args.command == "train" else {}
        with np.errstate(over="raise", invalid="raise"):
            COMMANDS[args.command](cfg, args.out, plots=args.plots, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SyncError as exc:
        print(f"sync failure: {exc}", file=sys.stderr)
        return EXIT_SYNC
    except (TrainingAborted, EqualizerDivergence, FloatingPointError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
