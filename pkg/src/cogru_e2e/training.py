"""Three-phase end-to-end training and paired evaluation.

Phase I trains encoder and DNN decoder jointly over the NLIN noise model.
Phase II freezes the encoder and fits the Co-GRU surrogate (b) and the decoder
(c) on fresh SSFM + DSP data every epoch. Phase III alternates: in the first
epochs of each period the encoder learns through the surrogate (a) while (b)
and (c) keep tracking the physical channel; the rest of the period is
decoder-only. The period whose tail has the lowest mean BER wins.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import channel, metrics, nn
from .autoencoder import (DecoderCoGru, DecoderDnn, Encoder, Surrogate, hard_bits,
                          scatter_points_grad, surrogate_fit_step)
from .channel import LinkConfig, NlinConfig
from .dsp import DspConfig, SyncError
from .link import Frame, frame_indices, run_link, to_complex, to_real
from .signal import Constellation, square_qam

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "phase", "period", "phase_epoch", "loss", "mse_surrogate", "ber", "gmi")


class TrainingAborted(RuntimeError):
    pass


class SyncAborted(TrainingAborted, SyncError):
    """Every retry of a training frame lost frame sync."""


@dataclass
class PhaseSchedule:
    """Learning rates and per-epoch operation counts.

    (a) encoder step, (b) surrogate step, (c) decoder step.
    """

    phase1_lr_a: float = 1e-3
    phase1_lr_c: float = 1e-3
    phase2_lr_b: float = 1e-3
    phase2_lr_c: float = 1e-2
    phase3_lr_a: float = 1e-3
    phase3_lr_b: float = 1e-3
    phase3_lr_c: float = 1e-3
    phase1_steps: int = 10
    phase2_b: int = 10
    phase2_c: int = 10
    period_epochs: int = 100
    joint_epochs: int = 25
    joint_a: int = 2
    joint_b: int = 10
    joint_c: int = 2
    decoder_b: int = 10
    decoder_c: int = 10
    select_tail: int = 75

    def __post_init__(self):
        for name, v in vars(self).items():
            if name.startswith("phase") and "_lr_" in name and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.joint_epochs <= self.period_epochs:
            raise ValueError("joint_epochs must lie within the period")
        if not 0 < self.select_tail <= self.period_epochs:
            raise ValueError("select_tail must lie within the period")

    def phase3_counts(self, epoch_in_period):
        """(a, b, c) counts for a 1-based epoch inside a Phase III period."""
        if not 1 <= epoch_in_period <= self.period_epochs:
            raise ValueError(f"epoch {epoch_in_period} outside a {self.period_epochs}-epoch period")
        if epoch_in_period <= self.joint_epochs:
            return self.joint_a, self.joint_b, self.joint_c
        return 0, self.decoder_b, self.decoder_c


@dataclass
class TrainConfig:
    M: int = 64
    n_symbols: int = 4096
    p_dbm: float = -1.0
    phase1_epochs: int = 200
    phase2_epochs: int = 200
    phase3_periods: int = 2
    decoder: str = "cogru"
    gru_hidden: int = 32
    dnn_hidden: tuple = (64, 64)
    edge_discard: int = 64
    block: int = 256
    seed: int = 1
    nlin_fit_powers: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0)
    max_retries: int = 5
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)

    def __post_init__(self):
        if self.decoder not in ("cogru", "dnn"):
            raise ValueError(f"decoder must be 'cogru' or 'dnn', got {self.decoder!r}")
        if self.n_symbols % self.block:
            raise ValueError("n_symbols must be a multiple of block")
        if self.M not in (4, 16, 64, 256):
            raise ValueError("M must be 4, 16, 64 or 256")


@dataclass
class TrainState:
    phase: str = "I"
    epoch: int = 0
    phase_epoch: int = 0
    period: int = 0
    seed_base: int = 1
    history: list = field(default_factory=list)
    optimizers: dict = field(default_factory=dict)
    plateau_mse: float = float("inf")


def select_period(bers, period_epochs=100, tail=75):
    """Index of the period with the lowest mean BER over its last ``tail`` epochs.

    Only complete periods count; ties go to the earlier period.
    """
    bers = np.asarray(bers, float)
    n = len(bers) // period_epochs
    if n == 0:
        raise ValueError("no complete period in the history")
    means = [bers[(k + 1) * period_epochs - tail:(k + 1) * period_epochs].mean() for k in range(n)]
    return int(np.argmin(means))


def estimate_nlin(link: LinkConfig, dcfg: DspConfig, n_symbols, powers, seed):
    """Fit NLIN coefficients to SSFM + DSP error variance of 64-QAM and QPSK."""
    frame = Frame.from_config(n_symbols, dcfg)
    p_all, mu_all, var_all = [], [], []
    for j, const in enumerate((square_qam(64), square_qam(4))):
        for k, p in enumerate(powers):
            rng = np.random.default_rng([seed, j, k])
            sym = const.points[frame_indices(frame, const.M, rng)]
            rx = run_link(sym, const, link, dcfg, frame, p, rng)
            pay = frame.payload
            p_all.append(p)
            mu_all.append(const.kurtosis())
            var_all.append(metrics.fit_noise_variance(sym[:, pay], rx[:, pay]))
    return channel.fit_nlin(p_all, mu_all, var_all)


class Trainer:
    """Holds the networks, optimizers and history of one training run.

    ``channel_fn(symbols, constellation, rng) -> rx`` maps (2, n) complex
    frame symbols to post-DSP symbols; by default it is the full SSFM link.
    Every optimizer call is logged in ``ops`` as ``(phase, phase_epoch, op, lr)``.
    """

    def __init__(self, cfg: TrainConfig, link: LinkConfig, dcfg: DspConfig,
                 nlin: NlinConfig | None = None, out_dir=None, channel_fn=None):
        self.cfg = cfg
        self.link = link
        self.dcfg = dcfg
        self.nlin = nlin
        self.frame = Frame.from_config(cfg.n_symbols, dcfg)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.channel_fn = channel_fn or self._ssfm_channel
        rng = np.random.default_rng([cfg.seed, 0])
        self.encoder = Encoder.init(cfg.M, rng, cfg.dnn_hidden)
        self.m = int(np.log2(cfg.M))
        self.decoder = DecoderDnn.init(self.m, rng, cfg.dnn_hidden)
        self.surrogate = Surrogate.init(rng, cfg.gru_hidden, cfg.edge_discard, cfg.block)
        self.state = TrainState(seed_base=cfg.seed)
        self.ops = []
        self.snapshots = []

    # -- plumbing ----------------------------------------------------------

    def _ssfm_channel(self, symbols, const, rng):
        return run_link(symbols, const, self.link, self.dcfg, self.frame, self.cfg.p_dbm, rng)

    def _rng(self, *extra):
        return np.random.default_rng([self.state.seed_base + self.state.epoch, *extra])

    def _log_op(self, op, lr):
        self.ops.append((self.state.phase, self.state.phase_epoch, op, lr))

    @staticmethod
    def _check(loss, what):
        if not np.isfinite(loss):
            raise TrainingAborted(f"{what} loss is {loss}")

    def modules(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "surrogate": self.surrogate}

    def arrays(self):
        out = {}
        for name, mod in self.modules().items():
            for k, v in mod.arrays().items():
                out[f"{name}.{k}"] = v
        for name, opt in self.state.optimizers.items():
            for k, v in opt.arrays().items():
                out[f"opt.{name}.{k}"] = v
        out["meta.noise_var"] = np.array([self.surrogate.noise_var])
        out["meta.epoch"] = np.array([float(self.state.epoch)])
        out["meta.plateau"] = np.array([self.state.plateau_mse])
        return out

    def load(self, arrays):
        """Restore networks (and optimizer states, if present) from ``arrays``."""
        if "decoder.left.Wz" in arrays and self.decoder.kind != "cogru":
            self._new_cogru_decoder()
        for name, mod in self.modules().items():
            nn.assign_arrays(mod.arrays(), arrays, f"{name}.")
        self.surrogate.noise_var = float(arrays["meta.noise_var"][0])
        self.state.epoch = int(arrays["meta.epoch"][0])
        self.state.plateau_mse = float(arrays["meta.plateau"][0])
        self.state.optimizers = {}
        for name in sorted({k.split(".")[1] for k in arrays if k.startswith("opt.")}):
            opt = nn.Adam()
            pre = f"opt.{name}."
            opt.load_arrays({k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)})
            self.state.optimizers[name] = opt

    def save_checkpoint(self, name):
        if self.out_dir is None:
            return None
        path = self.out_dir / f"{name}.ckpt"
        nn.save_arrays(path, self.arrays())
        return path

    def _new_cogru_decoder(self):
        rng = np.random.default_rng([self.cfg.seed, 2])
        self.decoder = DecoderCoGru.init(self.m, rng, self.cfg.gru_hidden,
                                         self.cfg.edge_discard, self.cfg.block)

    def _record(self, loss=float("nan"), mse=float("nan"), ber=float("nan"), gmi=float("nan"),
                wall_ms=0.0):
        """Append one history row; ``loss`` is the decoder's bitwise MSE."""
        s = self.state
        row = {"epoch": s.epoch, "phase": s.phase, "period": s.period, "phase_epoch": s.phase_epoch,
               "loss": loss, "mse_surrogate": mse, "ber": ber, "gmi": gmi}
        s.history.append(row)
        if self.out_dir is not None:
            append_csv(self.out_dir / "history.csv", HISTORY_FIELDS, row)
            append_csv(self.out_dir / "timing.csv", ("epoch", "phase", "wall_ms"),
                       {"epoch": s.epoch, "phase": s.phase, "wall_ms": wall_ms})

    def _opt(self, name, lr):
        opt = self.state.optimizers.get(name)
        if opt is None or opt.lr != lr:
            opt = nn.Adam(lr)
            self.state.optimizers[name] = opt
        return opt

    def _start_phase(self, phase):
        if self.state.phase != phase:
            self.state.phase = phase
            self.state.phase_epoch = 0
            self.state.period = 0
            self.state.optimizers = {}

    # -- operations --------------------------------------------------------

    def _decoder_step(self, rx, bits, opt):
        probs, cache = self.decoder.forward(rx)
        loss, g = nn.mse_loss(probs, bits)
        self._check(loss, "decoder")
        grads, _ = self.decoder.backward(cache, g)
        opt.step(self.decoder.arrays(), grads)
        self._log_op("c", opt.lr)
        return loss

    def _surrogate_step(self, tx, rx, opt):
        loss = surrogate_fit_step(self.surrogate, tx, rx, opt)
        self._check(loss, "surrogate")
        self._log_op("b", opt.lr)
        return loss

    def _encoder_step_surrogate(self, idx, bits, rng, opt):
        pts, ecache = self.encoder.forward()
        y, scache = self.surrogate.forward(pts[idx])
        y = y + rng.normal(0.0, np.sqrt(self.surrogate.noise_var / 2), y.shape)
        probs, dcache = self.decoder.forward(y)
        loss, g = nn.mse_loss(probs, bits)
        self._check(loss, "encoder")
        _, gy = self.decoder.backward(dcache, g)
        _, gtx = self.surrogate.backward(scache, gy)
        grads = self.encoder.backward(ecache, scatter_points_grad(gtx, idx, self.cfg.M))
        opt.step(self.encoder.arrays(), grads)
        self._log_op("a", opt.lr)
        return loss

    def _joint_nlin_step(self, idx, bits, rng, opt_a, opt_c):
        pts, ecache = self.encoder.forward()
        mu4, dmu4 = channel.kurtosis_with_grad(pts)
        y, ncache = channel.nlin_channel(pts[idx], mu4, self.cfg.p_dbm, self.nlin, rng)
        probs, dcache = self.decoder.forward(y)
        loss, g = nn.mse_loss(probs, bits)
        self._check(loss, "phase I")
        dgrads, gy = self.decoder.backward(dcache, g)
        gx, gmu4 = channel.nlin_backward(ncache, gy)
        gpts = scatter_points_grad(gx, idx, self.cfg.M) + gmu4 * dmu4
        egrads = self.encoder.backward(ecache, gpts)
        opt_a.step(self.encoder.arrays(), egrads)
        opt_c.step(self.decoder.arrays(), dgrads)
        self._log_op("a", opt_a.lr)
        self._log_op("c", opt_c.lr)
        return loss, probs

    def _link_data(self, const: Constellation, idx=None):
        """Fresh frame through the physical channel, retrying on sync failure."""
        for attempt in range(self.cfg.max_retries):
            rng = self._rng(attempt)
            draw = frame_indices(self.frame, self.cfg.M, rng)
            use = draw if idx is None else idx
            sym = const.points[use]
            try:
                rx = self.channel_fn(sym, const, rng)
            except SyncError as exc:
                log.warning("epoch %d attempt %d: %s; retrying", self.state.epoch, attempt, exc)
                continue
            return use, to_real(sym), to_real(rx)
        raise SyncAborted(f"sync failed {self.cfg.max_retries} times at epoch {self.state.epoch}")

    def _epoch_metrics(self, const, idx, tx, rx):
        pay = self.frame.payload
        bits = const.labels[idx]
        probs = self.decoder.forward(rx)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            b = metrics.ber(bits[:, pay], hard_bits(probs[:, pay]))
        s2 = metrics.fit_noise_variance(to_complex(tx[:, pay]), to_complex(rx[:, pay]))
        gmi = metrics.gmi_gauss_hermite(const, s2) if s2 > 0 else float(const.m)
        return b, gmi

    # -- phases ------------------------------------------------------------

    def phase1_run(self, epochs=None):
        if self.nlin is None:
            raise ValueError("Phase I needs NLIN coefficients")
        self._start_phase("I")
        sch = self.cfg.schedule
        n = self.cfg.phase1_epochs if epochs is None else epochs
        for _ in range(n):
            t0 = time.perf_counter()
            self.state.phase_epoch += 1
            rng = self._rng()
            idx = rng.integers(0, self.cfg.M, (2, self.cfg.n_symbols))
            bits = self.encoder_bits(idx)
            opt_a = self._opt("encoder", sch.phase1_lr_a)
            opt_c = self._opt("decoder", sch.phase1_lr_c)
            for _ in range(sch.phase1_steps):
                loss, probs = self._joint_nlin_step(idx, bits, rng, opt_a, opt_c)
            b = float(np.mean(hard_bits(probs) != bits))
            self._record(loss, ber=b, wall_ms=1e3 * (time.perf_counter() - t0))
            self.state.epoch += 1
        self.save_checkpoint("phase1")
        return self.state

    def encoder_bits(self, idx):
        """Natural-binary labels of encoder indices, (..., m) int8."""
        shifts = np.arange(self.m - 1, -1, -1)
        return ((idx[..., None] >> shifts) & 1).astype(np.int8)

    def phase2_run(self, epochs=None):
        self._start_phase("II")
        if self.cfg.decoder == "cogru" and self.decoder.kind != "cogru":
            self._new_cogru_decoder()
        sch = self.cfg.schedule
        const = self.encoder.constellation()
        n = self.cfg.phase2_epochs if epochs is None else epochs
        for _ in range(n):
            t0 = time.perf_counter()
            self.state.phase_epoch += 1
            idx, tx, rx = self._link_data(const)
            b, gmi = self._epoch_metrics(const, idx, tx, rx)
            bits = const.labels[idx]
            opt_b = self._opt("surrogate", sch.phase2_lr_b)
            opt_c = self._opt("decoder", sch.phase2_lr_c)
            mse = [self._surrogate_step(tx, rx, opt_b) for _ in range(sch.phase2_b)][0]
            loss = [self._decoder_step(rx, bits, opt_c) for _ in range(sch.phase2_c)][0]
            self.state.plateau_mse = min(self.state.plateau_mse, mse)
            self._record(loss, mse, b, gmi, 1e3 * (time.perf_counter() - t0))
            self.state.epoch += 1
        self.save_checkpoint("phase2")
        return self.state

    def phase3_run(self, n_periods=None, max_epochs=None):
        """Run Phase III from the current position; select the best period at the end.

        ``max_epochs`` stops early (no selection) for partial or dry runs.
        """
        self._start_phase("III")
        if self.cfg.decoder == "cogru" and self.decoder.kind != "cogru":
            self._new_cogru_decoder()
        sch = self.cfg.schedule
        periods = self.cfg.phase3_periods if n_periods is None else n_periods
        total = periods * sch.period_epochs
        done = 0
        while self.state.phase_epoch < total:
            if max_epochs is not None and done >= max_epochs:
                return self.state
            t0 = time.perf_counter()
            self.state.period = self.state.phase_epoch // sch.period_epochs + 1
            in_period = self.state.phase_epoch % sch.period_epochs + 1
            self.state.phase_epoch += 1
            n_a, n_b, n_c = sch.phase3_counts(in_period)
            idx = frame_indices(self.frame, self.cfg.M, self._rng())
            if n_a:
                opt_a = self._opt("encoder", sch.phase3_lr_a)
                bits = self.encoder_bits(idx)
                noise_rng = self._rng(10 ** 6)
                for _ in range(n_a):
                    self._encoder_step_surrogate(idx, bits, noise_rng, opt_a)
            const = self.encoder.constellation()
            idx, tx, rx = self._link_data(const, idx)
            b, gmi = self._epoch_metrics(const, idx, tx, rx)
            opt_b = self._opt("surrogate", sch.phase3_lr_b)
            opt_c = self._opt("decoder", sch.phase3_lr_c)
            losses = [self._surrogate_step(tx, rx, opt_b) for _ in range(n_b)]
            mse = losses[0] if losses else float("nan")
            if mse > 10 * self.state.plateau_mse:
                raise TrainingAborted(
                    f"surrogate MSE {mse:.3g} exceeds 10x plateau {self.state.plateau_mse:.3g}")
            dl = [self._decoder_step(rx, const.labels[idx], opt_c) for _ in range(n_c)]
            self._record(dl[0] if dl else float("nan"), mse, b, gmi, 1e3 * (time.perf_counter() - t0))
            self.state.epoch += 1
            done += 1
            if in_period == sch.period_epochs:
                snap = {k: v.copy() for k, v in self.arrays().items()}
                self.snapshots.append(snap)
                self.save_checkpoint(f"phase3_period{self.state.period}")
        bers = [r["ber"] for r in self.state.history if r["phase"] == "III"]
        best = select_period(bers, sch.period_epochs, sch.select_tail)
        log.info("Phase III: selected period %d", best + 1)
        self.load(self.snapshots[best])
        self.state.period = best + 1
        self.save_checkpoint("final")
        return self.state

    def run(self, phases=("I", "II", "III")):
        if "I" in phases:
            self.phase1_run()
        if "II" in phases:
            self.phase2_run()
        if "III" in phases:
            self.phase3_run()
        return self.state


# -- evaluation ------------------------------------------------------------


def _eval_point(args):
    (system, const, decoder, link, dcfg, frame, p_dbm, spans, seed) = args
    rng = np.random.default_rng(seed)
    idx = frame_indices(frame, const.M, rng)
    sym = const.points[idx]
    rx = run_link(sym, const, link, dcfg, frame, p_dbm, rng, n_spans=spans)
    pay = frame.payload
    tx_bits = const.labels[idx[:, pay]]
    if decoder is None:
        rx_bits = const.labels[_nearest(rx[:, pay], const)]
    else:
        rx_bits = hard_bits(decoder.forward(to_real(rx))[0][:, pay])
    rep = metrics.report(tx_bits, rx_bits, sym[:, pay], rx[:, pay], const)
    row = {"system": system, "p_dbm": p_dbm, "distance_km": spans * link.span_km,
           **rep.as_dict()}
    return row, sym[:, pay], rx[:, pay]


def _nearest(rx, const):
    d = np.abs(rx[..., None] - const.points) ** 2
    return np.argmin(d, axis=-1)


def evaluate(systems, link: LinkConfig, dcfg: DspConfig, n_symbols, powers, distances_km,
             seed, workers=1, keep_symbols=False):
    """Paired evaluation over a (power, distance) grid.

    ``systems`` maps a name to ``(constellation, decoder)``; ``decoder=None``
    means minimum-distance decisions with the constellation's labels. Every
    system sees the same test seed (bits and noise) at a given grid point.
    With ``keep_symbols`` each result is ``(row, tx_payload, rx_payload)``.
    """
    frame = Frame.from_config(n_symbols, dcfg)
    jobs = []
    for g, (p, d) in enumerate((p, d) for d in distances_km for p in powers):
        spans = int(round(d / link.span_km))
        if spans < 0 or abs(spans * link.span_km - d) > 1e-9:
            raise ValueError(f"distance {d} km is not a whole number of spans")
        point_seed = [seed, 7, g]
        for name, (const, dec) in systems.items():
            jobs.append((name, const, dec, link, dcfg, frame, p, spans, point_seed))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_eval_point, jobs))
    else:
        out = [_eval_point(j) for j in jobs]
    return out if keep_symbols else [o[0] for o in out]


def append_csv(path, fields, row):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(fields)
        w.writerow([fmt(row[f]) for f in fields])


def write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([fmt(r[f]) for f in fields])


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def with_spans(link, n_spans):
    return replace(link, n_spans=n_spans)
