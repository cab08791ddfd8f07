"""Coherent receiver DSP: CDC, synchronization, 2x2 butterfly equalizer, pilot CPR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import angular_frequencies
from .signal import DualPolSignal


class SyncError(RuntimeError):
    pass


class EqualizerDivergence(RuntimeError):
    pass


@dataclass
class DspConfig:
    eq_taps: int = 11
    eq_mu: float = 1e-3
    eq_passes: int = 10
    cpr_block: int = 64
    pilot_rate: float = 1 / 32
    sync_preamble_len: int = 256

    def __post_init__(self):
        if self.eq_taps < 1 or self.eq_taps % 2 == 0:
            raise ValueError("eq_taps must be odd")
        if not 0 < self.pilot_rate < 1:
            raise ValueError("pilot_rate must be in (0, 1)")
        if self.cpr_block < 1:
            raise ValueError("cpr_block must be >= 1")
        if self.eq_mu <= 0 or self.eq_passes < 1:
            raise ValueError("eq_mu must be positive and eq_passes >= 1")
        if self.sync_preamble_len < 1:
            raise ValueError("sync_preamble_len must be >= 1")

    @property
    def pilot_period(self):
        return int(round(1 / self.pilot_rate))


def cdc(signal: DualPolSignal, total_beta2_z) -> DualPolSignal:
    """Undo accumulated dispersion: multiply the spectrum by exp(-j beta2 z w^2 / 2)."""
    if total_beta2_z == 0:
        return signal
    w = angular_frequencies(len(signal), signal.sample_rate)
    H = np.exp(-0.5j * total_beta2_z * w ** 2)
    return signal.with_samples(np.fft.ifft(np.fft.fft(signal.samples, axis=-1) * H, axis=-1))


def synchronize(rx, reference, min_ratio=3.0):
    """Circular offset ``k`` maximizing ``|sum_n rx[n + k] conj(ref[n])|``.

    ``reference`` is zero-padded to the length of ``rx``. Every received row is
    correlated with every reference row and the cross terms are combined as
    ``sum_i sqrt(sum_j |c_ij|^2)``, which a unitary polarization rotation leaves
    unchanged, so the peak survives before the equalizer untangles the
    polarizations. Raises
    :class:`SyncError` when the peak is below ``min_ratio`` times the mean
    correlation magnitude.
    """
    rx = np.atleast_2d(rx)
    ref = np.atleast_2d(reference)
    n = rx.shape[-1]
    if ref.shape[-1] > n:
        raise ValueError("reference longer than the received stream")
    pad = np.zeros(ref.shape[:-1] + (n,), dtype=complex)
    pad[..., :ref.shape[-1]] = ref
    fr = np.fft.fft(rx, axis=-1)[:, None]
    fp = np.conj(np.fft.fft(pad, axis=-1))[None]
    corr = np.fft.ifft(fr * fp, axis=-1)
    mag = np.sum(np.sqrt(np.sum(np.abs(corr) ** 2, axis=1)), axis=0)
    k = int(np.argmax(mag))
    floor = float(np.mean(mag))
    if not mag[k] >= min_ratio * floor:
        raise SyncError(f"correlation peak {mag[k]:.3g} below {min_ratio} x floor {floor:.3g}")
    return k


def _windows(x2, n_out, taps):
    """Circular 2-SPS windows centred on even samples: (n_out, 2, taps)."""
    c = taps // 2
    idx = (2 * np.arange(n_out)[:, None] + np.arange(-c, taps - c)[None, :]) % x2.shape[-1]
    return np.transpose(x2[:, idx], (1, 0, 2))


def butterfly_equalize(x2sps, train_symbols, cfg: DspConfig, return_taps=False):
    """2x2 complex FIR butterfly at 2 SPS, adapted by data-aided LMS.

    The taps start as an identity (unit center tap) and adapt on the known
    symbols ``train_symbols`` (2, n_train), which occupy the first symbols of
    the frame, for ``cfg.eq_passes`` passes. The frozen taps then equalize and
    decimate the whole frame to 1 SPS.
    """
    x2 = np.asarray(x2sps)
    d = np.asarray(train_symbols)
    if x2.shape[0] != 2 or x2.shape[-1] % 2:
        raise ValueError("expected a (2, even length) 2-SPS stream")
    n_sym = x2.shape[-1] // 2
    T = cfg.eq_taps
    W = np.zeros((2, 2, T), dtype=complex)
    W[0, 0, T // 2] = W[1, 1, T // 2] = 1.0
    X = _windows(x2, d.shape[-1], T)
    mu = cfg.eq_mu
    for _ in range(cfg.eq_passes):
        for k in range(d.shape[-1]):
            xk = X[k]
            y = np.einsum("pqt,qt->p", W, xk)
            e = d[:, k] - y
            W += mu * e[:, None, None] * np.conj(xk)[None]
        norm = float(np.sqrt(np.sum(np.abs(W) ** 2)))
        if not np.isfinite(norm) or norm > 1e3:
            raise EqualizerDivergence(f"tap norm {norm:.3g} after LMS pass; lower eq_mu")
    out = np.einsum("pqt,kqt->pk", W, _windows(x2, n_sym, T))
    return (out, W) if return_taps else out


def cpr_pilot(symbols, pilot_positions, pilot_symbols, cfg: DspConfig):
    """Block phase estimate ``arg sum r_i conj(p_i)`` over the block's pilots.

    ``symbols`` is (..., n); ``pilot_symbols`` matches the leading shape with
    one column per entry of ``pilot_positions``.
    """
    r = np.asarray(symbols)
    pos = np.asarray(pilot_positions)
    p = np.asarray(pilot_symbols)
    n = r.shape[-1]
    out = np.empty_like(r, dtype=complex)
    block_of_pilot = pos // cfg.cpr_block
    for b, start in enumerate(range(0, n, cfg.cpr_block)):
        sel = block_of_pilot == b
        if not np.any(sel):
            raise ValueError(f"CPR block {b} (symbols {start}..) contains no pilots")
        acc = np.sum(r[..., pos[sel]] * np.conj(p[..., sel]), axis=-1)
        theta = np.angle(acc)
        out[..., start:start + cfg.cpr_block] = (
            r[..., start:start + cfg.cpr_block] * np.exp(-1j * theta)[..., None])
    return out
