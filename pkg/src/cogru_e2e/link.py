"""Frame layout and the full physical pipeline between encoder and decoder.

A frame is a circular block of ``n_symbols`` per polarization: a preamble of
known symbols (synchronization and equalizer training), then pilots every
``pilot_period`` symbols, with payload in between. Every frame symbol is a
point of the current constellation, so the surrogate channel sees one
homogeneous stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import channel, dsp, signal
from .channel import LinkConfig
from .dsp import DspConfig
from .signal import Constellation, DualPolSignal


@dataclass(frozen=True)
class Frame:
    n_symbols: int
    preamble_len: int
    pilot_period: int

    def __post_init__(self):
        if not 0 < self.preamble_len < self.n_symbols:
            raise ValueError("preamble must be shorter than the frame")

    @classmethod
    def from_config(cls, n_symbols, cfg: DspConfig):
        return cls(n_symbols, cfg.sync_preamble_len, cfg.pilot_period)

    @cached_property
    def preamble(self):
        return np.arange(self.preamble_len)

    @cached_property
    def pilots(self):
        return np.arange(self.preamble_len, self.n_symbols, self.pilot_period)

    @cached_property
    def known(self):
        """Preamble and pilot positions (used by CPR)."""
        return np.concatenate([self.preamble, self.pilots])

    @cached_property
    def payload(self):
        mask = np.ones(self.n_symbols, bool)
        mask[self.known] = False
        return np.flatnonzero(mask)


def frame_indices(frame: Frame, M, rng, payload_indices=None):
    """Constellation indices (2, n) for a frame; known symbols drawn from ``rng``."""
    idx = rng.integers(0, M, (2, frame.n_symbols))
    if payload_indices is not None:
        idx[:, frame.payload] = payload_indices
    return idx


def modulate(symbols, link: LinkConfig, p_dbm) -> DualPolSignal:
    """Circular RRC shaping of (2, n) symbols at ``p_dbm`` launch power."""
    pulse = signal.rrc_taps(link.rolloff, link.sps, link.rrc_span)
    wave = DualPolSignal(signal.shape_pulse(symbols, pulse, circular=True), link.sample_rate)
    return signal.set_launch_power(wave, p_dbm)


def transmit(symbols, constellation: Constellation, link: LinkConfig, p_dbm, rng) -> DualPolSignal:
    """Target channel ``symbols`` (center) plus independent WDM neighbours."""
    channels = []
    center = link.n_channels // 2
    for k in range(link.n_channels):
        if k == center:
            s = symbols
        else:
            s = constellation.points[rng.integers(0, constellation.M, symbols.shape)]
        channels.append(modulate(s, link, p_dbm))
    if link.n_channels == 1:
        return channels[0]
    return signal.wdm_mux(channels, link.spacing_hz)


def receive(field: DualPolSignal, link: LinkConfig, dcfg: DspConfig, frame: Frame,
            known_symbols, distance_spans=None):
    """Receiver DSP on the link output; returns 1-SPS symbols (2, n).

    ``known_symbols`` (2, n) supplies the preamble and pilot values; payload
    entries are not read.
    """
    spans = link.n_spans if distance_spans is None else distance_spans
    if link.n_channels > 1:
        field = signal.wdm_demux(field, link.n_channels // 2, link.n_channels,
                                 link.spacing_hz, link.spacing_hz)
    field = dsp.cdc(field, link.beta2 * link.span_km * 1e3 * spans)
    pulse = signal.rrc_taps(link.rolloff, link.sps, link.rrc_span)
    mf = signal.matched_filter(field.samples, pulse, circular=True)

    pre = np.zeros((2, frame.n_symbols), complex)
    pre[:, frame.preamble] = known_symbols[:, frame.preamble]
    ref = signal.matched_filter(signal.shape_pulse(pre, pulse, circular=True), pulse, circular=True)
    offset = dsp.synchronize(mf, ref)
    if link.sps % 2:
        raise ValueError("receiver needs an even samples-per-symbol count")
    x2 = np.roll(mf, -offset, axis=-1)[:, ::link.sps // 2]
    x2 = x2 / np.sqrt(np.mean(np.abs(x2[:, ::2]) ** 2))

    eq = dsp.butterfly_equalize(x2, known_symbols[:, frame.preamble], dcfg)
    return dsp.cpr_pilot(eq, frame.known, known_symbols[:, frame.known], dcfg)


def run_link(symbols, constellation, link: LinkConfig, dcfg: DspConfig, frame: Frame,
             p_dbm, rng, n_spans=None):
    """Full pipeline for one frame: shaping, WDM, SSFM, DSP. Returns rx symbols."""
    cfg = link if n_spans is None else _with_spans(link, n_spans)
    field = transmit(symbols, constellation, cfg, p_dbm, rng)
    field = channel.ssfm_link(field, cfg, rng)
    return receive(field, cfg, dcfg, frame, symbols)


def _with_spans(link, n_spans):
    from dataclasses import replace
    return replace(link, n_spans=n_spans)


def to_real(z):
    """Complex (...,) -> interleaved real pairs (..., 2)."""
    return np.stack([z.real, z.imag], axis=-1)


def to_complex(x):
    return x[..., 0] + 1j * x[..., 1]
