"""Transmit-side symbols and waveforms.

Constellations with explicit bit labels, root-raised-cosine pulse shaping,
resampling, WDM multiplexing and launch-power normalization. Field samples
are in units of sqrt(W), so ``mean(|x|^2 + |y|^2)`` is the optical power in W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Constellation:
    """``points[k]`` carries the bit label ``labels[k]`` (MSB first)."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        M = self.points.size
        m = int(round(np.log2(M)))
        if 2 ** m != M or self.labels.shape != (M, m):
            raise ValueError(f"labels {self.labels.shape} do not fit {M} points")
        if len(set(_pack(self.labels))) != M:
            raise ValueError("labels must be a permutation of all m-bit strings")

    @property
    def M(self):
        return self.points.size

    @property
    def m(self):
        return self.labels.shape[1]

    def mean_power(self):
        return float(np.mean(np.abs(self.points) ** 2))

    def kurtosis(self):
        """``E|c|^4 / (E|c|^2)^2`` under uniform point probabilities."""
        p2 = np.abs(self.points) ** 2
        return float(np.mean(p2 * p2) / np.mean(p2) ** 2)

    def index_of_label(self):
        """Lookup table: integer value of a label -> point index."""
        table = np.empty(self.M, dtype=np.int64)
        table[_pack(self.labels)] = np.arange(self.M)
        return table


def _pack(bits):
    bits = np.asarray(bits)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


def natural_labels(M):
    m = int(round(np.log2(M)))
    return (np.arange(M)[:, None] >> np.arange(m - 1, -1, -1)) & 1


def gray_code(n):
    i = np.arange(1 << n)
    return i ^ (i >> 1)


def square_qam(M) -> Constellation:
    """Gray-labelled square QAM with unit mean power."""
    if M not in (4, 16, 64, 256):
        raise ValueError(f"unsupported square QAM order {M}")
    side = int(round(np.sqrt(M)))
    k = side.bit_length() - 1
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    gray = gray_code(k)
    # level index -> label bits along one axis
    axis_bits = (gray[:, None] >> np.arange(k - 1, -1, -1)) & 1
    pts, labels = [], []
    for i in range(side):
        for q in range(side):
            pts.append(levels[i] + 1j * levels[q])
            labels.append(np.concatenate([axis_bits[i], axis_bits[q]]))
    pts = np.array(pts)
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    return Constellation(pts, np.array(labels))


def bits_to_indices(bits, constellation: Constellation):
    bits = np.asarray(bits).ravel()
    m = constellation.m
    if bits.size % m:
        raise ValueError(f"{bits.size} bits is not a multiple of m={m}")
    return constellation.index_of_label()[_pack(bits.reshape(-1, m))]


def bits_to_symbols(bits, constellation: Constellation):
    """Map consecutive m-bit groups to their labelled points."""
    return constellation.points[bits_to_indices(bits, constellation)]


def indices_to_bits(indices, constellation: Constellation):
    return constellation.labels[np.asarray(indices)].reshape(-1)


def symbols_to_onehot(indices, M):
    indices = np.asarray(indices)
    out = np.zeros((indices.size, M))
    out[np.arange(indices.size), indices.ravel()] = 1.0
    return out


def nearest_indices(symbols, constellation: Constellation):
    """Minimum-Euclidean-distance decisions."""
    s = np.asarray(symbols).ravel()
    d = np.abs(s[:, None] - constellation.points[None, :])
    return np.argmin(d, axis=1).reshape(np.shape(symbols))


def write_constellation(path, constellation: Constellation):
    """Text dump: ``index label real imag`` per line."""
    with open(path, "w") as fh:
        fh.write("# index label real imag\n")
        for k, (p, lab) in enumerate(zip(constellation.points, constellation.labels)):
            bits = "".join(str(int(b)) for b in lab)
            fh.write(f"{k} {bits} {p.real:.17g} {p.imag:.17g}\n")


def read_constellation(path) -> Constellation:
    pts, labels = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            _, bits, re, im = line.split()
            pts.append(complex(float(re), float(im)))
            labels.append([int(b) for b in bits])
    return Constellation(np.array(pts), np.array(labels))


# ---------------------------------------------------------------------------
# pulse shaping


@dataclass
class PulseShape:
    rolloff: float
    sps: int
    span: int
    taps: np.ndarray
    scale: float  # taps = scale * rrc_impulse(t)

    @property
    def delay(self):
        """Samples from the first tap to the peak."""
        return (self.taps.size - 1) // 2


def rrc_impulse(t, rolloff):
    """Root-raised-cosine impulse response for symbol period 1 (unnormalized)."""
    b = rolloff
    t = np.asarray(t, dtype=float)
    h = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(4 * b * t), 1.0, atol=1e-12) & ~at_zero
    rest = ~(at_zero | at_sing)
    h[at_zero] = 1.0 - b + 4 * b / np.pi
    h[at_sing] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                   + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    tr = t[rest]
    num = np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    den = np.pi * tr * (1 - (4 * b * tr) ** 2)
    h[rest] = num / den
    return h


def rrc_taps(rolloff, sps, span=128) -> PulseShape:
    """Unit-energy RRC taps covering ``span`` symbols on each side of the peak."""
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must be in (0, 1], got {rolloff}")
    if sps < 2:
        raise ValueError(f"sps must be >= 2, got {sps}")
    n = np.arange(-span * sps, span * sps + 1)
    h = rrc_impulse(n / sps, rolloff)
    scale = 1.0 / np.sqrt(np.sum(h * h))
    return PulseShape(rolloff, sps, span, h * scale, scale)


def upsample(x, factor):
    """Zero-stuffing: ``factor - 1`` zeros after every sample."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    x = np.asarray(x)
    out = np.zeros(x.shape[:-1] + (x.shape[-1] * factor,), dtype=x.dtype)
    out[..., ::factor] = x
    return out


def downsample(x, factor, phase=0):
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return np.asarray(x)[..., phase::factor]


def _circular_filter(x, taps):
    """Periodic convolution centred on the middle tap; taps longer than the
    frame wrap around it."""
    n = x.shape[-1]
    c = (taps.size - 1) // 2
    kernel = np.zeros(n)
    np.add.at(kernel, np.arange(-c, taps.size - c) % n, taps)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.fft.fft(kernel), axis=-1)


def shape_pulse(symbols, pulse: PulseShape, circular=False):
    """Upsample by ``pulse.sps`` and filter with the taps.

    Linear mode returns the full convolution (length ``sps * n + ntaps - 1``).
    Circular mode treats the frame as periodic and keeps the length ``sps * n``
    with the pulse peak of symbol ``k`` at sample ``k * sps``.
    """
    symbols = np.asarray(symbols)
    if symbols.shape[-1] == 0:
        raise ValueError("no symbols to shape")
    up = upsample(symbols, pulse.sps)
    if circular:
        return _circular_filter(up, pulse.taps)
    return np.apply_along_axis(np.convolve, -1, up, pulse.taps)


def matched_filter(samples, pulse: PulseShape, circular=False):
    """Filter with the time-reversed taps (identical, RRC taps are symmetric)."""
    samples = np.asarray(samples)
    if samples.shape[-1] == 0:
        raise ValueError("empty input")
    if circular:
        return _circular_filter(samples, pulse.taps[::-1])
    return np.apply_along_axis(np.convolve, -1, samples, pulse.taps[::-1])


# ---------------------------------------------------------------------------
# dual-polarization fields and WDM


@dataclass
class DualPolSignal:
    """Complex baseband field, row 0 = x polarization, row 1 = y."""

    samples: np.ndarray
    sample_rate: float
    center_offset: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 2 or self.samples.shape[0] != 2:
            raise ValueError(f"expected a (2, n) array, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")

    @property
    def x_pol(self):
        return self.samples[0]

    @property
    def y_pol(self):
        return self.samples[1]

    def __len__(self):
        return self.samples.shape[1]

    def power(self):
        """Mean power summed over both polarizations (W)."""
        return float(np.mean(np.sum(np.abs(self.samples) ** 2, axis=0)))

    def with_samples(self, samples):
        return DualPolSignal(samples, self.sample_rate, self.center_offset)


def channel_offsets(n_channels, spacing_hz):
    if n_channels % 2 == 0:
        raise ValueError("WDM channel count must be odd (center channel is the target)")
    return (np.arange(n_channels) - (n_channels - 1) / 2) * spacing_hz


def wdm_mux(channels, spacing_hz) -> DualPolSignal:
    """Sum of channels shifted to ``(k - (n-1)/2) * spacing`` around the center."""
    fs = channels[0].sample_rate
    n = len(channels[0])
    if any(c.sample_rate != fs or len(c) != n for c in channels):
        raise ValueError("channels must share sample rate and length")
    if len(channels) * spacing_hz > fs:
        raise ValueError(f"{len(channels)} x {spacing_hz:g} Hz exceeds the sample rate {fs:g}")
    t = np.arange(n) / fs
    total = np.zeros((2, n), dtype=complex)
    for c, f in zip(channels, channel_offsets(len(channels), spacing_hz)):
        total += c.samples * np.exp(2j * np.pi * f * t) if f else c.samples
    return DualPolSignal(total, fs)


def wdm_demux(signal: DualPolSignal, index, n_channels, spacing_hz, lpf_bw=None) -> DualPolSignal:
    """Shift channel ``index`` to baseband and keep ``|f| <= lpf_bw / 2``."""
    f = channel_offsets(n_channels, spacing_hz)[index]
    lpf_bw = spacing_hz if lpf_bw is None else lpf_bw
    n = len(signal)
    fs = signal.sample_rate
    t = np.arange(n) / fs
    base = signal.samples * np.exp(-2j * np.pi * f * t) if f else signal.samples
    freqs = np.fft.fftfreq(n, 1 / fs)
    mask = np.abs(freqs) <= lpf_bw / 2
    out = np.fft.ifft(np.fft.fft(base, axis=-1) * mask, axis=-1)
    return DualPolSignal(out, fs, f)


def set_launch_power(signal: DualPolSignal, p_dbm) -> DualPolSignal:
    """Scale so the two-polarization mean power equals ``p_dbm``."""
    p = signal.power()
    if p == 0:
        raise ValueError("cannot set the power of a zero-energy signal")
    target = 1e-3 * 10 ** (p_dbm / 10)
    return signal.with_samples(signal.samples * np.sqrt(target / p))


def dbm_to_watt(p_dbm):
    return 1e-3 * 10 ** (np.asarray(p_dbm) / 10)
