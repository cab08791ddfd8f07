import numpy as np
import pytest

from cogru_e2e import signal
from cogru_e2e.signal import (Constellation, DualPolSignal, gray_code, matched_filter,
                              natural_labels, rrc_impulse, rrc_taps, shape_pulse, square_qam)


def test_qam64_scale_and_power():
    c = square_qam(64)
    # unit mean power of the {+-1, ..., +-7}^2 grid needs scale 1/sqrt(42)
    levels = np.unique(np.round(c.points.real * np.sqrt(42), 9))
    assert np.allclose(levels, np.arange(-7, 8, 2))
    assert abs(c.mean_power() - 1.0) < 1e-12


@pytest.mark.parametrize("M", [4, 16, 64, 256])
def test_qam_gray_neighbours_differ_in_one_bit(M):
    c = square_qam(M)
    d = np.abs(c.points[:, None] - c.points[None])
    dmin = np.min(d[d > 1e-12])
    for i, j in zip(*np.nonzero(np.abs(d - dmin) < 1e-9)):
        assert np.sum(c.labels[i] != c.labels[j]) == 1


def test_qam64_kurtosis():
    assert square_qam(64).kurtosis() == pytest.approx(1.380952380952381, abs=1e-12)


@pytest.mark.parametrize("M", [3, 32, 0])
def test_qam_rejects_unsupported_order(M):
    with pytest.raises(ValueError):
        square_qam(M)


def test_constellation_rejects_duplicate_labels():
    with pytest.raises(ValueError):
        Constellation(np.array([1, -1, 1j, -1j]), np.array([[0, 0], [0, 0], [1, 0], [1, 1]], np.int8))


def test_gray_code_adjacent_one_bit():
    g = gray_code(4)
    assert sorted(g) == list(range(16))
    assert all(bin(a ^ b).count("1") == 1 for a, b in zip(g[:-1], g[1:]))


def test_bits_symbols_round_trip():
    c = square_qam(16)
    bits = np.random.default_rng(0).integers(0, 2, 4 * 100)
    idx = signal.bits_to_indices(bits, c)
    assert np.array_equal(signal.indices_to_bits(idx, c).ravel(), bits)
    assert np.array_equal(signal.nearest_indices(signal.bits_to_symbols(bits, c), c), idx)


def test_onehot():
    oh = signal.symbols_to_onehot(np.array([0, 3, 1]), 4)
    assert np.array_equal(oh, np.eye(4)[[0, 3, 1]])


def test_constellation_file_round_trip(tmp_path):
    c = square_qam(64)
    path = tmp_path / "c.txt"
    signal.write_constellation(path, c)
    back = signal.read_constellation(path)
    assert np.array_equal(back.points, c.points)
    assert np.array_equal(back.labels, c.labels)
    assert path.read_text().splitlines()[0] == "# index label real imag"


def test_natural_labels():
    lab = natural_labels(8)
    assert lab[5].tolist() == [1, 0, 1]


# --- RRC ------------------------------------------------------------------

def test_rrc_zero_time_closed_form():
    for beta in (0.01, 0.25, 0.5):
        assert rrc_impulse(np.array([0.0]), beta)[0] == pytest.approx(1 - beta + 4 * beta / np.pi)


def test_rrc_singular_point_is_continuous():
    beta = 0.25
    t0 = 1 / (4 * beta)
    at = rrc_impulse(np.array([t0]), beta)[0]
    near = rrc_impulse(np.array([t0 - 1e-6, t0 + 1e-6]), beta)
    assert np.allclose(near, at, atol=1e-5)


def test_rrc_taps_symmetric_unit_energy():
    p = rrc_taps(0.01, 8, 128)
    assert np.allclose(p.taps, p.taps[::-1], atol=1e-15)
    assert np.sum(p.taps ** 2) == pytest.approx(1.0, abs=1e-12)
    assert len(p.taps) == 2 * 128 * 8 + 1


def test_rrc_cascade_is_nyquist():
    # raised cosine = RRC * RRC: zero at non-zero symbol instants
    p = rrc_taps(0.25, 8, 64)
    rc = np.convolve(p.taps, p.taps)
    c = len(rc) // 2
    samples = rc[c % 8::8]
    peak = rc[c]
    others = np.delete(samples, c // 8)
    assert np.max(np.abs(others)) / peak < 1e-3


def test_circular_shaping_matched_filter_back_to_back():
    rng = np.random.default_rng(1)
    c = square_qam(64)
    sym = c.points[rng.integers(0, 64, (2, 1024))]
    p = rrc_taps(0.01, 8)
    y = matched_filter(shape_pulse(sym, p, circular=True), p, circular=True)[:, ::8]
    y = y * np.sqrt(np.mean(np.abs(sym) ** 2) / np.mean(np.abs(y) ** 2))
    evm = 10 * np.log10(np.mean(np.abs(y - sym) ** 2))
    assert evm < -40


def test_linear_shaping_length():
    p = rrc_taps(0.1, 4, 16)
    out = shape_pulse(np.ones(10), p)
    assert out.shape[-1] == 10 * 4 + len(p.taps) - 1


# --- dual-pol, WDM, power --------------------------------------------------

def _wave(rng, n=256, sps=8, fs=256e9):
    c = square_qam(16)
    sym = c.points[rng.integers(0, 16, (2, n))]
    p = rrc_taps(0.01, sps)
    return DualPolSignal(shape_pulse(sym, p, circular=True), fs), sym, p


def test_launch_power_audit():
    w, _, _ = _wave(np.random.default_rng(2))
    for p_dbm in (-3.0, 0.0, 2.5):
        out = signal.set_launch_power(w, p_dbm)
        assert out.power() == pytest.approx(1e-3 * 10 ** (p_dbm / 10), rel=1e-12)


def test_launch_power_rejects_silence():
    w = DualPolSignal(np.zeros((2, 8), complex), 1.0)
    with pytest.raises(ValueError):
        signal.set_launch_power(w, 0.0)


def test_dualpol_rejects_bad_shape():
    with pytest.raises(ValueError):
        DualPolSignal(np.zeros((3, 8), complex), 1.0)


def test_wdm_mux_demux_loopback():
    rng = np.random.default_rng(3)
    waves, syms = [], []
    for _ in range(3):
        w, s, p = _wave(rng)
        waves.append(w)
        syms.append(s)
    mux = signal.wdm_mux(waves, 40e9)
    back = signal.wdm_demux(mux, 1, 3, 40e9, 40e9)
    y = matched_filter(back.samples, p, circular=True)[:, ::8]
    ref = syms[1]
    y = y * np.sqrt(np.mean(np.abs(ref) ** 2) / np.mean(np.abs(y) ** 2))
    evm = 10 * np.log10(np.mean(np.abs(y - ref) ** 2) / np.mean(np.abs(ref) ** 2))
    assert evm < -30


def test_wdm_mux_rejects_overfull_band():
    rng = np.random.default_rng(4)
    w, _, _ = _wave(rng, fs=64e9)
    with pytest.raises(ValueError):
        signal.wdm_mux([w, w, w], 40e9)


def test_channel_offsets_need_odd_count():
    assert np.allclose(signal.channel_offsets(5, 1.0), [-2, -1, 0, 1, 2])
    with pytest.raises(ValueError):
        signal.channel_offsets(4, 1.0)
