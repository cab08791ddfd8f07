"""Performance metrics: BER, Q^2-factor, GMI (Gauss-Hermite and Monte-Carlo), EVM."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erfc, erfcinv, logsumexp, roots_hermite

from .signal import Constellation

Q2_FLOOR_DB = -100.0


@dataclass
class MetricReport:
    ber: float
    q2_db: float
    gmi_bits_per_sym: float
    evm_db: float
    n_bits: int
    n_syms: int
    sigma_sq_fit: float

    def as_dict(self):
        return asdict(self)


def ber(tx_bits, rx_bits):
    tx = np.asarray(tx_bits).ravel()
    rx = np.asarray(rx_bits).ravel()
    if tx.size == 0 or tx.size != rx.size:
        raise ValueError(f"need equal, non-empty bit streams ({tx.size} vs {rx.size})")
    value = float(np.count_nonzero(tx != rx)) / tx.size
    if value > 0.5:
        warnings.warn(f"BER {value:.3g} > 0.5 suggests an inverted labeling", RuntimeWarning)
    return value


def q2_from_ber(ber_value):
    """``20 log10(sqrt(2) erfcinv(2 BER))`` in dB."""
    if not 0.0 < ber_value < 0.5:
        raise ValueError(f"Q^2 is undefined for BER {ber_value}")
    q2 = 20 * np.log10(np.sqrt(2) * erfcinv(2 * ber_value))
    if q2 < Q2_FLOOR_DB:
        raise ValueError(f"Q^2 {q2:.1f} dB is below the {Q2_FLOOR_DB} dB floor")
    return float(q2)


def ber_from_q2(q2_db):
    return float(0.5 * erfc(10 ** (q2_db / 20) / np.sqrt(2)))


def qam_ber_awgn(M, snr_db):
    """Exact bit error probability of Gray-labelled square M-QAM in AWGN.

    ``snr_db`` is Es/N0. Sums the per-bit-level error probabilities of the two
    identical PAM components (Cho and Yoon's closed form).
    """
    side = int(round(np.sqrt(M)))
    k_max = side.bit_length() - 1
    es_n0 = 10 ** (np.asarray(snr_db, float) / 10)
    arg = np.sqrt(3 * es_n0 / (2 * (M - 1)))
    total = 0.0
    for k in range(1, k_max + 1):
        pk = 0.0
        for i in range(int((1 - 2.0 ** -k) * side)):
            w = i * 2 ** (k - 1) / side
            pk = pk + (-1) ** np.floor(w) * (2 ** (k - 1) - np.floor(w + 0.5)) * erfc((2 * i + 1) * arg)
        total = total + pk / side
    return total / k_max


def _bit_llr_terms(constellation: Constellation, y, sigma_sq):
    """For each received y (…, ) compute log p(y|x_j) up to a constant: (…, M)."""
    d = np.abs(y[..., None] - constellation.points) ** 2
    return -d / sigma_sq


def _gmi_from_samples(constellation, tx_index, y, sigma_sq, weights=None):
    """``m - E[ sum_k log2( sum_j p(y|x_j) / sum_{j: b_k(j)=b_k(i)} p(y|x_j) ) ]``."""
    logp = _bit_llr_terms(constellation, y, sigma_sq)  # (S, M)
    lse_all = logsumexp(logp, axis=-1)
    labels = constellation.labels.astype(bool)
    loss = np.zeros(y.shape[0])
    for k in range(constellation.m):
        same = labels[:, k][None, :] == labels[tx_index, k][:, None]
        lse_same = logsumexp(np.where(same, logp, -np.inf), axis=-1)
        loss += lse_all - lse_same
    loss /= np.log(2)
    if weights is None:
        return constellation.m - float(np.mean(loss))
    return constellation.m - float(np.sum(weights * loss))


def gmi_gauss_hermite(constellation: Constellation, sigma_sq, nodes=10):
    """GMI (bits/symbol) of bit-metric decoding over circular AWGN of variance
    ``sigma_sq`` (total, both quadratures), uniform inputs, the constellation's
    own labeling; the noise expectation uses a nodes x nodes Gauss-Hermite grid.
    """
    if not sigma_sq > 0:
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq}")
    if nodes < 4:
        raise ValueError("need at least 4 quadrature nodes")
    xi, w = roots_hermite(nodes)
    # E[f(n)] = (1/pi) sum_ab w_a w_b f(sigma (xi_a + j xi_b))
    noise = np.sqrt(sigma_sq) * (xi[:, None] + 1j * xi[None, :]).ravel()
    weight = (w[:, None] * w[None, :]).ravel() / np.pi
    M = constellation.M
    tx_index = np.repeat(np.arange(M), noise.size)
    y = constellation.points[tx_index] + np.tile(noise, M)
    weights = np.tile(weight, M) / M
    return _gmi_from_samples(constellation, tx_index, y, sigma_sq, weights)


def gmi_monte_carlo(constellation: Constellation, sigma_sq, n_samples, rng, chunk=100_000):
    """Sample-mean GMI estimate with uniformly drawn symbols and Gaussian noise."""
    total, done = 0.0, 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        idx = rng.integers(0, constellation.M, n)
        noise = rng.normal(0, np.sqrt(sigma_sq / 2), (2, n))
        y = constellation.points[idx] + noise[0] + 1j * noise[1]
        total += _gmi_from_samples(constellation, idx, y, sigma_sq) * n
        done += n
    return total / n_samples


def fit_noise_variance(tx_syms, rx_syms):
    """Pooled ``mean |rx - tx|^2``."""
    tx = np.asarray(tx_syms).ravel()
    rx = np.asarray(rx_syms).ravel()
    if tx.size == 0 or tx.size != rx.size:
        raise ValueError("need aligned, non-empty symbol streams")
    return float(np.mean(np.abs(rx - tx) ** 2))


def evm_db(rx_syms, ref_syms):
    ref = np.asarray(ref_syms)
    err = np.mean(np.abs(np.asarray(rx_syms) - ref) ** 2)
    if err == 0:
        return float("-inf")
    return float(10 * np.log10(err / np.mean(np.abs(ref) ** 2)))


def report(tx_bits, rx_bits, tx_syms, rx_syms, constellation, nodes=10):
    """Assemble a :class:`MetricReport`; Q^2 is NaN when BER is 0 or >= 0.5."""
    b = ber(tx_bits, rx_bits)
    try:
        q2 = q2_from_ber(b)
    except ValueError:
        q2 = float("nan")
    s2 = fit_noise_variance(tx_syms, rx_syms)
    gmi = gmi_gauss_hermite(constellation, s2, nodes) if s2 > 0 else float(constellation.m)
    return MetricReport(b, q2, gmi, evm_db(rx_syms, tx_syms), int(np.size(tx_bits)),
                        int(np.size(tx_syms)), s2)
