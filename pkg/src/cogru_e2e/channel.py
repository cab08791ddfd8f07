"""Fiber channel models.

``ssfm_link`` integrates the Manakov equation span by span with a symmetric
split-step Fourier scheme and lumped EDFAs. ``nlin_*`` is the differentiable
Gaussian-noise surrogate used for the first training phase: additive circular
noise whose variance grows with the cube of launch power and depends on the
constellation's fourth moment.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants
from scipy.optimize import lsq_linear

from .signal import DualPolSignal

log = logging.getLogger(__name__)

MANAKOV = 8.0 / 9.0
NONLINEAR_PHASE_WARNING = 0.05  # rad per step


@dataclass
class LinkConfig:
    span_km: float = 80.0
    n_spans: int = 4
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.3
    nf_db: float = 5.0
    wavelength_nm: float = 1550.0
    step_km: float = 0.5
    n_channels: int = 1
    spacing_hz: float = 40e9
    baud: float = 32e9
    sps: int = 8
    rolloff: float = 0.01
    rrc_span: int = 128
    ase_noise: bool = True

    def __post_init__(self):
        for name in ("span_km", "step_km", "wavelength_nm", "spacing_hz", "baud"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alpha_db_per_km", "dispersion_ps_nm_km", "gamma_per_w_km", "nf_db"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_spans < 0:
            raise ValueError("n_spans must be >= 0")
        if self.step_km > self.span_km:
            raise ValueError("step_km must not exceed span_km")
        if self.sps < 2 or self.n_channels < 1:
            raise ValueError("sps must be >= 2 and n_channels >= 1")

    @property
    def sample_rate(self):
        return self.sps * self.baud

    @property
    def alpha_per_m(self):
        """Power attenuation coefficient in 1/m."""
        return self.alpha_db_per_km / (10 * np.log10(np.e)) / 1e3

    @property
    def beta2(self):
        """Group-velocity dispersion in s^2/m."""
        return beta2_from_dispersion(self.dispersion_ps_nm_km * 1e-6, self.wavelength_nm * 1e-9)

    @property
    def gamma(self):
        """Nonlinear coefficient in 1/(W m)."""
        return self.gamma_per_w_km / 1e3

    @property
    def span_gain(self):
        """Linear power gain that exactly compensates one span."""
        return float(np.exp(self.alpha_per_m * self.span_km * 1e3))

    @property
    def n_steps(self):
        n = self.span_km / self.step_km
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"step {self.step_km} km does not divide span {self.span_km} km")
        return int(round(n))

    @property
    def total_beta2_z(self):
        """Accumulated dispersion beta2 * L over the whole link (s^2)."""
        return self.beta2 * self.span_km * 1e3 * self.n_spans


def beta2_from_dispersion(D, wavelength):
    """``beta2 = -D * lambda^2 / (2 pi c)``; D in s/m^2, wavelength in m."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return -D * wavelength ** 2 / (2 * np.pi * constants.c)


def angular_frequencies(n, sample_rate):
    return 2 * np.pi * np.fft.fftfreq(n, 1.0 / sample_rate)


def dispersion_operator(n, sample_rate, beta2, alpha, dz):
    """Frequency-domain propagator ``exp((-alpha/2 + j beta2/2 w^2) dz)``."""
    w = angular_frequencies(n, sample_rate)
    return np.exp((-alpha / 2 + 0.5j * beta2 * w ** 2) * dz)


def ssfm_span(signal: DualPolSignal, cfg: LinkConfig, rng=None) -> DualPolSignal:
    """One fiber span (symmetric split-step) followed by its EDFA.

    Each step is a half linear step, the full nonlinear phase rotation with
    the power summed over both polarizations, and another half linear step.
    Consecutive half steps are fused into one full step.
    """
    n_steps = cfg.n_steps
    dz = cfg.span_km * 1e3 / n_steps
    n = len(signal)
    half = dispersion_operator(n, signal.sample_rate, cfg.beta2, cfg.alpha_per_m, dz / 2)
    full = half * half
    k_nl = MANAKOV * cfg.gamma * dz
    spec = np.fft.fft(signal.samples, axis=-1) * half
    max_phase = 0.0
    for step in range(n_steps):
        field = np.fft.ifft(spec, axis=-1)
        power = np.sum(field.real ** 2 + field.imag ** 2, axis=0)
        phase = k_nl * power
        max_phase = max(max_phase, float(phase.max()))
        field *= np.exp(1j * phase)
        spec = np.fft.fft(field, axis=-1)
        spec *= full if step < n_steps - 1 else half
    if max_phase > NONLINEAR_PHASE_WARNING:
        warnings.warn(f"nonlinear phase per step {max_phase:.3g} rad exceeds "
                      f"{NONLINEAR_PHASE_WARNING} rad; reduce step_km", RuntimeWarning)
    out = signal.with_samples(np.fft.ifft(spec, axis=-1))
    return edfa_amplify(out, cfg, rng)


def ase_power(cfg: LinkConfig, gain, bandwidth):
    """ASE power per polarization (W) over ``bandwidth`` for one amplifier."""
    n_sp = 10 ** (cfg.nf_db / 10) / 2
    nu = constants.c / (cfg.wavelength_nm * 1e-9)
    return n_sp * constants.h * nu * (gain - 1.0) * bandwidth


def edfa_amplify(signal: DualPolSignal, cfg: LinkConfig, rng=None, gain=None) -> DualPolSignal:
    """Amplitude gain sqrt(G) plus circular Gaussian ASE on each polarization.

    ``G`` defaults to the span loss. No noise is added when ``rng`` is None,
    ``cfg.ase_noise`` is off, or ``G == 1``.
    """
    G = cfg.span_gain if gain is None else gain
    out = signal.samples * np.sqrt(G)
    if rng is not None and cfg.ase_noise and G != 1.0:
        p = ase_power(cfg, G, signal.sample_rate)
        noise = rng.normal(size=(2, 2, len(signal))) * np.sqrt(p / 2)
        out = out + noise[0] + 1j * noise[1]
    return signal.with_samples(out)


def ssfm_link(signal: DualPolSignal, cfg: LinkConfig, rng=None) -> DualPolSignal:
    for _ in range(cfg.n_spans):
        signal = ssfm_span(signal, cfg, rng)
    return signal


# ---------------------------------------------------------------------------
# NLIN surrogate


@dataclass
class NlinConfig:
    """Noise variance per polarization, in mW, for per-channel launch power P (mW):

    ``sigma^2 = sigma_ase_sq + P^3 * (eta_nl + kappa_coeff * (mu4 - 2))``
    """

    sigma_ase_sq: float = 1e-6
    eta_nl: float = 0.0
    kappa_coeff: float = 0.0

    def __post_init__(self):
        if self.sigma_ase_sq < 0:
            raise ValueError("sigma_ase_sq must be >= 0")


def kurtosis_with_grad(points):
    """Fourth moment ratio of points given as (M, 2) reals, with d mu4 / d points."""
    p2 = np.sum(points * points, axis=1)
    m2 = p2.mean()
    m4 = (p2 * p2).mean()
    M = points.shape[0]
    mu4 = m4 / m2 ** 2
    # d p2_k / d points_k = 2 points_k
    dmu4_dp2 = (2 * p2 / M) / m2 ** 2 - 2 * m4 / m2 ** 3 / M
    return float(mu4), (dmu4_dp2 * 2)[:, None] * points


def nlin_variance(mu4, p_dbm, cfg: NlinConfig):
    """Absolute per-polarization noise variance (mW) at per-channel power p_dbm."""
    P = 10 ** (p_dbm / 10)
    var = cfg.sigma_ase_sq + P ** 3 * (cfg.eta_nl + cfg.kappa_coeff * (mu4 - 2.0))
    if var < 0:
        raise ValueError(f"NLIN variance {var:g} is negative at {p_dbm} dBm, mu4={mu4:.4f}")
    return var


def normalized_variance(mu4, p_dbm, cfg: NlinConfig):
    """Noise variance relative to unit-power symbols on one polarization."""
    return nlin_variance(mu4, p_dbm, cfg) / (10 ** (p_dbm / 10) / 2)


def nlin_channel(x, mu4, p_dbm, cfg: NlinConfig, rng):
    """``y = x + sigma * eps`` for symbols as real pairs (..., 2).

    Returns ``(y, cache)``; ``eps`` is drawn once and kept in the cache so
    :func:`nlin_backward` differentiates the same realization.
    """
    var = normalized_variance(mu4, p_dbm, cfg)
    eps = rng.normal(0.0, np.sqrt(0.5), size=np.shape(x))
    sigma = np.sqrt(var)
    return x + sigma * eps, (eps, sigma, p_dbm, cfg)


def nlin_backward(cache, grad_y):
    """Returns ``(grad_x, grad_mu4)``."""
    eps, sigma, p_dbm, cfg = cache
    P = 10 ** (p_dbm / 10)
    dvar_dmu4 = P ** 3 * cfg.kappa_coeff / (P / 2)
    if sigma == 0:
        return grad_y, 0.0
    grad_sigma = float(np.sum(grad_y * eps))
    return grad_y, grad_sigma * dvar_dmu4 / (2 * sigma)


def fit_nlin(p_dbm, mu4, measured_var):
    """Least-squares NLIN coefficients from measured post-DSP error variance.

    ``measured_var`` is relative to unit-power symbols (as returned by
    :func:`metrics.fit_noise_variance`). Residuals are weighted by the
    measurement so every power counts equally. ``sigma_ase_sq`` and ``eta_nl``
    are constrained non-negative; ``kappa_coeff`` is free and only identifiable
    when more than one constellation (``mu4`` value) was measured.
    """
    p_dbm = np.asarray(p_dbm, float)
    mu4 = np.asarray(mu4, float)
    P = 10 ** (p_dbm / 10)
    v_abs = np.asarray(measured_var, float) * P / 2
    cols = [np.ones_like(P), P ** 3]
    several = np.ptp(mu4) > 1e-6
    if several:
        cols.append(P ** 3 * (mu4 - 2.0))
    A = np.stack(cols, axis=1) / v_abs[:, None]
    lb = [0.0, 0.0] + ([-np.inf] if several else [])
    res = lsq_linear(A, np.ones_like(P), bounds=(lb, np.inf))
    coef = list(res.x) + ([] if several else [0.0])
    cfg = NlinConfig(*(float(c) for c in coef))
    log.info("NLIN fit: %s", cfg)
    return cfg
