import dataclasses
import warnings

import numpy as np
import pytest

from cogru_e2e import channel, link, signal
from cogru_e2e.channel import LinkConfig, NlinConfig
from cogru_e2e.signal import DualPolSignal
from gradcheck import max_rel_error, numerical_grad


def _field(rng, n_sym=512, p_dbm=0.0, cfg=None):
    cfg = cfg or LinkConfig()
    c = signal.square_qam(64)
    sym = c.points[rng.integers(0, 64, (2, n_sym))]
    return link.modulate(sym, cfg, p_dbm)


def _rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_beta2_value():
    cfg = LinkConfig()
    assert cfg.beta2 * 1e27 == pytest.approx(-21.6826, abs=1e-3)  # ps^2/km


def test_step_must_divide_span():
    with pytest.raises(ValueError):
        LinkConfig(step_km=0.3).n_steps


def test_linear_propagation_matches_analytic_filter():
    cfg = LinkConfig(gamma_per_w_km=0.0)
    x = _field(np.random.default_rng(0), cfg=cfg)
    y = channel.ssfm_span(x, cfg)
    w = channel.angular_frequencies(len(x), x.sample_rate)
    L = cfg.span_km * 1e3
    ref = np.fft.ifft(np.fft.fft(x.samples, axis=-1) * np.exp(0.5j * cfg.beta2 * w ** 2 * L), axis=-1)
    assert _rel_l2(y.samples, ref) < 1e-9


def test_lossless_energy_conserved():
    cfg = LinkConfig(alpha_db_per_km=0.0)
    x = _field(np.random.default_rng(1), p_dbm=3.0, cfg=cfg)
    e0 = np.sum(np.abs(x.samples) ** 2)
    y = x
    for _ in range(3):
        y = channel.ssfm_span(y, cfg, np.random.default_rng(9))
        e1 = np.sum(np.abs(y.samples) ** 2)
        assert abs(e1 - e0) / e0 < 1e-9
        e0 = e1


def test_cw_nonlinear_phase_lossless():
    cfg = LinkConfig(alpha_db_per_km=0.0, n_spans=1)
    P = 5e-3
    samples = np.zeros((2, 256), complex)
    samples[0] = np.sqrt(P)
    y = channel.ssfm_span(DualPolSignal(samples, cfg.sample_rate), cfg)
    phase = np.angle(y.samples[0])
    expected = np.angle(np.exp(1j * 8 / 9 * cfg.gamma * P * cfg.span_km * 1e3))
    assert np.allclose(phase, expected, atol=1e-12)
    assert np.allclose(np.abs(y.samples[0]), np.sqrt(P), rtol=1e-12)


def test_cw_nonlinear_phase_with_loss_follows_midpoint_rule():
    cfg = LinkConfig(n_spans=1)
    P = 5e-3
    samples = np.zeros((2, 64), complex)
    samples[:, :] = np.sqrt(P / 2)
    y = channel.ssfm_span(DualPolSignal(samples, cfg.sample_rate), cfg)
    dz = cfg.step_km * 1e3
    k = np.arange(cfg.n_steps)
    # power seen by step k sits half a step into it
    phi = 8 / 9 * cfg.gamma * dz * np.sum(P * np.exp(-cfg.alpha_per_m * (k + 0.5) * dz))
    assert np.allclose(np.angle(y.samples), np.angle(np.exp(1j * phi)), atol=1e-12)
    # and approaches gamma P L_eff
    L_eff = (1 - np.exp(-cfg.alpha_per_m * cfg.span_km * 1e3)) / cfg.alpha_per_m
    assert phi == pytest.approx(8 / 9 * cfg.gamma * P * L_eff, rel=1e-4)


@pytest.mark.parametrize("p_dbm", [-2.0, 2.0])
def test_step_halving_converged(p_dbm):
    cfg = LinkConfig(n_spans=1)
    x = _field(np.random.default_rng(2), n_sym=512, p_dbm=p_dbm, cfg=cfg)
    coarse = channel.ssfm_span(x, cfg)
    fine = channel.ssfm_span(x, dataclasses.replace(cfg, step_km=cfg.step_km / 2))
    assert _rel_l2(coarse.samples, fine.samples) < 1e-4


def test_large_steps_warn():
    cfg = LinkConfig(n_spans=1, step_km=40.0)
    x = _field(np.random.default_rng(3), p_dbm=10.0, cfg=cfg)
    with pytest.warns(RuntimeWarning, match="nonlinear phase"):
        channel.ssfm_span(x, cfg)


# --- EDFA ------------------------------------------------------------------

def test_spontaneous_emission_factor():
    assert 10 ** (5.0 / 10) / 2 == pytest.approx(1.581, abs=1e-3)


def test_edfa_noise_power_monte_carlo():
    cfg = LinkConfig()
    n = 200_000
    x = DualPolSignal(np.zeros((2, n), complex), cfg.sample_rate)
    y = channel.edfa_amplify(x, cfg, np.random.default_rng(4))
    expected = channel.ase_power(cfg, cfg.span_gain, cfg.sample_rate)
    measured = np.mean(np.abs(y.samples) ** 2, axis=1)
    assert np.allclose(measured, expected, rtol=0.02)


def test_edfa_gain_restores_span_loss():
    cfg = LinkConfig(gamma_per_w_km=0.0, dispersion_ps_nm_km=0.0)
    x = _field(np.random.default_rng(5), cfg=cfg)
    y = channel.ssfm_span(x, cfg)
    assert y.power() == pytest.approx(x.power(), rel=1e-12)


def test_edfa_noiseless_without_rng():
    cfg = LinkConfig()
    x = DualPolSignal(np.zeros((2, 16), complex), cfg.sample_rate)
    assert np.all(channel.edfa_amplify(x, cfg).samples == 0)


# --- NLIN ------------------------------------------------------------------

def test_nlin_awgn_special_case():
    cfg = NlinConfig(sigma_ase_sq=2e-4, eta_nl=0.0, kappa_coeff=0.0)
    rng = np.random.default_rng(6)
    x = np.zeros((400_000, 2))
    y, _ = channel.nlin_channel(x, 1.38, -1.0, cfg, rng)
    P = 10 ** (-1.0 / 10)
    measured = np.mean(np.sum(y ** 2, axis=1))
    assert measured == pytest.approx(2e-4 / (P / 2), rel=0.01)


def test_nlin_variance_grows_with_cube_of_power():
    cfg = NlinConfig(sigma_ase_sq=0.0, eta_nl=1e-3, kappa_coeff=0.0)
    v1 = channel.nlin_variance(1.38, 0.0, cfg)
    v2 = channel.nlin_variance(1.38, 10 * np.log10(2), cfg)
    assert v2 / v1 == pytest.approx(8.0, rel=1e-12)


def test_nlin_rejects_negative_variance():
    with pytest.raises(ValueError):
        channel.nlin_variance(1.0, 3.0, NlinConfig(0.0, 0.0, 1e-3))


def test_kurtosis_values_and_gradient():
    q = signal.square_qam(64)
    pts = np.stack([q.points.real, q.points.imag], axis=1)
    mu4, g = channel.kurtosis_with_grad(pts)
    assert mu4 == pytest.approx(1.380952, abs=1e-6)
    assert channel.kurtosis_with_grad(pts * 3.0)[0] == pytest.approx(mu4, abs=1e-12)
    p = pts + np.random.default_rng(7).normal(0, 0.05, pts.shape)
    pl = p.astype(np.longdouble)

    def mu4_ld():
        p2 = np.sum(pl * pl, axis=1)
        return np.mean(p2 * p2) / np.mean(p2) ** 2

    fd = numerical_grad(mu4_ld, pl)
    assert max_rel_error(channel.kurtosis_with_grad(p)[1], fd.astype(float)) < 1e-6


def test_nlin_backward_matches_finite_differences():
    cfg = NlinConfig(sigma_ase_sq=1e-4, eta_nl=2e-4, kappa_coeff=3e-4)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(32, 2))
    w = rng.normal(size=(32, 2))
    mu4 = 1.4
    y, cache = channel.nlin_channel(x, mu4, 1.0, cfg, np.random.default_rng(1))
    gx, gmu = channel.nlin_backward(cache, w)
    eps = cache[0]

    def loss(m):
        s = np.sqrt(np.longdouble(channel.normalized_variance(m, 1.0, cfg)))
        return np.sum(w * (x + s * eps))

    h = 1e-6
    fd = (loss(mu4 + h) - loss(mu4 - h)) / (2 * h)
    assert abs(float(fd) - gmu) / abs(gmu) < 1e-6
    assert np.array_equal(gx, w)


def test_fit_nlin_recovers_coefficients():
    truth = NlinConfig(sigma_ase_sq=1.3e-3, eta_nl=8e-4, kappa_coeff=4e-4)
    p = np.array([-4.0, -2.0, 0.0, 2.0, 4.0] * 2)
    mu4 = np.array([1.381] * 5 + [1.0] * 5)
    var = np.array([channel.normalized_variance(m, q, truth) for m, q in zip(mu4, p)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = channel.fit_nlin(p, mu4, var)
    for f in ("sigma_ase_sq", "eta_nl", "kappa_coeff"):
        assert getattr(fit, f) == pytest.approx(getattr(truth, f), rel=1e-6)


def test_fit_nlin_single_format_leaves_kappa_zero():
    truth = NlinConfig(sigma_ase_sq=1e-3, eta_nl=5e-4, kappa_coeff=0.0)
    p = np.array([-2.0, 0.0, 2.0, 4.0])
    var = [channel.normalized_variance(1.381, q, truth) for q in p]
    fit = channel.fit_nlin(p, [1.381] * 4, var)
    assert fit.kappa_coeff == 0.0
    assert fit.eta_nl == pytest.approx(5e-4, rel=1e-6)
