from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps
from scipy.special import gammaln

from memqfc.errors import DomainError
from memqfc.stats import (
    ChannelResponse,
    ConversionPrediction,
    PairNumberModel,
    binomial_thin,
    g2_auto_ideal,
    g2_cross_ideal,
    joint_click_probabilities,
    predict_g2_after_conversion,
    sample_pair_number,
    thermal_pgf,
    thermal_pmf,
)


def _moment_ratio(mu, n_max=200):
    """Brute-force <n^2>/<n>^2 from the truncated pmf."""
    n = np.arange(n_max + 1)
    p = np.array([thermal_pmf(mu, int(k)) for k in n])
    return float(np.sum(n * n * p) / np.sum(n * p) ** 2)


def test_thermal_pmf_examples():
    assert thermal_pmf(0, 0) == 1.0
    assert thermal_pmf(1, 0) == 0.5
    assert thermal_pmf(0.01, 1) == pytest.approx(0.01 / 1.01 ** 2, rel=1e-14)
    assert thermal_pmf(0.01, 1) == pytest.approx(0.009803, abs=5e-7)


def test_thermal_pmf_matches_scipy_geometric():
    for mu in (0.003, 0.4, 7.0):
        q = 1.0 / (1.0 + mu)
        for n in range(30):
            assert thermal_pmf(mu, n) == pytest.approx(sps.geom.pmf(n + 1, q), rel=1e-12)


@pytest.mark.parametrize("args", [(-0.1, 0), (0.1, -1), (0.1, 1.5), (math.nan, 0), (math.inf, 1)])
def test_thermal_pmf_domain(args):
    with pytest.raises(DomainError):
        thermal_pmf(*args)


def test_model_rejects_negative_mu():
    with pytest.raises(DomainError):
        PairNumberModel(-1e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.0, max_value=10.0))
def test_truncated_pmf_normalized(mu):
    m = PairNumberModel(mu)
    k = m.truncation()
    assert k <= 500
    assert abs(m.pmf_table().sum() - 1.0) < 1e-9


def test_sampler_mu_zero():
    rng = np.random.default_rng(0)
    assert sample_pair_number(PairNumberModel(0.0), rng) == 0
    assert not np.any(sample_pair_number(PairNumberModel(0.0), rng, 1000))


def test_sampler_moments():
    rng = np.random.default_rng(11)
    n = sample_pair_number(PairNumberModel(0.1), rng, 1_000_000)
    var = 0.1 * 1.1
    assert abs(n.mean() - 0.1) < 3 * math.sqrt(var / n.size)
    # sigma of the sample variance from the fourth central moment of the geometric law
    m4 = var * (1 + 9 * var)
    assert abs(n.var() - var) < 3 * math.sqrt((m4 - var ** 2) / n.size)


def test_sampler_deterministic():
    a = sample_pair_number(PairNumberModel(0.2), np.random.default_rng(5), 1000)
    b = sample_pair_number(PairNumberModel(0.2), np.random.default_rng(5), 1000)
    assert np.array_equal(a, b)


def _chi2_against_thermal(samples, mu):
    kmax = 6
    obs = np.bincount(np.minimum(samples, kmax), minlength=kmax + 1)
    p = np.array([thermal_pmf(mu, k) for k in range(kmax)])
    p = np.append(p, 1 - p.sum())
    return sps.chisquare(obs, p * samples.size).pvalue


def test_sampler_chi2():
    rng = np.random.default_rng(2)
    assert _chi2_against_thermal(sample_pair_number(PairNumberModel(0.5), rng, 200_000), 0.5) > 0.01


def test_binomial_thin_examples():
    rng = np.random.default_rng(0)
    assert binomial_thin(5, 1.0, rng) == 5
    assert binomial_thin(5, 0.0, rng) == 0
    with pytest.raises(DomainError):
        binomial_thin(5, 1.2, rng)
    with pytest.raises(DomainError):
        binomial_thin(5, -0.1, rng)


def test_thinned_thermal_matches_convolution():
    # oracle: brute-force sum_n p(n) C(n,k) eta^k (1-eta)^(n-k)
    mu, eta = 0.8, 0.35
    for k in range(6):
        direct = sum(thermal_pmf(mu, n) * math.comb(n, k) * eta ** k * (1 - eta) ** (n - k)
                     for n in range(k, 400))
        assert direct == pytest.approx(thermal_pmf(eta * mu, k), rel=1e-10)


def test_thinning_closure_chi2():
    rng = np.random.default_rng(2024)
    mu, eta = 0.6, 0.3
    n = sample_pair_number(PairNumberModel(mu), rng, 1_000_000)
    assert _chi2_against_thermal(binomial_thin(n, eta, rng), eta * mu) > 0.01


def test_g2_cross_examples():
    assert g2_cross_ideal(1.0) == pytest.approx(3.0, rel=1e-14)
    assert g2_cross_ideal(0.01) == pytest.approx(102.0, rel=1e-14)
    assert g2_cross_ideal(math.inf) == 2.0
    assert g2_cross_ideal(1e12) == pytest.approx(2.0)
    for mu in (0.0, -1.0):
        with pytest.raises(DomainError):
            g2_cross_ideal(mu)


@pytest.mark.parametrize("mu", [1.0, 0.01, 0.3])
def test_g2_cross_brute_force(mu):
    # the joint state is diagonal, so <n_s n_as> = <n^2>
    assert g2_cross_ideal(mu) == pytest.approx(_moment_ratio(mu), rel=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6), st.floats(min_value=1.0001, max_value=10.0))
def test_g2_cross_monotone(mu, factor):
    assert g2_cross_ideal(mu) > 2.0
    assert g2_cross_ideal(mu * factor) < g2_cross_ideal(mu)


def test_g2_auto():
    assert g2_auto_ideal() == 2.0


def test_predict_g2_examples():
    assert predict_g2_after_conversion(22, 18) == pytest.approx(10.45, rel=1e-14)
    assert predict_g2_after_conversion(math.inf, 18) == 19.0
    assert predict_g2_after_conversion(1e12, 18) == pytest.approx(19.0, rel=1e-9)
    assert predict_g2_after_conversion(2, math.inf) == 2.0
    assert predict_g2_after_conversion(2, 1e12) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        predict_g2_after_conversion(0, 0)
    with pytest.raises(DomainError):
        predict_g2_after_conversion(-1, 3)
    p = ConversionPrediction.from_inputs(22, 18)
    assert p.g2_out == pytest.approx(10.45)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1.0, max_value=1e4), st.floats(min_value=0.0, max_value=1e4))
def test_predict_g2_bounds(g2_in, snr):
    out = predict_g2_after_conversion(g2_in, snr)
    assert out >= 1.0 - 1e-12
    assert out <= min(g2_in, snr + 1.0) * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1.001, max_value=1e3), st.floats(min_value=0.0, max_value=1e3),
       st.floats(min_value=1.01, max_value=10.0))
def test_predict_g2_monotone_in_snr(g2_in, snr, factor):
    assert predict_g2_after_conversion(g2_in, snr * factor + 1e-3) > predict_g2_after_conversion(g2_in, snr)


def test_thermal_pgf():
    assert thermal_pgf(0.3, 1.0) == pytest.approx(1.0)
    z = 0.4
    direct = sum(thermal_pmf(0.3, n) * z ** n for n in range(200))
    assert thermal_pgf(0.3, z) == pytest.approx(direct, rel=1e-12)


def _routing_table(n, probs):
    """Multinomial pmf of (k0, k1) photons routed to channels 0 and 1 out of n."""
    k0, k1 = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    rest = n - k0 - k1
    ok = rest >= 0
    r = np.where(ok, rest, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = gammaln(n + 1) - gammaln(k0 + 1) - gammaln(k1 + 1) - gammaln(r + 1)
        for k, p in ((k0, probs[0]), (k1, probs[1]), (r, probs[2])):
            logp = logp + (np.where(k > 0, k * np.log(p), 0.0) if p > 0 else np.where(k > 0, -np.inf, 0.0))
    return np.where(ok, np.exp(logp), 0.0), k0, k1


def _brute_force_clicks(mu, a, b, n_max=14):
    """Enumerate photon numbers and multinomial routings of both photons of every pair."""
    pa = pb = pab = 0.0
    bg_a, bg_b = 1 - math.exp(-a.background), 1 - math.exp(-b.background)
    for n in range(n_max + 1):
        pn = thermal_pmf(mu, n)
        ts, s0, s1 = _routing_table(n, (a.stokes, b.stokes, 1 - a.stokes - b.stokes))
        ta, a0, a1 = _routing_table(n, (a.antistokes, b.antistokes, 1 - a.antistokes - b.antistokes))
        w = pn * ts.ravel()[:, None] * ta.ravel()[None, :]
        ca = np.where((s0.ravel()[:, None] + a0.ravel()[None, :]) > 0, 1.0, bg_a)
        cb = np.where((s1.ravel()[:, None] + a1.ravel()[None, :]) > 0, 1.0, bg_b)
        pa += float(np.sum(w * ca))
        pb += float(np.sum(w * cb))
        pab += float(np.sum(w * ca * cb))
    return pa, pb, pab


@pytest.mark.parametrize("mu", [0.05, 0.4])
def test_joint_clicks_brute_force(mu):
    a = ChannelResponse(stokes=0.06, antistokes=0.0, background=4e-6)
    b = ChannelResponse(stokes=0.0, antistokes=0.14, background=2e-3)
    got = joint_click_probabilities(mu, a, b)
    want = _brute_force_clicks(mu, a, b, n_max=14 if mu < 0.1 else 30)
    assert got == pytest.approx(want, rel=1e-8)


def test_joint_clicks_split_arm():
    # both detectors behind a splitter on the same mode
    a = ChannelResponse(antistokes=0.1)
    b = ChannelResponse(antistokes=0.1)
    got = joint_click_probabilities(0.2, a, b)
    assert got == pytest.approx(_brute_force_clicks(0.2, a, b, n_max=30), rel=1e-8)


def test_joint_clicks_coherent_independent():
    a = ChannelResponse(stokes=0.3, background=0.01)
    b = ChannelResponse(antistokes=0.2)
    pa, pb, pab = joint_click_probabilities(0.1, a, b, source="coherent")
    assert pab == pytest.approx(pa * pb, rel=1e-12)
    with pytest.raises(DomainError):
        joint_click_probabilities(0.1, a, b, source="squeezed")
