from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize

from memqfc.errors import ConfigError, DomainError, FitError
from memqfc.fitting import (
    fit_gaussian_peak,
    fit_linear_origin,
    fit_sin2_efficiency,
    gaussian_model,
    least_squares,
    read_points,
    sin2_model,
    write_points,
)

PUMP = np.array([0.005, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16])


def _eta(p, eta_max=0.136, eta_n=1.2, length=4.0):
    return eta_max * np.sin(length * np.sqrt(eta_n * p)) ** 2


def test_sin2_noiseless_exact():
    p = np.linspace(0.05, 3.0, 15)
    res = fit_sin2_efficiency(p, _eta(p, length=1.0), length_cm=1.0)
    assert res["eta_max"] == pytest.approx(0.136, rel=1e-6)
    assert res["eta_n"] == pytest.approx(1.2, rel=1e-6)
    res4 = fit_sin2_efficiency(PUMP, _eta(PUMP))
    assert res4["eta_max"] == pytest.approx(0.136, rel=1e-6)
    assert res4["eta_n"] == pytest.approx(1.2, rel=1e-6)
    assert res4.converged


def test_sin2_matches_scipy():
    rng = np.random.default_rng(4)
    y = _eta(PUMP) * (1 + 0.05 * rng.standard_normal(PUMP.size))
    sig = 0.05 * _eta(PUMP)
    ours = fit_sin2_efficiency(PUMP, y, sig)
    ref, cov = optimize.curve_fit(lambda p, a, b: _eta(p, a, b), PUMP, y, p0=[0.13, 1.1], sigma=sig,
                                  absolute_sigma=True, method="lm")
    assert ours["eta_max"] == pytest.approx(ref[0], rel=1e-6)
    assert ours["eta_n"] == pytest.approx(ref[1], rel=1e-6)
    assert ours.sigmas["eta_max"] == pytest.approx(math.sqrt(cov[0, 0]), rel=1e-3)
    assert ours.sigmas["eta_n"] == pytest.approx(math.sqrt(cov[1, 1]), rel=1e-3)
    # unweighted: covariance scaled by reduced chi-square, as curve_fit does
    ours_u = fit_sin2_efficiency(PUMP, y, weighted=False)
    ref_u, cov_u = optimize.curve_fit(lambda p, a, b: _eta(p, a, b), PUMP, y, p0=[0.13, 1.1])
    assert ours_u["eta_max"] == pytest.approx(ref_u[0], rel=1e-6)
    assert ours_u.sigmas["eta_max"] == pytest.approx(math.sqrt(cov_u[0, 0]), rel=1e-3)


@pytest.mark.parametrize("truth", [(0.136, 1.2), (0.114, 1.19)])
def test_sin2_recovery_five_percent(truth):
    rng = np.random.default_rng(int(truth[0] * 1000))
    for _ in range(20):
        y = _eta(PUMP, *truth) * (1 + 0.05 * rng.standard_normal(PUMP.size))
        res = fit_sin2_efficiency(PUMP, y, 0.05 * _eta(PUMP, *truth))
        assert abs(res["eta_max"] - truth[0]) < 0.012
        assert abs(res["eta_n"] - truth[1]) < 0.10


def test_sin2_input_errors():
    with pytest.raises(DomainError):
        fit_sin2_efficiency(PUMP[:3], _eta(PUMP[:3]))
    with pytest.raises(DomainError):
        fit_sin2_efficiency(-PUMP, _eta(PUMP))
    with pytest.raises(DomainError):
        fit_sin2_efficiency(PUMP, np.zeros(PUMP.size))


def _coverage(fit_once, n=200):
    return sum(fit_once(k) for k in range(n)) / n


def test_sin2_coverage():
    def once(k):
        rng = np.random.default_rng(1000 + k)
        sig = 0.05 * _eta(PUMP)
        res = fit_sin2_efficiency(PUMP, _eta(PUMP) + sig * rng.standard_normal(PUMP.size), sig)
        return (abs(res["eta_max"] - 0.136) < 3 * res.sigmas["eta_max"]
                and abs(res["eta_n"] - 1.2) < 3 * res.sigmas["eta_n"])
    assert _coverage(once) >= 0.95


def test_linear_origin_examples():
    mu = np.array([0.05, 0.1, 0.2, 0.3])
    res = fit_linear_origin(mu, 85 * mu)
    assert res["snr_max"] == pytest.approx(85.0, abs=5e-4)
    one = fit_linear_origin([1.0], [85.0])
    assert one["snr_max"] == 85.0
    assert math.isnan(one.sigmas["snr_max"]) and not one.sigma_defined
    with pytest.raises(DomainError):
        fit_linear_origin([0.0, 0.0], [1.0, 2.0])


def test_linear_origin_matches_lstsq():
    rng = np.random.default_rng(8)
    mu = np.linspace(0.02, 0.3, 12)
    sig = 0.05 * 85 * mu
    y = 85 * mu + sig * rng.standard_normal(mu.size)
    res = fit_linear_origin(mu, y, sig)
    w = 1 / sig
    slope, *_ = np.linalg.lstsq((mu * w)[:, None], y * w, rcond=None)
    assert res["snr_max"] == pytest.approx(slope[0], rel=1e-12)
    assert res.sigmas["snr_max"] == pytest.approx(1 / math.sqrt(np.sum((mu / sig) ** 2)), rel=1e-12)


def test_linear_coverage():
    mu = np.linspace(0.02, 0.3, 12)
    sig = 0.05 * 85 * mu

    def once(k):
        rng = np.random.default_rng(k)
        res = fit_linear_origin(mu, 85 * mu + sig * rng.standard_normal(mu.size), sig)
        return abs(res["snr_max"] - 85) < 3 * res.sigmas["snr_max"]
    assert _coverage(once) >= 0.95


def _peak(t, amp=500.0, c=2e-9, fwhm=11.4e-9, off=5.0):
    return gaussian_model(t, [amp, c, fwhm, off])


def test_gaussian_exact():
    t = np.arange(-30e-9, 30e-9, 1.28e-9)
    y = _peak(t)
    res = fit_gaussian_peak(t, y, sigma=np.ones_like(y))
    assert res["fwhm"] == pytest.approx(11.4e-9, rel=1e-6)
    assert res["center"] == pytest.approx(2e-9, rel=1e-6)
    assert res["amplitude"] == pytest.approx(500.0, rel=1e-6)
    assert res["offset"] == pytest.approx(5.0, rel=1e-6)


def test_gaussian_coverage():
    t = np.arange(-30e-9, 30e-9, 1.28e-9)

    def once(k):
        rng = np.random.default_rng(500 + k)
        res = fit_gaussian_peak(t, rng.poisson(_peak(t)).astype(float))
        return abs(res["fwhm"] - 11.4e-9) < 3 * res.sigmas["fwhm"]
    assert _coverage(once) >= 0.95


def test_gaussian_flat_histogram():
    t = np.arange(20) * 1e-9
    with pytest.raises(FitError) as info:
        fit_gaussian_peak(t, np.full(20, 7.0))
    assert info.value.best is not None
    with pytest.raises(DomainError):
        fit_gaussian_peak(t, np.zeros(20))


def test_scaling_equivariance():
    rng = np.random.default_rng(2)
    y = _eta(PUMP) * (1 + 0.05 * rng.standard_normal(PUMP.size))
    sig = 0.05 * _eta(PUMP)
    base = fit_sin2_efficiency(PUMP, y, sig)
    k = 3.7
    scaled = fit_sin2_efficiency(PUMP, k * y, k * sig)
    assert scaled["eta_max"] == pytest.approx(k * base["eta_max"], rel=1e-6)
    assert scaled["eta_n"] == pytest.approx(base["eta_n"], rel=1e-6)
    t = np.arange(-30e-9, 30e-9, 1.28e-9)
    c = rng.poisson(_peak(t)).astype(float)
    g1 = fit_gaussian_peak(t, c, np.sqrt(np.maximum(c, 1)))
    g2 = fit_gaussian_peak(t, k * c, k * np.sqrt(np.maximum(c, 1)))
    assert g2["amplitude"] == pytest.approx(k * g1["amplitude"], rel=1e-6)
    assert g2["fwhm"] == pytest.approx(g1["fwhm"], rel=1e-6)


def test_zero_gradient_at_optimum():
    rng = np.random.default_rng(6)
    y = _eta(PUMP) * (1 + 0.05 * rng.standard_normal(PUMP.size))
    sig = 0.05 * _eta(PUMP)
    res = fit_sin2_efficiency(PUMP, y, sig)
    f = sin2_model(4.0)
    p = np.array([res["eta_max"], res["eta_n"]])

    def cost(q):
        r = (f(PUMP, q) - y) / sig
        return float(r @ r)
    for j in range(2):
        h = 1e-6 * abs(p[j])
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        grad = (cost(up) - cost(dn)) / (2 * h)
        assert abs(grad * p[j]) < 1e-6 * max(res.residual_norm, 1.0)


def test_quadratic_one_parameter():
    x = np.arange(5.0)
    res = least_squares(lambda x, p: p[0] * np.ones_like(x), x, np.full(5, 3.0), [0.0])
    assert res["p0"] == pytest.approx(3.0, abs=1e-10)
    assert res.iterations <= 3


def _rosenbrock(x, p):
    return np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]])


def test_rosenbrock():
    res = least_squares(_rosenbrock, np.zeros(2), np.zeros(2), [-1.2, 1.0], names=["a", "b"])
    assert res["a"] == pytest.approx(1.0, abs=1e-8)
    assert res["b"] == pytest.approx(1.0, abs=1e-8)
    ref = optimize.least_squares(lambda p: _rosenbrock(None, p), [-1.2, 1.0], method="lm")
    assert np.allclose([res["a"], res["b"]], ref.x, atol=1e-8)


def test_non_convergence_reports_best_point():
    with pytest.raises(FitError) as info:
        least_squares(_rosenbrock, np.zeros(2), np.zeros(2), [-1.2, 1.0], names=["a", "b"], max_iter=2)
    assert set(info.value.best) == {"a", "b"}


def test_nan_model_output():
    def bad(x, p):
        with np.errstate(invalid="ignore"):
            return np.sqrt(p[0] - 5.0) * x
    with pytest.raises(DomainError, match=r"\[1\.0\]"):
        least_squares(bad, np.arange(3.0), np.arange(3.0), [1.0])


def test_bad_inputs():
    with pytest.raises(DomainError):
        least_squares(_rosenbrock, np.zeros(2), np.array([np.nan, 0.0]), [0.0, 0.0])
    with pytest.raises(DomainError):
        least_squares(_rosenbrock, np.zeros(2), np.zeros(2), [0.0, 0.0], sigma=[1.0, 0.0])
    with pytest.raises(ConfigError):
        least_squares(_rosenbrock, np.zeros(2), np.zeros(2), [0.0, 0.0], names=["a"])


def test_points_round_trip(tmp_path):
    p = write_points(tmp_path / "pts.csv", PUMP, _eta(PUMP), 0.01)
    x, y, s = read_points(p)
    assert np.array_equal(x, PUMP) and np.array_equal(y, _eta(PUMP))
    assert np.all(s == 0.01)
    p2 = write_points(tmp_path / "nosig.csv", [1.0], [2.0])
    assert read_points(p2)[2] is None


def test_points_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n3,four\n")
    with pytest.raises(ConfigError) as info:
        read_points(bad)
    assert info.value.line == 3
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError) as info:
        read_points(bad)
    assert info.value.line == 1
    bad.write_text("")
    with pytest.raises(ConfigError):
        read_points(bad)
