import math

import numpy as np
import pytest

from cmlab.channel import (
    Covariance, Trace, apply_awgn, estimate_covariance, measure_snr, rx_noise_load,
    sigma_from_snr,
)
from cmlab.errors import ConditioningError, LengthError
from cmlab.modulation import build_8psk

C = build_8psk("brgc")


def _trace(n, sigma, seed=0):
    idx = np.random.default_rng(seed).integers(0, 8, n)
    tx = C.points[idx]
    return Trace(tx, apply_awgn(tx, sigma, seed + 1))


@pytest.mark.parametrize("snr, var", [(0.0, 0.5), (6.0, 10**-0.6 / 2), (20.0, 0.005)])
def test_sigma_from_snr(snr, var):
    np.testing.assert_allclose(sigma_from_snr(snr, C).matrix, var * np.eye(2), rtol=1e-12)


def test_sigma_from_snr_six_db_value():
    assert sigma_from_snr(6.0, C).matrix[0, 0] == pytest.approx(0.12559, abs=1e-5)


def test_sigma_from_snr_infinite():
    assert np.all(sigma_from_snr(math.inf, C).matrix == 0)


def test_covariance_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        Covariance(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_covariance_rejects_indefinite():
    cov = Covariance(np.array([[1.0, 0.0], [0.0, -1e-3]]))
    for method in (cov.precision, cov.sqrt, cov.logdet):
        with pytest.raises(ConditioningError):
            method()


def test_covariance_roundtrips():
    m = np.array([[0.3, 0.1], [0.1, 0.2]])
    cov = Covariance(m)
    np.testing.assert_allclose(cov.sqrt() @ cov.sqrt(), m, atol=1e-14)
    np.testing.assert_allclose(cov.precision() @ m, np.eye(2), atol=1e-12)
    assert cov.logdet() == pytest.approx(np.log(np.linalg.det(m)))


def test_awgn_vanishing_noise():
    x = C.points[[0, 3, 5]]
    np.testing.assert_allclose(apply_awgn(x, 1e-30 * np.eye(2), 1), x, atol=1e-12)


def test_awgn_deterministic():
    x = np.tile(C.points, (100, 1))
    assert np.array_equal(apply_awgn(x, 0.1 * np.eye(2), 9), apply_awgn(x, 0.1 * np.eye(2), 9))
    assert not np.array_equal(apply_awgn(x, 0.1 * np.eye(2), 9), apply_awgn(x, 0.1 * np.eye(2), 10))


def test_awgn_sample_covariance_within_three_sigma():
    n = 10**6
    var = 0.2
    z = apply_awgn(np.zeros((n, 2)), var * np.eye(2), 5)
    s = z.T @ z / n
    # Wishart spread: sd of a diagonal entry 2 var^2/n, off-diagonal var^2/n
    assert abs(s[0, 0] - var) < 3 * math.sqrt(2 * var**2 / n)
    assert abs(s[1, 1] - var) < 3 * math.sqrt(2 * var**2 / n)
    assert abs(s[0, 1]) < 3 * math.sqrt(var**2 / n)


def test_awgn_rejects_singular():
    with pytest.raises(ConditioningError):
        apply_awgn(np.zeros((3, 2)), np.zeros((2, 2)), 0)


def test_estimate_diagonal():
    s0 = np.diag([0.1, 0.2])
    est = estimate_covariance(_trace(64800, s0)).matrix
    assert np.all(np.abs(np.diag(est) / np.diag(s0) - 1) < 0.05)


def test_estimate_correlated_off_diagonal():
    s0 = np.array([[0.1, 0.05], [0.05, 0.2]])
    est = estimate_covariance(_trace(64800, s0, seed=3)).matrix
    assert abs(est[0, 1] / 0.05 - 1) < 0.2


def test_estimate_zero_noise_is_degenerate():
    t = Trace(C.points, C.points.copy())
    cov = estimate_covariance(t)
    assert cov.degenerate and not np.any(cov.matrix)
    with pytest.raises(ConditioningError):
        cov.precision()


def test_estimate_needs_two_symbols():
    with pytest.raises(LengthError):
        estimate_covariance(Trace(C.points[:1], C.points[:1]))


def test_trace_shape_mismatch():
    with pytest.raises(LengthError):
        Trace(np.zeros((3, 2)), np.zeros((4, 2)))


def test_measure_snr_ten_db():
    assert measure_snr(_trace(64800, 0.05 * np.eye(2))) == pytest.approx(10.0, abs=0.1)


def test_measure_snr_doubling_noise():
    t = _trace(5000, 0.1 * np.eye(2))
    t2 = Trace(t.tx, t.tx + 2 * t.noise)
    assert measure_snr(t) - measure_snr(t2) == pytest.approx(20 * math.log10(2), abs=1e-12)
    assert 20 * math.log10(2) == pytest.approx(6.0206, abs=1e-4)


def test_measure_snr_roundtrip_seven_db():
    assert measure_snr(_trace(64800, sigma_from_snr(7.0, C))) == pytest.approx(7.0, abs=0.1)


def test_measure_snr_rotation_invariant():
    t = _trace(2000, np.array([[0.1, 0.03], [0.03, 0.05]]))
    a = 0.37
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    assert measure_snr(Trace(t.tx @ rot.T, t.rx @ rot.T)) == pytest.approx(measure_snr(t))


def test_measure_snr_noiseless():
    assert measure_snr(Trace(C.points, C.points)) == math.inf


def test_noise_loading_three_db_doubles_noise():
    t = _trace(64800, sigma_from_snr(12.0, C))
    start = measure_snr(t)
    # exactly 10 log10(2) dB ~ 3 dB of loading doubles the noise energy
    loaded = rx_noise_load(t, start - 10 * math.log10(2), 1, seed=1)
    assert loaded.added_variance * 2 == pytest.approx(np.mean(np.sum(t.noise**2, axis=1)), rel=1e-9)
    extra = loaded[0].rx - t.rx
    assert np.mean(np.sum(extra**2, axis=1)) == pytest.approx(
        np.mean(np.sum(t.noise**2, axis=1)), rel=0.02)


def test_noise_loading_hits_target():
    t = _trace(64800, sigma_from_snr(14.0, C))
    for r in rx_noise_load(t, 7.5, 5, seed=2):
        assert measure_snr(r) == pytest.approx(7.5, abs=0.05)


def test_noise_loading_many_realizations_are_lazy_and_distinct():
    t = _trace(1000, sigma_from_snr(14.0, C))
    loads = rx_noise_load(t, 8.0, 50000, seed=3)
    assert len(loads) == 50000
    seeds = {loads.seed_sequence(r).spawn_key for r in range(0, 50000, 997)}
    assert len(seeds) == len(range(0, 50000, 997))
    assert not np.array_equal(loads[0].rx, loads[49999].rx)
    assert loads[-1].meta["realization"] == 49999


def test_noise_loading_deterministic():
    t = _trace(1000, sigma_from_snr(14.0, C))
    a = rx_noise_load(t, 8.0, 3, seed=4)
    b = rx_noise_load(t, 8.0, 3, seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.rx, y.rx)
    # realizations can be drawn in any order
    assert np.array_equal(a[2].rx, rx_noise_load(t, 8.0, 3, seed=4)[2].rx)


def test_noise_loading_rejects_higher_target():
    t = _trace(1000, sigma_from_snr(10.0, C))
    with pytest.raises(ValueError, match="below"):
        rx_noise_load(t, 11.0, 1, seed=0)


def test_noise_loading_composes():
    t = _trace(64800, sigma_from_snr(15.0, C))
    direct = rx_noise_load(t, 8.0, 1, seed=5)[0]
    staged = rx_noise_load(rx_noise_load(t, 11.0, 1, seed=6)[0], 8.0, 1, seed=7)[0]
    assert measure_snr(direct) == pytest.approx(measure_snr(staged), abs=0.05)
    np.testing.assert_allclose(estimate_covariance(direct).matrix,
                               estimate_covariance(staged).matrix, atol=0.006)
