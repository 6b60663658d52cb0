import numpy as np
import pytest

from diffrls import netgraph, signals, spectrum
from diffrls.diffusion import make_algorithm
from diffrls.spectrum import (SpectrumScenario, build_rect_basis, frequency_schedule, psd_true,
                              run_spectrum, sparse_spectrum, spectrum_measure)


def test_basis_small_example():
    b = build_rect_basis(2, 4)
    np.testing.assert_allclose(b.grid, [0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(b.q.argmax(axis=1), [0, 0, 1, 1])
    np.testing.assert_array_equal(b.index(b.grid), [0, 0, 1, 1])


def test_basis_two_per_bin_and_indicator_rows():
    b = build_rect_basis(50, 100)
    np.testing.assert_array_equal(b.q.sum(axis=0), 2.0)
    np.testing.assert_array_equal(b.q.sum(axis=1), 1.0)
    assert set(np.unique(b.q)) == {0.0, 1.0}


@pytest.mark.parametrize("m,nc", [(3, 7), (7, 7), (10, 33), (16, 100)])
def test_every_basis_hit(m, nc):
    b = build_rect_basis(m, nc, -2.0, 5.0)
    assert np.all(b.q.sum(axis=0) >= 1)
    np.testing.assert_array_equal(b.rows(b.grid), b.q)


def test_basis_errors():
    with pytest.raises(ValueError):
        build_rect_basis(5, 4)
    b = build_rect_basis(2, 4)
    with pytest.raises(ValueError):
        b.index(1.5)


def test_psd_true_examples():
    b = build_rect_basis(4, 8)
    w = np.zeros(4)
    assert psd_true(b, w, 0.3) == 0.0
    w[1] = 0.7
    assert psd_true(b, w, 0.4) == 0.7
    assert psd_true(b, w, 0.9) == 0.0


def test_sparse_spectrum():
    w = sparse_spectrum(50, 8, 0.7, np.random.default_rng(0))
    assert np.count_nonzero(w) == 8 and set(w[w > 0]) == {0.7}
    with pytest.raises(ValueError):
        sparse_spectrum(5, 6, 1.0, np.random.default_rng(0))


def test_measure_examples():
    b = build_rect_basis(4, 8)
    w = np.array([0.0, 0.7, 0.0, 0.0])
    sc = SpectrumScenario(w, [signals.Gaussian(0.0)] * 2, channel_gain=[1.0, 0.0],
                          rx_noise_power=[0.3, 0.3])
    rng = np.random.default_rng(0)
    reg, d = spectrum_measure(sc, b, 0, 1, 2, rng)
    np.testing.assert_array_equal(reg, [0, 1, 0, 0])
    assert d == pytest.approx(0.7)
    reg, d = spectrum_measure(sc, b, 0, 1, 6, rng)
    assert d == pytest.approx(0.0)
    noisy = SpectrumScenario(w, [signals.Gaussian(1.0)], channel_gain=0.0)
    reg, d = spectrum_measure(noisy, b, 0, 1, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(reg, 0.0)
    assert d == signals.Gaussian(1.0).sample(np.random.default_rng(5))


def test_negative_power_rejected():
    with pytest.raises(ValueError):
        SpectrumScenario(np.array([0.1, -0.1]), [signals.Gaussian(1.0)])


def test_round_robin_covariance_is_diagonal():
    b = build_rect_basis(50, 100)
    iota = frequency_schedule("round-robin", 1000, 3, b.n_freq)
    for k in range(3):
        q = b.q[iota[:, k]]
        cov = q.T @ q / q.shape[0]
        np.testing.assert_allclose(cov, b.q.T @ b.q / b.n_freq, atol=1e-12)
        assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0


def test_schedule_errors():
    with pytest.raises(ValueError):
        frequency_schedule("zigzag", 10, 2, 4)
    with pytest.raises(ValueError):
        frequency_schedule("random", 10, 2, 4)
    s = frequency_schedule("random", 10, 2, 4, np.random.default_rng(0))
    assert s.shape == (10, 2) and s.max() < 4


def _network():
    topo, _ = netgraph.random_geometric(6, 0.6, signals.scenario_rng(3))
    return netgraph.build_metropolis(topo)


def test_noiseless_drls_recovers_support():
    b = build_rect_basis(10, 20)
    w = sparse_spectrum(10, 3, 0.7, np.random.default_rng(1))
    sc = SpectrumScenario(w, [signals.Gaussian(0.0)] * 6)
    res = run_spectrum(sc, b, make_algorithm("drls", lam=0.98, delta=1e-6), _network(), 400, 2, 9)
    np.testing.assert_allclose(res.w_final, np.broadcast_to(w, res.w_final.shape), atol=1e-4)
    est = res.psd_estimates()
    np.testing.assert_array_equal(est > 0.35, np.broadcast_to(res.psd_true() > 0, est.shape))


def test_psd_estimate_linear_in_weights():
    b = build_rect_basis(10, 20)
    w = sparse_spectrum(10, 3, 0.7, np.random.default_rng(1))
    sc = SpectrumScenario(w, [signals.Gaussian(0.1)] * 6)
    res = run_spectrum(sc, b, make_algorithm("drls"), _network(), 50, 3, 9)
    np.testing.assert_array_equal(res.psd_estimates(), res.w_final.mean(axis=0) @ b.q.T)
    np.testing.assert_array_equal(res.psd_true(), b.q @ w)


def test_random_schedule_is_seeded():
    b = build_rect_basis(10, 20)
    sc = SpectrumScenario(np.full(10, 0.1), [signals.Gaussian(0.1)] * 2)
    t1 = spectrum.SpectrumTrialData(sc, b, 4, 0, 30, "random")
    t2 = spectrum.SpectrumTrialData(sc, b, 4, 0, 30, "random")
    t3 = spectrum.SpectrumTrialData(sc, b, 4, 1, 30, "random")
    np.testing.assert_array_equal(t1.iota, t2.iota)
    assert not np.array_equal(t1.iota, t3.iota)
