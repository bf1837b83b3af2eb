import numpy as np
import pytest
from numpy.testing import assert_allclose

from dswhittle.grid import GridSpec, Modulation, hanning_modulation
from dswhittle.inference import (
    FitError,
    FitOptions,
    PeriodogramCovariance,
    SingularHessianError,
    attach_standard_errors,
    confidence_intervals,
    expected_hessian,
    fit,
    initial_guess,
    sandwich_variance,
    score_covariance_mc,
)
from dswhittle.likelihood import ObjectiveSpec, debiased_nll
from dswhittle.models import Exponential, Matern, SeparableExponential, WhiteNoise, parameters_from_mapping
from dswhittle.simulate import simulate_field
from dswhittle.spectral import expected_periodogram, expected_periodogram_gradient, periodogram

from oracles import periodogram_cross_moments


def _mask(rng, dims, p=0.8):
    g = (rng.random(dims) < p).astype(float)
    g.flat[0] = 1.0
    return Modulation.from_array(g)


def _oracle_score_cov(model, theta, mod, free=None):
    """Double sum over all frequency pairs with covariances from site-domain quadratic forms."""
    t1, t2 = periodogram_cross_moments(model, theta, mod.values)
    C = np.abs(t1) ** 2 + np.abs(t2) ** 2
    Ibar = expected_periodogram(model, theta, mod)
    dI = expected_periodogram_gradient(model, theta, mod, free)
    a = (dI / Ibar**2).reshape(dI.shape[0], -1)
    return a @ C @ a.T / Ibar.size**2


# ---------------------------------------------------------------- fitting

def test_white_noise_fit_matches_closed_form():
    rng = np.random.default_rng(0)
    mod = Modulation.full(GridSpec((32, 32)))
    x = rng.normal(scale=1.7, size=(32, 32))
    target = np.sqrt((2 * np.pi) ** 2 * periodogram(x, mod).mean())
    p0 = parameters_from_mapping(WhiteNoise(2), {"sigma": 1.0})
    for log_transform in (True, False):
        res = fit(x, ObjectiveSpec("debiased", WhiteNoise(2), mod), p0, FitOptions(log_transform=log_transform))
        assert res.converged
        assert res.theta["sigma"] == pytest.approx(target, rel=1e-4)


def test_gradient_descent_agrees_with_nelder_mead():
    rng = np.random.default_rng(1)
    m = Exponential(2)
    mod = _mask(rng, (24, 24))
    x = simulate_field(m, (1.0, 3.0), mod.grid, seed=2)
    p0 = parameters_from_mapping(m, {"sigma": 1.2, "rho": 2.0})
    spec = ObjectiveSpec("debiased", m, mod)
    nm = fit(x, spec, p0)
    gd = fit(x, spec, p0, FitOptions(optimizer="gradient_descent", max_iters=5000, rel_tol=1e-12))
    assert_allclose(gd.theta_hat.values, nm.theta_hat.values, rtol=1e-3)


def test_fit_from_truth_does_not_increase_objective():
    rng = np.random.default_rng(3)
    m = Matern(2)
    mod = _mask(rng, (20, 20))
    theta0 = (1.0, 0.5, 4.0)
    x = simulate_field(m, theta0, mod.grid, seed=4)
    p0 = parameters_from_mapping(m, {"sigma": 1.0, "nu": {"value": 0.5, "fixed": True}, "rho": 4.0})
    res = fit(x, ObjectiveSpec("debiased", m, mod), p0)
    assert res.nll <= debiased_nll(periodogram(x, mod), m, theta0, mod)
    assert res.theta["nu"] == 0.5


def test_fit_without_free_parameters():
    m = Exponential(2)
    mod = Modulation.full(GridSpec((4, 4)))
    p0 = parameters_from_mapping(m, {"sigma": {"value": 1, "fixed": True}, "rho": {"value": 1, "fixed": True}})
    with pytest.raises(FitError):
        fit(np.zeros((4, 4)), ObjectiveSpec("debiased", m, mod), p0)


def test_fit_is_deterministic():
    m = Exponential(2)
    mod = Modulation.full(GridSpec((16, 16)))
    x = simulate_field(m, (1.0, 3.0), mod.grid, seed=5)
    p0 = parameters_from_mapping(m, {"sigma": 1.0, "rho": 2.0})
    a = fit(x, ObjectiveSpec("debiased", m, mod), p0).to_json()
    b = fit(x, ObjectiveSpec("debiased", m, mod), p0).to_json()
    assert a == b


def test_fit_result_json_and_identifiability_warning():
    m = SeparableExponential()
    g = np.zeros((16, 8))
    g[:, 3] = 1.0
    mod = Modulation.from_array(g)
    x = simulate_field(m, (1.0, 2.0, 3.0), mod.grid, seed=6)
    p0 = parameters_from_mapping(m, {"sigma": 1.0, "rho1": 2.0, "rho2": 3.0})
    res = fit(x, ObjectiveSpec("debiased", m, mod), p0)
    out = res.to_json()
    assert set(out) >= {"theta", "nll", "converged", "iterations", "cov", "ci", "warnings", "rate_rk"}
    assert any("identifiable" in w for w in res.warnings)


def test_initial_guess_is_sensible():
    m = Exponential(2)
    mod = Modulation.full(GridSpec((48, 48)))
    x = simulate_field(m, (2.0, 4.0), mod.grid, seed=7)
    guess = initial_guess(x, mod, m)
    assert set(guess) == {"sigma", "rho"}
    assert 1.0 < guess["sigma"] < 3.0
    assert 1.0 <= guess["rho"] <= 12.0


# ---------------------------------------------------------------- hessian

def test_white_noise_hessian():
    mod = _mask(np.random.default_rng(8), (6, 6))
    H = expected_hessian(WhiteNoise(2), (0.8,), mod)
    assert H[0, 0] == pytest.approx((2 / 0.8) ** 2, rel=1e-12)


def test_hessian_is_psd_and_matches_population_curvature():
    rng = np.random.default_rng(9)
    m = Matern(2)
    for _ in range(5):
        mod = _mask(rng, (rng.integers(4, 10), rng.integers(4, 10)))
        theta0 = np.array([rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(1, 5)])
        H = expected_hessian(m, theta0, mod)
        assert np.linalg.eigvalsh(H).min() >= -1e-10
        I0 = expected_periodogram(m, theta0, mod)
        pop = lambda t: debiased_nll(I0, m, t, mod)
        h = 1e-4 * theta0
        Hfd = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                ei, ej = np.eye(3)[i] * h[i], np.eye(3)[j] * h[j]
                Hfd[i, j] = (pop(theta0 + ei + ej) - pop(theta0 + ei - ej) - pop(theta0 - ei + ej) + pop(theta0 - ei - ej)) / (4 * h[i] * h[j])
        assert_allclose(H, Hfd, rtol=1e-4, atol=1e-4 * np.abs(H).max())


# ---------------------------------------------------------------- score covariance

@pytest.mark.parametrize("taper", [False, True])
def test_exhaustive_score_covariance_equals_double_sum(taper):
    rng = np.random.default_rng(10)
    g = (rng.random((4, 4)) < 0.8).astype(float)
    g[1, 1] = 1.0
    mod = Modulation.from_array(g)
    if taper:
        mod = hanning_modulation(Modulation.full(mod.grid)) * g
    m = Matern(2)
    theta = (1.0, 0.8, 2.0)
    sc = score_covariance_mc(m, theta, mod, M=10**6)
    assert sc.exhaustive
    assert_allclose(sc.matrix, _oracle_score_cov(m, theta, mod), rtol=1e-12)


def test_periodogram_covariance_pairs_match_site_oracle():
    rng = np.random.default_rng(11)
    mod = _mask(rng, (5, 4))
    m = Exponential(2)
    theta = (1.0, 1.5)
    t1, t2 = periodogram_cross_moments(m, theta, mod.values)
    pc = PeriodogramCovariance(m, theta, mod)
    js = list(np.ndindex(5, 4))
    for a in range(0, 20, 3):
        for b in range(0, 20, 4):
            c1, c2 = pc.cross(js[a], js[b])
            assert c1 == pytest.approx(t1[a, b], abs=1e-13)
            assert c2 == pytest.approx(t2[a, b], abs=1e-13)
    band = pc.offset_band((1, 0))
    for k, j in enumerate(js):
        j2 = ((j[0] + 1) % 5, j[1])
        b = js.index(j2)
        assert band[j] == pytest.approx(abs(t1[k, b]) ** 2 + abs(t2[k, b]) ** 2, abs=1e-13)


def test_white_noise_periodogram_covariances():
    mod = Modulation.full(GridSpec((6, 5)))
    pc = PeriodogramCovariance(WhiteNoise(2), (1.3,), mod)
    Ibar = 1.3**2 / (2 * np.pi) ** 2
    assert pc.cov((1, 2), (2, 1)) == pytest.approx(0.0, abs=1e-15)
    assert pc.cov((1, 2), (1, 3)) == pytest.approx(0.0, abs=1e-15)
    assert Ibar**2 + pc.pseudo_diagonal()[1, 2] == pytest.approx(Ibar**2, rel=1e-12)
    # at a self-conjugate frequency the periodogram is a scaled chi-square(1)
    assert Ibar**2 + pc.pseudo_diagonal()[3, 0] == pytest.approx(2 * Ibar**2, rel=1e-12)


def test_monte_carlo_estimate_is_close_to_exhaustive():
    rng = np.random.default_rng(12)
    mod = _mask(rng, (8, 8))
    m = Exponential(2)
    theta = (1.0, 2.0)
    exact = score_covariance_mc(m, theta, mod, M=10**6)
    assert exact.exhaustive
    est = np.array([score_covariance_mc(m, theta, mod, M=400, seed=s).matrix for s in range(20)])
    assert_allclose(est.mean(axis=0), exact.matrix, rtol=0.05)


def test_score_covariance_rejects_bad_m():
    with pytest.raises(ValueError):
        score_covariance_mc(Exponential(2), (1, 2), Modulation.full(GridSpec((4, 4))), M=0)


# ---------------------------------------------------------------- sandwich

def test_sandwich_examples():
    V = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert_allclose(sandwich_variance(np.eye(2), V), V)
    assert sandwich_variance(np.array([[4.0]]), np.array([[3.0]]))[0, 0] == pytest.approx(3 / 16)
    with pytest.raises(SingularHessianError):
        sandwich_variance(np.array([[1.0, 1.0], [1.0, 1.0]]), V)


def test_sandwich_symmetric_nonnegative_diagonal():
    rng = np.random.default_rng(13)
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3))
    S = sandwich_variance(A @ A.T + np.eye(3), B @ B.T)
    assert_allclose(S, S.T, atol=0)
    assert np.all(np.diag(S) >= 0)


def test_confidence_intervals():
    p = parameters_from_mapping(Exponential(2), {"sigma": {"value": 1, "fixed": True}, "rho": 3.0})
    ci = confidence_intervals(p, np.array([[0.25]]), level=0.95)
    assert_allclose(ci["rho"], [3 - 1.959963984540054 * 0.5, 3 + 1.959963984540054 * 0.5], rtol=1e-12)


def test_variance_shrinks_like_inverse_sample_size():
    m = Matern(2)
    theta = (1.0, 0.5, 3.0)
    free = [False, False, True]
    sizes, var = [], []
    for n in (16, 32, 64):
        mod = Modulation.full(GridSpec((n, n)))
        H = expected_hessian(m, theta, mod, free)
        V = score_covariance_mc(m, theta, mod, M=2000, seed=0, free=free).matrix
        sizes.append(n * n)
        var.append(sandwich_variance(H, V)[0, 0])
    slope = np.polyfit(np.log(sizes), np.log(var), 1)[0]
    assert -1.3 < slope < -0.7


def test_attach_standard_errors():
    m = Exponential(2)
    mod = Modulation.full(GridSpec((16, 16)))
    x = simulate_field(m, (1.0, 3.0), mod.grid, seed=14)
    p0 = parameters_from_mapping(m, {"sigma": {"value": 1.0, "fixed": True}, "rho": 2.0})
    spec = ObjectiveSpec("debiased", m, mod)
    res = attach_standard_errors(fit(x, spec, p0), spec, M=200, seed=1)
    lo, hi = res.ci["rho"]
    assert lo < res.theta["rho"] < hi
    assert res.standard_errors()["rho"] > 0
    with pytest.raises(ValueError):
        attach_standard_errors(res, ObjectiveSpec("standard", m, mod))
