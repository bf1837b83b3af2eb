import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from dswhittle.grid import Modulation, hanning_modulation
from dswhittle.likelihood import (
    Objective,
    ObjectiveSpec,
    debiased_nll,
    score,
    standard_nll,
    whittle_sum,
)
from dswhittle.models import CovarianceModel, Exponential, Matern, NoSpectralDensityError, WhiteNoise
from dswhittle.simulate import simulate_field
from dswhittle.spectral import NonPositiveSpectrumError, expected_periodogram, periodogram


class NotPositiveDefinite(CovarianceModel):
    """1-D covariance with c(0)=1, c(+-1)=a, zero beyond; not valid for a > 1/2."""

    name = "bad"
    param_names = ("a",)
    default_lower = (0.0,)
    default_upper = (1.0,)

    def cov(self, lags, theta):
        u = np.abs(np.asarray(lags[0], dtype=float))
        return np.where(u == 0, 1.0, np.where(u == 1, theta[0], 0.0))


def _mask(rng, dims, p=0.7):
    g = (rng.random(dims) < p).astype(float)
    g.flat[0] = 1.0
    return Modulation.from_array(g)


def test_objective_at_its_own_expectation():
    rng = np.random.default_rng(0)
    mod = _mask(rng, (8, 7))
    m = Matern(2)
    theta = (1.0, 0.8, 3.0)
    Ibar = expected_periodogram(m, theta, mod)
    assert debiased_nll(Ibar, m, theta, mod) == pytest.approx(np.mean(np.log(Ibar) + 1), rel=1e-14)
    assert_allclose(score(Ibar, m, theta, mod), 0.0, atol=1e-15)


def test_white_noise_closed_form_minimiser():
    rng = np.random.default_rng(1)
    mod = Modulation.full(_mask(rng, (16, 16)).grid)
    x = rng.normal(scale=1.3, size=(16, 16))
    I = periodogram(x, mod)
    res = optimize.minimize_scalar(lambda s: debiased_nll(I, WhiteNoise(2), (s,), mod), bounds=(0.1, 5), method="bounded",
                                   options={"xatol": 1e-10})
    assert res.x**2 == pytest.approx((2 * np.pi) ** 2 * I.mean(), rel=1e-6)


def test_population_objective_has_minimum_at_truth():
    rng = np.random.default_rng(2)
    m = Matern(2)
    mod = _mask(rng, (9, 8))
    theta0 = np.array([1.0, 1.0, 3.0])
    I0 = expected_periodogram(m, theta0, mod)
    base = debiased_nll(I0, m, theta0, mod)
    for _ in range(20):
        gamma = theta0 * np.exp(rng.normal(scale=0.5, size=3))
        Ig = expected_periodogram(m, gamma, mod)
        x = I0 / Ig
        gap = debiased_nll(I0, m, gamma, mod) - base
        assert gap == pytest.approx(np.mean(x - np.log(x) - 1), rel=1e-9, abs=1e-15)
        assert gap >= 0


def test_standard_equals_debiased_for_white_noise_on_full_grid():
    rng = np.random.default_rng(3)
    mod = Modulation.full(_mask(rng, (10, 6)).grid)
    I = periodogram(rng.normal(size=(10, 6)), mod)
    assert standard_nll(I, WhiteNoise(2), (0.9,)) == pytest.approx(debiased_nll(I, WhiteNoise(2), (0.9,), mod), rel=1e-14)


def test_whittle_sum_is_order_free_and_deterministic():
    rng = np.random.default_rng(4)
    I = rng.exponential(size=(12, 10))
    S = rng.uniform(0.5, 2, size=(12, 10))
    perm = rng.permutation(I.size)
    a = whittle_sum(I, S)
    assert a == whittle_sum(I, S)
    assert whittle_sum(I.ravel()[perm], S.ravel()[perm]) == pytest.approx(a, rel=1e-14)


def test_score_matches_finite_differences():
    rng = np.random.default_rng(5)
    for m, theta in [(Matern(2), np.array([1.1, 0.7, 4.0])), (Exponential(2), np.array([0.8, 2.5]))]:
        for _ in range(5):
            mod = _mask(rng, (rng.integers(4, 12), rng.integers(4, 12)))
            I = periodogram(rng.normal(size=mod.grid.dims), mod)
            s = score(I, m, theta, mod)
            for j in range(len(theta)):
                h = 1e-5 * theta[j]
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                fd = (debiased_nll(I, m, up, mod) - debiased_nll(I, m, dn, mod)) / (2 * h)
                assert s[j] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_nonpositive_expected_periodogram_is_reported():
    mod = Modulation.from_array(np.ones(8))
    I = np.ones(8)
    with pytest.raises(NonPositiveSpectrumError, match="frequency"):
        debiased_nll(I, NotPositiveDefinite(1), (0.9,), mod)


def test_standard_variant_needs_a_spectral_density():
    mod = Modulation.from_array(np.ones(8))
    with pytest.raises(NoSpectralDensityError, match="closed-form density"):
        Objective(np.zeros(8), ObjectiveSpec("standard", NotPositiveDefinite(1), mod))


def test_unknown_variant():
    with pytest.raises(ValueError):
        ObjectiveSpec("exact", Matern(2), Modulation.from_array(np.ones((2, 2))))


def test_variants_use_expected_inputs():
    rng = np.random.default_rng(6)
    m = Exponential(2)
    mod = _mask(rng, (12, 12))
    x = simulate_field(m, (1.0, 3.0), mod.grid, seed=1)
    theta = (1.0, 2.0)
    tapered = hanning_modulation(mod)
    cases = {
        "debiased": debiased_nll(periodogram(x, mod), m, theta, mod),
        "debiased_tapered": debiased_nll(periodogram(x, tapered), m, theta, tapered),
        "standard": standard_nll(periodogram(x, mod), m, theta),
        "fuentes": standard_nll(periodogram(x, mod), m, theta),
        "standard_tapered": standard_nll(periodogram(x, tapered), m, theta),
    }
    for variant, expected in cases.items():
        obj = Objective(x, ObjectiveSpec(variant, m, mod))
        assert obj(theta) == pytest.approx(expected, rel=1e-14), variant


def test_excluding_zero_frequency():
    rng = np.random.default_rng(7)
    m = Exponential(2)
    mod = _mask(rng, (8, 8))
    x = rng.normal(size=(8, 8))
    obj = Objective(x, ObjectiveSpec("debiased", m, mod, exclude_zero_frequency=True))
    Ibar = expected_periodogram(m, (1.0, 2.0), mod)
    I = periodogram(x, mod)
    terms = np.log(Ibar) + I / Ibar
    assert obj((1.0, 2.0)) == pytest.approx((terms.sum() - terms[0, 0]) / 64, rel=1e-13)


def test_objective_score_for_standard_variant_is_numerical_gradient():
    rng = np.random.default_rng(8)
    m = Exponential(2)
    mod = Modulation.full(_mask(rng, (8, 8)).grid)
    obj = Objective(rng.normal(size=(8, 8)), ObjectiveSpec("standard", m, mod))
    theta = np.array([1.0, 2.0])
    h = 1e-4
    fd = (obj(theta + [0, h]) - obj(theta - [0, h])) / (2 * h)
    assert obj.score(theta)[1] == pytest.approx(fd, rel=1e-5)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Objective(np.zeros((4, 4)), ObjectiveSpec("debiased", Matern(1), Modulation.from_array(np.ones((4, 4)))))
