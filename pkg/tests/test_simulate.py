import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from dswhittle.grid import GridSpec, mask_autocorrelation
from dswhittle.io import write_grid
from dswhittle.models import Exponential, Matern, WhiteNoise
from dswhittle.simulate import (
    EmbeddingError,
    bernoulli_mask,
    circle_mask,
    iter_fields,
    mask_from_file,
    plan_embedding,
    rng_stream,
    simulate_field,
)


def test_white_noise_sample_variance():
    grid = GridSpec((64, 64))
    x = simulate_field(WhiteNoise(2), (1.5,), grid, seed=0)
    assert abs(x.var() - 2.25) < 3 * np.sqrt(2 / grid.size) * 2.25


def test_empirical_covariance_matches_model():
    m = Exponential(2)
    theta = (1.0, 3.0)
    grid = GridSpec((16, 16))
    fields = np.stack(list(iter_fields(m, theta, grid, seed=1, count=500)))
    for lag in (0, 1, 2):
        prod = (fields[:, : 16 - lag, :] * fields[:, lag:, :]).reshape(500, -1).mean(axis=1)
        se = prod.std(ddof=1) / np.sqrt(500)
        assert abs(prod.mean() - np.exp(-lag / 3.0)) < 5 * se


def test_marginal_normality():
    grid = GridSpec((6, 6))
    vals = np.array([f[2, 3] for f in iter_fields(Exponential(2), (1.0, 2.0), grid, seed=2, count=12000)])
    k = stats.kurtosis(vals, fisher=False)
    assert abs(k - 3) < 5 * np.sqrt(24 / len(vals))
    assert abs(vals.mean()) < 5 / np.sqrt(len(vals))


def test_simulation_is_deterministic_and_replicate_indexed():
    m = Matern(2)
    grid = GridSpec((12, 10))
    a = simulate_field(m, (1, 0.5, 3), grid, seed=7, replicate=3)
    b = simulate_field(m, (1, 0.5, 3), grid, seed=7, replicate=3)
    assert_array_equal(a, b)
    assert not np.array_equal(a, simulate_field(m, (1, 0.5, 3), grid, seed=7, replicate=2))
    batch = list(iter_fields(m, (1, 0.5, 3), grid, seed=7, count=3, start=2))
    for r, x in zip(range(2, 5), batch):
        assert_array_equal(x, simulate_field(m, (1, 0.5, 3), grid, seed=7, replicate=r))


def test_rng_streams_are_independent_of_order():
    a = rng_stream((3, 64), 5).random(4)
    rng_stream((3, 64), 4).random(100)
    assert_array_equal(a, rng_stream((3, 64), 5).random(4))
    assert not np.array_equal(a, rng_stream((3, 32), 5).random(4))


def test_no_clamping_for_short_range_exponential():
    for n in (8, 16, 33):
        plan = plan_embedding(Exponential(2), (1.0, n / 4), GridSpec((n, n)))
        assert plan.clamp_report == {}


def test_embedding_failure_and_approximation(caplog):
    m = Matern(2)
    theta = (1.0, 5.0, 16.0)
    grid = GridSpec((8, 8))
    with pytest.raises(EmbeddingError):
        simulate_field(m, theta, grid, seed=0)
    with caplog.at_level(logging.WARNING):
        x = simulate_field(m, theta, grid, seed=0, allow_approx=True)
    assert np.all(np.isfinite(x))
    assert "clamping" in caplog.text


def test_circle_mask_examples():
    grid = GridSpec((10, 7))
    assert np.all(circle_mask(grid, np.sqrt(2) * 10).values == 1)
    single = circle_mask(GridSpec((9, 9)), 1.0)
    assert single.values.sum() == 1 and single.values[4, 4] == 1
    disk = circle_mask(GridSpec((25, 25)), 24)
    count = sum((i - 12) ** 2 + (j - 12) ** 2 <= 144 for i in range(25) for j in range(25))
    assert disk.values.sum() == count


def test_bernoulli_mask():
    grid = GridSpec((64, 64))
    assert np.all(bernoulli_mask(grid, 1.0, 0).values == 1)
    mod = bernoulli_mask(grid, 0.3, 5)
    assert abs(mod.values.mean() - 0.3) < 3 * np.sqrt(0.3 * 0.7 / grid.size)
    assert_array_equal(mod.values, bernoulli_mask(grid, 0.3, 5).values)
    cg = mask_autocorrelation(mod)
    # away from lag zero, c_g is p times the overlap fraction of the full grid
    ratio = [cg.at((u, v)) / ((1 - u / 64) * (1 - v / 64)) for u in range(10, 20) for v in range(10, 20)]
    assert np.mean(ratio) == pytest.approx(mod.values.mean(), abs=0.015)
    assert cg.at((0, 0)) == 1.0
    with pytest.raises(ValueError):
        bernoulli_mask(grid, 0.0, 1)


def test_mask_from_file(tmp_path):
    g = np.zeros((5, 4))
    g[1:4, 1:3] = 1
    g[0, 0] = np.nan
    write_grid(tmp_path / "m.bin", g)
    mod = mask_from_file(tmp_path / "m.bin")
    assert mod.values[0, 0] == 0
    assert mod.sum_g == 6
    with pytest.raises(ValueError):
        mask_from_file(tmp_path / "m.bin", GridSpec((4, 5)))
