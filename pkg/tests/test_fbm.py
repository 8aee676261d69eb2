import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from sddelab import fbm
from sddelab.fbm import Grid, covariance, covariance_matrix, sample


def test_covariance_examples():
    assert covariance(1.0, 1.0, 0.75) == 1.0
    for h in (0.55, 0.75, 0.95):
        assert covariance(0.7, 0.0, h) == 0.0
    assert covariance(2.0, 1.0, 0.75) == pytest.approx(math.sqrt(2), abs=1e-6)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.51, 0.99))
def test_covariance_symmetric(t, s, h):
    assert covariance(t, s, h) == covariance(s, t, h)


def test_hurst_range():
    with pytest.raises(ValueError):
        fbm.check_hurst(0.5)
    with pytest.raises(ValueError):
        sample(Grid.uniform(1, 4), 1.0, 2, 0)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        Grid(np.array([0.1, 0.5]))
    with pytest.raises(ValueError):
        Grid(np.array([0.0, np.nan]))
    assert Grid.uniform(1.0, 8).is_uniform
    assert not Grid(np.array([0.0, 0.1, 0.5])).is_uniform


def test_duplicate_times_fail_cholesky():
    with pytest.raises(np.linalg.LinAlgError, match="positive definite"):
        fbm.cholesky_factor(np.array([0.5, 0.5, 1.0]), 0.75)


@pytest.mark.parametrize("hurst", [0.6, 0.75, 0.9])
def test_cholesky_reconstruction_512(hurst):
    t = np.arange(1, 513) / 512.0
    L = fbm.cholesky_factor(t, hurst)
    S = covariance_matrix(t, hurst)
    assert np.abs(L @ L.T - S).max() <= 1e-10 * np.abs(S).max()


def test_variance_at_one():
    batch = sample(Grid.uniform(1.0, 15), 0.75, 10_000, seed=3)
    v = batch.paths[:, -1].var()
    assert abs(v - 1.0) <= 4 / math.sqrt(10_000) * math.sqrt(2)
    assert np.all(batch.paths[:, 0] == 0.0)


def test_single_time_marginal():
    t = 0.3
    batch = sample(Grid(np.array([0.0, t])), 0.7, 5000, seed=11)
    x = batch.paths[:, 1] / t ** 0.7
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_empirical_covariance_within_4se():
    grid = Grid.uniform(1.0, 15)
    batch = sample(grid, 0.75, 10_000, seed=1)
    P = batch.paths[:, 1:]
    t = grid.times[1:]
    R = covariance_matrix(t, 0.75)
    prod = P[:, :, None] * P[:, None, :]
    se = prod.std(axis=0, ddof=1) / math.sqrt(P.shape[0])
    assert np.all(np.abs(prod.mean(axis=0) - R) <= 4 * se)


def test_path_depends_on_seed_and_index_only():
    grid = Grid.uniform(1.0, 16)
    a = sample(grid, 0.75, 10, seed=42)
    b = sample(grid, 0.75, 100, seed=42)
    c = sample(grid, 0.75, 100, seed=42, workers=4)
    d = sample(grid, 0.75, 5, seed=42, first_index=5)
    np.testing.assert_array_equal(a.paths, b.paths[:10])
    np.testing.assert_array_equal(b.paths, c.paths)
    np.testing.assert_array_equal(d.paths, b.paths[5:10])
    e = sample(grid, 0.75, 10, seed=43)
    assert not np.array_equal(a.paths, e.paths)


def test_streams_are_independent():
    grid = Grid.uniform(1.0, 16)
    a = sample(grid, 0.75, 2000, seed=5, stream=0)
    b = sample(grid, 0.75, 2000, seed=5, stream=1)
    r = np.corrcoef(a.paths[:, -1], b.paths[:, -1])[0, 1]
    assert abs(r) < 4 / math.sqrt(2000)


@given(st.integers(0, 2 ** 63), st.integers(1, 30), st.integers(0, 50))
def test_reproducible_across_runs(seed, n, idx):
    grid = Grid.uniform(2.0, 8)
    x = sample(grid, 0.8, n, seed, first_index=idx).paths
    y = sample(grid, 0.8, n, seed, first_index=idx).paths
    assert x.tobytes() == y.tobytes()


def test_grid_cap():
    with pytest.raises(ValueError):
        sample(Grid.uniform(1.0, fbm.MAX_GRID + 1), 0.75, 1, 0)


def test_csv_dump_full_precision(tmp_path):
    batch = sample(Grid.uniform(1.0, 4), 0.75, 3, seed=0)
    f = tmp_path / "p.csv"
    batch.to_csv(f)
    raw = f.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["t_0", "t_1", "t_2", "t_3", "t_4"]
    back = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(back, batch.paths)


def test_hoelder_check():
    batch = sample(Grid.uniform(1.0, 16), 0.75, 10_000, seed=2)
    rep = fbm.increments_hoelder_check(batch, gamma=0.6)
    assert rep.passed
    assert len(rep.margins) == 17 * 16 // 2
    assert all(a < b for a, b in rep.points)  # degenerate pairs excluded
    with pytest.raises(ValueError):
        fbm.increments_hoelder_check(batch, gamma=0.75)
