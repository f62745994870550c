import numpy as np
import pytest
from conftest import observed, scalar_benchmark, static_model, three_state

from smoothkit import (
    ModelSpec,
    ObservationPath,
    TimeGrid,
    bf_smooth,
    confidence_band,
    estimate_functional,
    rts_smooth,
    sample_conditional_paths,
)
from smoothkit.sampler import CHUNK, functional_values


def batch_for(spec, n, M, seed=0, obs_seed=7, **kwargs):
    grid, obs = observed(spec, n, seed=obs_seed)
    result = bf_smooth(spec, grid, obs)
    return result, sample_conditional_paths(spec, grid, result, M, seed, **kwargs)


@pytest.fixture(scope="module")
def medium_batch():
    return batch_for(scalar_benchmark(), 100, 5000, seed=3)


class TestSampling:
    def test_degenerate_error_process(self):
        spec = ModelSpec.constant(-0.4, 0.0, 1.0, 0.5, [0.8], [[0.0]])
        result, batch = batch_for(spec, 50, 20)
        np.testing.assert_array_equal(batch.paths, np.broadcast_to(result.means, batch.paths.shape))

    def test_no_observations_start_from_prior(self):
        cov = np.array([[1.0, 0.4], [0.4, 0.5]])
        spec = ModelSpec.constant([[-0.5, 0.2], [0.0, -1.0]], np.eye(2), np.zeros((1, 2)), [[1.0]], [0.0, 1.0], cov)
        _, batch = batch_for(spec, 10, 100_000)
        np.testing.assert_allclose(np.cov(batch.paths[:, 0].T), cov, rtol=0.05, atol=0.05 * cov.max())

    def test_shapes_and_metadata(self, medium_batch):
        result, batch = medium_batch
        assert batch.paths.shape == (5000, 101, 1)
        assert batch.M == 5000
        assert batch.seed == 3
        assert batch.scheme == "euler"

    def test_mean_within_four_stderr(self, medium_batch):
        result, batch = medium_batch
        x = batch.paths[:, :, 0]
        stderr = x.std(axis=0, ddof=1) / np.sqrt(batch.M)
        assert np.all(np.abs(x.mean(axis=0) - result.means[:, 0]) <= 4 * stderr)

    def test_reproducible(self):
        spec = three_state()
        grid, obs = observed(spec, 30)
        result = bf_smooth(spec, grid, obs)
        one = sample_conditional_paths(spec, grid, result, 50, seed=8)
        two = sample_conditional_paths(spec, grid, result, 50, seed=8)
        assert one.paths.tobytes() == two.paths.tobytes()
        assert not np.array_equal(one.paths, sample_conditional_paths(spec, grid, result, 50, seed=9).paths)

    def test_prefix_stability(self):
        """Path m depends only on (seed, m), not on the batch size."""
        spec = scalar_benchmark()
        grid, obs = observed(spec, 20)
        result = bf_smooth(spec, grid, obs)
        small = sample_conditional_paths(spec, grid, result, 10, seed=4)
        large = sample_conditional_paths(spec, grid, result, 25, seed=4)
        np.testing.assert_array_equal(small.paths, large.paths[:10])

    def test_thread_count_does_not_change_output(self, monkeypatch):
        spec = scalar_benchmark()
        grid, obs = observed(spec, 5)
        result = bf_smooth(spec, grid, obs)
        M = 2 * CHUNK + 17
        serial = sample_conditional_paths(spec, grid, result, M, seed=1, threads=1)
        threaded = sample_conditional_paths(spec, grid, result, M, seed=1, threads=3)
        monkeypatch.setenv("SMOOTHKIT_THREADS", "2")
        from_env = sample_conditional_paths(spec, grid, result, M, seed=1)
        assert serial.paths.tobytes() == threaded.paths.tobytes() == from_env.paths.tobytes()

    def test_exact_scheme_matches_kernel_variance(self):
        spec = three_state()
        result, batch = batch_for(spec, 40, 40_000, scheme="exact")
        dev = batch.paths - result.means
        cov = np.einsum("mia,mib->iab", dev, dev) / batch.M
        rel = np.abs(cov - result.marginal_cov).max() / np.abs(result.marginal_cov).max()
        assert rel <= 0.05

    def test_needs_field(self):
        spec = scalar_benchmark()
        grid, obs = observed(spec, 20)
        with pytest.raises(ValueError):
            sample_conditional_paths(spec, grid, rts_smooth(spec, grid, obs), 10)

    def test_rejects_bad_arguments(self):
        spec = scalar_benchmark()
        grid, obs = observed(spec, 20)
        result = bf_smooth(spec, grid, obs)
        with pytest.raises(ValueError):
            sample_conditional_paths(spec, grid, result, 0)
        with pytest.raises(ValueError):
            sample_conditional_paths(spec, grid, result, 10, scheme="milstein")
        with pytest.raises(ValueError):
            sample_conditional_paths(spec, TimeGrid(1.0, 10), result, 10)


class TestFunctionals:
    def test_constant_paths_max(self):
        spec = ModelSpec.constant(0.0, 0.0, 1.0, 1.0, [2.5], [[0.0]])
        _, batch = batch_for(spec, 10, 30)
        est = estimate_functional(batch, "max")
        assert est.value == 2.5
        assert est.stderr == 0.0
        assert est.M == 30

    def test_exceedance_of_minus_infinity(self, medium_batch):
        est = estimate_functional(medium_batch[1], "exceedance", threshold=-np.inf)
        assert (est.value, est.stderr) == (1.0, 0.0)

    def test_exceedance_needs_threshold(self, medium_batch):
        with pytest.raises(ValueError):
            estimate_functional(medium_batch[1], "exceedance")

    def test_static_model_max_is_posterior_mean(self):
        spec = static_model()
        grid = TimeGrid(1.0, 10)
        result = bf_smooth(spec, grid, ObservationPath(grid, np.full((10, 1), 0.1)))
        batch = sample_conditional_paths(spec, grid, result, 100_000, seed=5)
        est = estimate_functional(batch, "max")
        assert abs(est.value - 0.5) <= 3 * est.stderr
        assert abs(est.stderr - np.sqrt(0.5 / 100_000)) <= 1e-4

    def test_integral_of_constant_paths(self):
        spec = ModelSpec.constant(0.0, 0.0, 1.0, 1.0, [3.0], [[0.0]])
        grid = TimeGrid(2.0, 8)
        result = bf_smooth(spec, grid, ObservationPath(grid, np.zeros((8, 1))))
        batch = sample_conditional_paths(spec, grid, result, 5)
        np.testing.assert_allclose(functional_values(batch, "integral"), 6.0, rtol=1e-14)

    def test_stderr_definition(self, medium_batch):
        batch = medium_batch[1]
        vals = functional_values(batch, "integral")
        est = estimate_functional(batch, "integral")
        assert est.value == vals.mean()
        assert est.stderr == pytest.approx(vals.std(ddof=1) / np.sqrt(batch.M), rel=1e-12)

    def test_table(self, medium_batch):
        batch = medium_batch[1]
        values = np.arange(batch.M, dtype=float)
        est = estimate_functional(batch, "table", values=values)
        assert est.value == values.mean()
        with pytest.raises(ValueError):
            estimate_functional(batch, "table", values=values[:-1])

    def test_unknown_functional_and_coordinate(self, medium_batch):
        with pytest.raises(ValueError):
            estimate_functional(medium_batch[1], "median")
        with pytest.raises(ValueError):
            estimate_functional(medium_batch[1], "max", coord=1)

    def test_to_dict(self, medium_batch):
        out = estimate_functional(medium_batch[1], "max").to_dict()
        assert sorted(out) == ["M", "functional", "stderr", "value"]


class TestBands:
    def test_zero_level_pointwise_is_median(self, medium_batch):
        batch = medium_batch[1]
        band = confidence_band(batch, 0.0, "pointwise")
        median = np.median(batch.paths, axis=0)
        np.testing.assert_allclose(band.lower, median, atol=1e-14)
        np.testing.assert_allclose(band.upper, median, atol=1e-14)

    def test_recount_on_same_batch(self, medium_batch):
        batch = medium_batch[1]
        band = confidence_band(batch, 0.9)
        assert band.contains(batch.paths).mean() >= 0.9
        assert np.all(band.lower <= band.upper)

    def test_pointwise_band_brackets_each_node(self, medium_batch):
        batch = medium_batch[1]
        band = confidence_band(batch, 0.8, "pointwise")
        inside = (batch.paths >= band.lower) & (batch.paths <= band.upper)
        np.testing.assert_allclose(inside.mean(axis=0), 0.8, atol=0.02)

    def test_degenerate_nodes_use_absolute_deviation(self):
        spec = ModelSpec.constant(0.0, 1.0, 1.0, 1.0, [0.0], [[0.0]])
        _, batch = batch_for(spec, 20, 500)
        band = confidence_band(batch, 0.9)
        assert np.all(batch.paths[:, 0] == batch.means[0])
        assert np.all(np.isfinite(band.lower)) and np.all(np.isfinite(band.upper))
        assert band.upper[0, 0] - batch.means[0, 0] == pytest.approx(batch.means[0, 0] - band.lower[0, 0])
        assert band.contains(batch.paths).mean() >= 0.9

    def test_errors(self, medium_batch):
        batch = medium_batch[1]
        with pytest.raises(ValueError):
            confidence_band(batch, 1.0)
        with pytest.raises(ValueError):
            confidence_band(batch, 0.9, "bonferroni")
        spec = scalar_benchmark()
        _, small = batch_for(spec, 10, 99)
        with pytest.raises(ValueError):
            confidence_band(small, 0.9)
