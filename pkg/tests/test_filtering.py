import numpy as np
import pytest
from conftest import NONSINGULAR_MODELS, observed, oscillator

from smoothkit import (
    GridMismatchError,
    ModelSpec,
    ObservationPath,
    TimeGrid,
    innovations,
    kalman_bucy,
    prior_mean_path,
    riccati_field,
    simulate,
)
from smoothkit.oracle import discrete_kalman_rts, discretize


def no_observation_model():
    return ModelSpec.constant([[-0.5, 1.0], [0.0, -0.2]], np.eye(2), np.zeros((1, 2)), [[1.0]], [1.0, -1.0], np.eye(2))


@pytest.mark.parametrize("scheme", ["propagator", "euler"])
def test_no_observations_gives_prior(scheme):
    spec = no_observation_model()
    grid, obs = observed(spec, 100)
    result = kalman_bucy(spec, grid, obs, scheme=scheme)
    if scheme == "propagator":
        np.testing.assert_array_equal(result.means, prior_mean_path(spec, grid))
    else:
        # the literal scheme steps the mean by Euler, so it only tracks the prior to O(h)
        np.testing.assert_allclose(result.means, prior_mean_path(spec, grid), atol=5e-3)


@pytest.mark.parametrize("scheme", ["propagator", "euler"])
def test_mean_consistent_data_leaves_mean_alone(scheme):
    spec = ModelSpec.constant(np.zeros((2, 2)), np.eye(2), [[1.0, 2.0]], [[0.5]], [0.3, -0.7], np.eye(2))
    grid = TimeGrid(1.0, 50)
    dy = np.full((50, 1), (0.3 - 1.4) * grid.h)
    obs = ObservationPath(grid, dy)
    result = kalman_bucy(spec, grid, obs, scheme=scheme)
    assert np.abs(result.means - [0.3, -0.7]).max() <= 1e-12
    assert np.abs(innovations(result, spec, obs)).max() <= 1e-12


def test_filter_beats_prior_mean():
    spec = ModelSpec.constant(0.0, 1.0, 1.0, 1.0, [0.0], [[1.0]])
    grid = TimeGrid(1.0, 200)
    prior = prior_mean_path(spec, grid)
    filt_sq = prior_sq = 0.0
    for seed in range(200):
        sim = simulate(spec, grid, seed)
        result = kalman_bucy(spec, grid, sim.observations)
        filt_sq += ((result.means - sim.states) ** 2).sum()
        prior_sq += ((prior - sim.states) ** 2).sum()
    assert filt_sq < prior_sq


def test_innovations_without_observation_signal():
    spec = no_observation_model()
    grid, obs = observed(spec, 40)
    np.testing.assert_array_equal(innovations(kalman_bucy(spec, grid, obs), spec, obs), obs.increments)


def test_innovations_are_white():
    spec = ModelSpec.constant(-0.5, 1.0, 1.0, 0.5, [0.3], [[1.0]], horizon=100.0)
    grid = TimeGrid(100.0, 100_000)
    obs = simulate(spec, grid, 21).observations
    z = innovations(kalman_bucy(spec, grid, obs), spec, obs)[:, 0] / (0.5 * np.sqrt(grid.h))
    assert abs(z.var() - 1.0) <= 0.05
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) <= 0.02


def test_oracle_error_halves():
    spec = oscillator()
    grid, obs = observed(spec, 1000, seed=5)
    errs = []
    for o in (obs.coarsen(), obs):
        disc = discrete_kalman_rts(discretize(spec, o.grid), o)
        errs.append(np.abs(kalman_bucy(spec, o.grid, o).means - disc.pred_means).max())
    assert 1.4 <= errs[0] / errs[1] <= 2.6


@pytest.mark.parametrize("name", sorted(NONSINGULAR_MODELS))
def test_covariance_shapes_and_ordering(name):
    spec = NONSINGULAR_MODELS[name]()
    grid, obs = observed(spec, 300)
    result = kalman_bucy(spec, grid, obs)
    d = spec.dims.d1
    assert result.means.shape == (301, d)
    assert result.covariances.shape == (301, d, d)
    gap = result.covariances - riccati_field(spec, grid).w
    assert np.linalg.eigvalsh(0.5 * (gap + np.swapaxes(gap, -1, -2))).min() >= -1e-7


def test_euler_and_propagator_schemes_agree_to_first_order():
    spec = oscillator()
    grid, obs = observed(spec, 2000)
    gap = np.abs(kalman_bucy(spec, grid, obs).means - kalman_bucy(spec, grid, obs, scheme="euler").means).max()
    assert gap < 0.05


def test_grid_mismatch():
    spec = oscillator()
    _, obs = observed(spec, 40)
    with pytest.raises(GridMismatchError):
        kalman_bucy(spec, TimeGrid(spec.horizon, 50), obs)


def test_unknown_scheme():
    spec = oscillator()
    grid, obs = observed(spec, 10)
    with pytest.raises(ValueError):
        kalman_bucy(spec, grid, obs, scheme="implicit")
