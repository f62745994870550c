import numpy as np
import pytest
from conftest import observed, oscillator_constant, three_state
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg

from smoothkit import ModelSpec, ObservationPath, SingularCovarianceError, TimeGrid, bf_smooth
from smoothkit.oracle import (
    MAX_JOINT_OBS,
    DiscreteLGSSM,
    discrete_kalman_rts,
    discretize,
    joint_conditioning,
    joint_gaussian,
    static_scalar_posterior,
    static_scalar_posterior_quotient,
)


class TestDiscretize:
    def test_zero_drift(self):
        spec = ModelSpec.constant(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), [0, 0], np.eye(2))
        model = discretize(spec, TimeGrid(1.0, 5))
        np.testing.assert_array_equal(model.A, np.broadcast_to(np.eye(2), (5, 2, 2)))

    def test_zero_diffusion(self):
        spec = ModelSpec.constant(-1.0, 0.0, 1.0, 1.0, [0.0], [[1.0]])
        assert np.all(discretize(spec, TimeGrid(1.0, 5)).Q == 0.0)

    def test_scalar_values(self):
        spec = ModelSpec.constant(-1.0, 2.0, 3.0, 0.5, [0.0], [[1.0]])
        model = discretize(spec, TimeGrid(1.0, 100))
        np.testing.assert_allclose(model.A, 0.99, rtol=0, atol=1e-15)
        np.testing.assert_allclose(model.Q, 0.04, rtol=1e-14)
        np.testing.assert_allclose(model.H, 0.03, rtol=1e-14)
        np.testing.assert_allclose(model.R, 0.0025, rtol=1e-14)

    def test_expm_transition(self):
        spec = oscillator_constant()
        grid = TimeGrid(1.0, 10)
        model = discretize(spec, grid, transition="expm")
        a = np.array([[0.0, 1.0], [-2.0, -0.3]])
        bbt = np.array([[0.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(model.A[3], linalg.expm(a * grid.h), atol=1e-14)
        q, _ = integrate.quad_vec(lambda r: linalg.expm(a * r) @ bbt @ linalg.expm(a * r).T, 0.0, grid.h)
        np.testing.assert_allclose(model.Q[3], q, atol=1e-12)

    def test_unknown_transition(self):
        with pytest.raises(ValueError):
            discretize(oscillator_constant(), TimeGrid(1.0, 2), transition="rk4")


class TestDiscreteKalmanRts:
    def test_no_observation_map_gives_prior(self):
        spec = ModelSpec.constant([[0.9, 0.1], [0.0, -0.5]], np.eye(2), np.zeros((1, 2)), [[1.0]], [1.0, 2.0], np.eye(2))
        grid, obs = observed(spec, 20)
        model = discretize(spec, grid)
        out = discrete_kalman_rts(model, obs)
        mean, cov = model.mean0, model.cov0
        for i in range(grid.n + 1):
            np.testing.assert_allclose(out.smooth_means[i], mean, atol=1e-12)
            np.testing.assert_allclose(out.smooth_covs[i], cov, atol=1e-12)
            if i < grid.n:
                mean = model.A[i] @ mean
                cov = model.A[i] @ cov @ model.A[i].T + model.Q[i]

    def test_single_cell_static(self):
        spec = ModelSpec.constant(0.0, 0.0, 2.0, 1.0, [0.0], [[1.0]])
        grid = TimeGrid(1.0, 1)
        out = discrete_kalman_rts(discretize(spec, grid), ObservationPath(grid, [[1.0]]))
        np.testing.assert_allclose(out.smooth_means[:, 0], 0.4, atol=1e-15)
        np.testing.assert_allclose(out.smooth_covs[:, 0, 0], 0.2, atol=1e-15)

    @pytest.mark.parametrize("n", [2, 13, 50])
    @pytest.mark.parametrize("factory", [oscillator_constant, three_state])
    def test_matches_joint_conditioning(self, n, factory):
        spec = factory()
        grid, obs = observed(spec, n, seed=n)
        model = discretize(spec, grid)
        out = discrete_kalman_rts(model, obs)
        means, cov = joint_conditioning(joint_gaussian(model), obs)
        d = spec.dims.d1
        np.testing.assert_allclose(out.smooth_means, means, atol=1e-9)
        for i in range(n + 1):
            for j in range(n + 1):
                block = cov[i * d:(i + 1) * d, j * d:(j + 1) * d]
                np.testing.assert_allclose(out.cross_covariance(i, j), block, atol=1e-9)

    def test_singular_innovation(self):
        model = DiscreteLGSSM(
            A=np.ones((1, 1, 1)), Q=np.zeros((1, 1, 1)), H=np.zeros((1, 1, 1)), R=np.zeros((1, 1, 1)),
            mean0=np.zeros(1), cov0=np.zeros((1, 1)),
        )
        with pytest.raises(SingularCovarianceError):
            discrete_kalman_rts(model, np.zeros((1, 1)))


class TestJointConditioning:
    def test_three_node_two_state(self):
        spec = oscillator_constant()
        grid, obs = observed(spec, 2, seed=1)
        model = discretize(spec, grid)
        means, cov = joint_conditioning(joint_gaussian(model), obs)
        out = discrete_kalman_rts(model, obs)
        assert means.shape == (3, 2)
        assert cov.shape == (6, 6)
        np.testing.assert_allclose(means, out.smooth_means, atol=1e-9)

    def test_no_observation_map_gives_marginal(self):
        spec = ModelSpec.constant(-0.3, 1.0, 0.0, 1.0, [1.0], [[0.5]])
        grid, obs = observed(spec, 5)
        joint = joint_gaussian(discretize(spec, grid))
        means, cov = joint_conditioning(joint, obs)
        np.testing.assert_allclose(means.reshape(-1), joint.mean[:6], atol=1e-14)
        np.testing.assert_allclose(cov, joint.cov[:6, :6], atol=1e-14)

    def test_static_aggregated_observation(self):
        spec = ModelSpec.constant(0.0, 0.0, 1.0, 1.0, [0.0], [[1.0]])
        grid = TimeGrid(1.0, 1)
        means, cov = joint_conditioning(joint_gaussian(discretize(spec, grid)), [[1.0]])
        np.testing.assert_allclose(means, 0.5, atol=1e-15)
        np.testing.assert_allclose(cov, 0.5, atol=1e-15)

    def test_joint_dimensions(self):
        joint = joint_gaussian(discretize(three_state(), TimeGrid(1.5, 4)))
        assert joint.cov.shape == (5 * 3 + 4 * 2,) * 2
        assert np.linalg.eigvalsh(joint.cov).min() >= -1e-12

    def test_desk_scale_limit(self):
        spec = ModelSpec.constant(0.0, 1.0, 1.0, 1.0, [0.0], [[1.0]])
        grid = TimeGrid(1.0, MAX_JOINT_OBS + 1)
        joint = joint_gaussian(discretize(spec, TimeGrid(1.0, 1)))
        joint = type(joint)(joint.mean, joint.cov, 1, 1, grid.n)
        with pytest.raises(ValueError):
            joint_conditioning(joint, np.zeros((grid.n, 1)))


class TestStaticPosterior:
    def test_unit_case(self):
        assert static_scalar_posterior(0, 1, 1, 1, 1) == (0.5, 0.5)

    def test_no_information(self):
        assert static_scalar_posterior(0.7, 2.0, 0.0, 1.5, 3.0) == (0.7, 2.0)

    def test_stronger_signal(self):
        np.testing.assert_allclose(static_scalar_posterior(0, 1, 2, 1, 1), (0.4, 0.2), atol=1e-15)
        np.testing.assert_allclose(static_scalar_posterior_quotient(0, 1, 2, 1, 1), (0.4, 0.2), atol=1e-15)

    @given(st.floats(-5, 5), st.floats(0, 10), st.floats(-5, 5), st.floats(0.1, 5), st.floats(-10, 10))
    @settings(max_examples=200, deadline=None)
    def test_quotient_form_agrees(self, mu, var, c, sigma, y):
        direct = static_scalar_posterior(mu, var, c, sigma, y)
        quotient = static_scalar_posterior_quotient(mu, var, c, sigma, y)
        scale = 1.0 + abs(mu) + var * (1 + abs(c * y))
        np.testing.assert_allclose(quotient, direct, rtol=0, atol=1e-12 * scale)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            static_scalar_posterior(0, 1, 1, 0, 1)
        with pytest.raises(ValueError):
            static_scalar_posterior_quotient(0, -1, 1, 1, 1)


@pytest.mark.parametrize("transition", ["euler", "expm"])
def test_continuous_gap_halves(transition):
    spec = oscillator_constant()
    grid, obs = observed(spec, 1000, seed=9)
    errs = []
    for o in (obs.coarsen(), obs):
        out = discrete_kalman_rts(discretize(spec, o.grid, transition), o)
        errs.append(np.abs(bf_smooth(spec, o.grid, o).means - out.smooth_means).max())
    assert 1.7 <= errs[0] / errs[1] <= 2.3
