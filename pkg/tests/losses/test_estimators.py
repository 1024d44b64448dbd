# MIT License
#
# Copyright (c) 2019 Tuomas Halvari, Juha Harviainen, Juha Mylläri, Antti Röyskö, Juuso Silvennoinen
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

import numpy as np
import pytest

from bridgesampler.bridge import (CMCD, DBS, FIXED_FORWARD, BridgeParams, build_bridge, simulate_forward,
                                  simulate_reverse)
from bridgesampler.exceptions import ConfigurationError, EstimationError, UsageError
from bridgesampler.gradcheck import (MODEL_TOLERANCE, _bridge_objective, check_lv_loss, check_network,
                                     check_reparameterized, check_transitions, compare_with_fd, finite_difference,
                                     parameter_fd, perturbed, suite_equivalence)
from bridgesampler.losses import (BatchConfig, divergence_diagnostics, grad_fkl_nis, grad_lv, grad_rkl_ld,
                                  grad_rkl_r, importance_weights, lv_loss_value)
from bridgesampler.networks import BetaSchedule, DiffCoeff, LearnablePrior, LinearDrift
from bridgesampler.nodes import Tape
from bridgesampler.targets import make_brownian, make_gaussian, make_mos


def _bridge(parameterization, dim=2, T=4, seed=0):
    random_state = np.random.RandomState(seed)
    learn = parameterization != FIXED_FORWARD
    params = build_bridge(parameterization, dim, T, random_state, sigma_init=0.8, learn_sigma=learn,
                          learn_prior=learn)
    return perturbed(params, random_state)


def _batch(params, target=None, n_paths=48, seed=0):
    target = target or make_gaussian(np.linspace(-1.0, 1.0, params.dim), 1.5)
    return simulate_reverse(params, target, n_paths, seed)


def _constant_ratio(batch, value=2.0):
    batch.log_p_core = batch.log_q - value
    return batch


def test_constant_log_ratio_gives_zero_reverse_gradient():
    params = _bridge(DBS)
    batch = _constant_ratio(_batch(params))

    report = grad_rkl_ld(batch, params)

    assert report.alpha
    for value in report.alpha.values():
        assert np.array_equal(value, np.zeros_like(value))
    assert report.baseline == pytest.approx(2.0)


def test_constant_log_ratio_gives_zero_lv_loss_and_gradient():
    params = _bridge(CMCD)
    batch = _constant_ratio(_batch(params))

    report = grad_lv(batch, params)

    assert lv_loss_value(batch) == 0.0
    for value in report.gradients().values():
        assert np.array_equal(value, np.zeros_like(value))


@pytest.mark.parametrize("parameterization", [DBS, CMCD])
def test_energy_shift_leaves_the_gradients_unchanged(parameterization):
    params = _bridge(parameterization)
    target = make_gaussian([0.5, -0.5], 1.2)

    base = grad_rkl_ld(_batch(params, target), params)
    shifted = grad_rkl_ld(_batch(params, target.shifted(-40.0)), params)

    for key, value in base.gradients().items():
        assert np.array_equal(value, shifted.gradients()[key])
    assert shifted.baseline == pytest.approx(base.baseline - 40.0)


def test_lv_and_rkl_ld_coincide_for_a_fixed_forward_process():
    params = _bridge(FIXED_FORWARD)
    batch = _batch(params)

    assert grad_rkl_ld(batch, params).equals(grad_lv(batch, params))


@pytest.mark.parametrize("parameterization", [DBS, CMCD])
def test_lv_and_rkl_ld_share_the_reverse_block(parameterization):
    params = _bridge(parameterization)
    batch = _batch(params)

    rkl_ld, lv = grad_rkl_ld(batch, params), grad_lv(batch, params)

    assert rkl_ld.alpha.keys() == lv.alpha.keys()
    for key in rkl_ld.alpha:
        assert np.array_equal(rkl_ld.alpha[key], lv.alpha[key])


def test_dbs_forward_block_differs_between_lv_and_rkl_ld():
    params = _bridge(DBS)
    batch = _batch(params)

    rkl_ld, lv = grad_rkl_ld(batch, params), grad_lv(batch, params)

    assert any(not np.allclose(rkl_ld.phi[key], lv.phi[key]) for key in rkl_ld.phi)


def test_equivalence_suite_passes():
    results = suite_equivalence(seed=0, n_paths=64, T=6)

    assert all(result["passed"] for result in results), results


@pytest.mark.parametrize("parameterization", [DBS, CMCD])
def test_drift_and_transition_gradients_match_finite_differences(parameterization):
    assert check_network(parameterization) <= MODEL_TOLERANCE
    assert check_transitions(parameterization) <= MODEL_TOLERANCE


@pytest.mark.parametrize("parameterization", [DBS, CMCD])
def test_lv_gradient_matches_finite_differences_of_the_loss(parameterization):
    assert check_lv_loss(parameterization) <= MODEL_TOLERANCE


def test_reparameterized_gradient_matches_finite_differences():
    random_state = np.random.RandomState(0)
    params = BridgeParams(DBS, LearnablePrior(2, 0.5, 1.3), BetaSchedule(4, learnable=False), DiffCoeff(2, 0.7),
                          reverse=LinearDrift("reverse", 2, random_state.normal(0, 0.5, 2), 0.2),
                          forward=LinearDrift("forward", 2, -0.3, random_state.normal(0, 0.5, 2)))
    target = make_gaussian([0.5, -1.0], 0.8)
    config = BatchConfig(n_paths=32, seed=3)

    grads = grad_rkl_r(params, target, config).gradients()

    def objective(p):
        batch = simulate_reverse(p, target, config.n_paths, config.seed)
        return float(np.mean(batch.log_ratio))

    fd = parameter_fd(_bridge_objective(params, objective), params.learnable_values(), random_state)
    assert set(grads) == set(params.learnable_ids)
    assert compare_with_fd(grads, fd) <= MODEL_TOLERANCE


@pytest.mark.parametrize("parameterization", [CMCD, FIXED_FORWARD, DBS])
def test_reparameterized_gradient_follows_the_target_score(parameterization):
    params = _bridge(parameterization)
    target = make_gaussian([0.5, -1.0], 0.8)
    config = BatchConfig(n_paths=16, seed=1)

    grads = grad_rkl_r(params, target, config).gradients()

    def objective(p):
        return float(np.mean(simulate_reverse(p, target, config.n_paths, config.seed).log_ratio))

    fd = parameter_fd(_bridge_objective(params, objective), params.learnable_values(), np.random.RandomState(1))
    assert compare_with_fd(grads, fd) <= MODEL_TOLERANCE


@pytest.mark.parametrize("parameterization", [CMCD, FIXED_FORWARD, DBS])
def test_reparameterized_gradient_on_a_heavy_tailed_mixture(parameterization):
    assert check_reparameterized(parameterization) <= MODEL_TOLERANCE


def _affine_cmcd(T=2):
    return BridgeParams(CMCD, LearnablePrior(1, 0.3, 1.2), BetaSchedule(T), DiffCoeff(1, 0.9),
                        control=LinearDrift("control", 1, -0.4, 0.2))


def _gaussian_path_kl(params, mu, std):
    """Reverse KL between the path measures of a one-dimensional bridge with affine drifts and a N(mu, std^2) target.
    """
    T, dt = params.T, params.dt
    target = make_gaussian([mu], std)
    step_var = params.diffusion.sigma()[0] ** 2 * dt
    tape = Tape(record=False)
    nodes = params.bind(tape)
    x = tape.constant(np.array([[0.0], [1.0]]))

    def affine(drift, t):
        times = np.full(2, t)
        lang = params.langevin(nodes, x, times, target.score(x.value))
        values = drift(nodes, x, times, lang).value[:, 0]
        return 1.0 + dt * (values[1] - values[0]), dt * values[0]

    mean, cov = np.zeros(T + 1), np.zeros((T + 1, T + 1))
    mean[T] = params.prior.parameters["mean"][0]
    cov[T, T] = np.exp(2 * params.prior.parameters["log_std"][0])
    for t in range(T, 0, -1):
        a, c = affine(params.reverse_drift, t)
        mean[t - 1] = a * mean[t] + c
        cov[t - 1, t:] = a * cov[t, t:]
        cov[t:, t - 1] = cov[t - 1, t:]
        cov[t - 1, t - 1] = a ** 2 * cov[t, t] + step_var

    log_q = -0.5 * np.log(2 * np.pi * np.e * cov[T, T]) - 0.5 * T * np.log(2 * np.pi * np.e * step_var)
    log_p = -0.5 * np.log(2 * np.pi * std ** 2) - 0.5 * ((mean[0] - mu) ** 2 + cov[0, 0]) / std ** 2
    for t in range(1, T + 1):
        b, e = affine(params.forward_drift, t - 1)
        gap_mean = mean[t] - b * mean[t - 1] - e
        gap_var = cov[t, t] - 2 * b * cov[t, t - 1] + b ** 2 * cov[t - 1, t - 1]
        log_p += -0.5 * np.log(2 * np.pi * step_var) - 0.5 * (gap_mean ** 2 + gap_var) / step_var
    return log_q - log_p


def test_reparameterized_gradient_matches_the_gaussian_path_kl():
    params = _affine_cmcd()
    mu, std = 0.7, 0.6
    target = make_gaussian([mu], std)
    objective = _bridge_objective(params, lambda p: _gaussian_path_kl(p, mu, std))
    values = params.learnable_values()
    exact = {key: finite_difference(lambda z: objective({**values, key: z}), value) for key, value in values.items()}
    n_batches = 20

    reports = [grad_rkl_r(params, target, BatchConfig(n_paths=4000, seed=5, stream=k)) for k in range(n_batches)]

    kl = np.array([report.log_ratio_mean for report in reports])
    assert abs(np.mean(kl) - _gaussian_path_kl(params, mu, std)) <= 5 * np.std(kl, ddof=1) / np.sqrt(n_batches)
    assert set(reports[0].gradients()) == set(exact)
    for key, value in exact.items():
        estimates = np.array([report.gradients()[key] for report in reports])
        stderr = np.std(estimates, axis=0, ddof=1) / np.sqrt(n_batches)
        assert np.all(np.abs(np.mean(estimates, axis=0) - value) <= 5 * stderr), key


def test_reparameterized_and_log_derivative_reverse_blocks_agree():
    params = _bridge(DBS, seed=1)
    target = make_mos(2, 2, 1.5, seed=0)
    differences = []
    for stream in range(24):
        config = BatchConfig(n_paths=512, seed=2, stream=stream)
        reparameterized = grad_rkl_r(params, target, config).alpha
        batch = simulate_reverse(params, target, config.n_paths, config.seed, stream)
        log_derivative = grad_rkl_ld(batch, params).alpha
        differences.append(np.concatenate([np.ravel(reparameterized[k] - log_derivative[k])
                                           for k in sorted(reparameterized)]))
    differences = np.array(differences)

    z = np.mean(differences, axis=0) / (np.std(differences, axis=0, ddof=1) / np.sqrt(len(differences)))

    assert np.max(np.abs(z)) < 6.0
    assert np.mean(np.abs(z) > 3.0) < 0.05


def test_reparameterized_gradient_needs_a_score():
    class NoScore:
        pass

    class NoHvp:
        dim = 2

        def score(self, x):
            return -x

    with pytest.raises(ConfigurationError):
        grad_rkl_r(_bridge(CMCD), NoScore(), BatchConfig(n_paths=4, seed=0))
    with pytest.raises(ConfigurationError):
        grad_rkl_r(_bridge(CMCD), NoHvp(), BatchConfig(n_paths=4, seed=0))


def test_importance_weights_are_normalized():
    params = _bridge(CMCD)
    batch = _batch(params, n_paths=64)

    weights = importance_weights(batch)
    report = grad_fkl_nis(batch, params)

    assert np.sum(weights) == pytest.approx(1.0)
    assert np.all(weights >= 0)
    assert 1.0 <= report.ess <= batch.n_valid
    assert report.ess == pytest.approx(1.0 / np.sum(np.square(weights)))


def test_equal_log_ratios_give_full_effective_sample_size():
    params = _bridge(DBS)
    batch = _constant_ratio(_batch(params, n_paths=32))

    assert grad_fkl_nis(batch, params).ess == pytest.approx(32.0)


def test_estimators_check_the_proposal():
    params = _bridge(DBS)
    target = make_gaussian([0.0, 0.0])
    forward = simulate_forward(params, target, 8, seed=0)
    reverse = simulate_reverse(params, target, 8, seed=0)

    with pytest.raises(UsageError):
        grad_rkl_ld(forward, params)
    with pytest.raises(UsageError):
        grad_fkl_nis(forward, params)
    with pytest.raises(UsageError):
        grad_lv(reverse, params, proposal="forward")
    with pytest.raises(UsageError):
        grad_lv(reverse, params, proposal="uniform")
    assert grad_lv(forward, params, proposal="forward").n_paths == 8


def test_empty_valid_batch_raises():
    params = _bridge(CMCD)
    batch = _batch(params, n_paths=8)
    batch.valid[:] = False

    with pytest.raises(EstimationError):
        grad_rkl_ld(batch, params)
    with pytest.raises(EstimationError):
        lv_loss_value(batch)


def test_invalid_paths_are_ignored():
    params = _bridge(CMCD)
    batch = _batch(params, n_paths=16)
    full = grad_lv(batch, params)
    batch.valid[5] = False

    report = grad_lv(batch, params)

    assert report.n_invalid == 1
    assert report.n_paths == 16
    assert not all(np.array_equal(full.nu[k], report.nu[k]) for k in full.nu)


def test_divergence_diagnostics_need_log_z_for_the_kl_values():
    params = _bridge(CMCD)
    batch = _batch(params, n_paths=64)

    known = divergence_diagnostics(batch, log_z=0.0)
    unknown = divergence_diagnostics(batch)

    assert unknown["rkl"] is None and unknown["fkl"] is None
    assert known["jeffrey"] == pytest.approx(unknown["jeffrey"])
    assert known["rkl"] + known["fkl"] == pytest.approx(known["jeffrey"])
    assert known["jeffrey"] >= 0.0


def test_brownian_target_runs_through_the_reverse_estimator():
    target = make_brownian(T_obs=6, seed=0, missing=[2, 3])
    params = _bridge(CMCD, dim=target.dim, T=3)

    report = grad_rkl_ld(_batch(params, target, n_paths=16), params)

    assert all(np.all(np.isfinite(value)) for value in report.gradients().values())
