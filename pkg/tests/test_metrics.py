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

from bridgesampler.bridge import CMCD, DBS, BridgeParams, build_bridge, log_ratio, simulate_reverse
from bridgesampler.exceptions import ConfigurationError, EstimationError
from bridgesampler.losses import grad_rkl_ld
from bridgesampler.metrics import (assign_modes, elbo, emc, mmd, mode_coverage, reference_baselines,
                                   sample_metrics, sinkhorn_divergence)
from bridgesampler.networks import BetaSchedule, DiffCoeff, LearnablePrior, LinearDrift
from bridgesampler.targets import make_gaussian, make_gmm, make_manywell


def test_sinkhorn_divergence_of_a_set_with_itself_vanishes():
    samples = np.random.RandomState(0).normal(size=(60, 2))

    assert abs(sinkhorn_divergence(samples, samples)) <= 1e-8


def test_sinkhorn_divergence_between_two_points_is_their_squared_distance():
    delta = 1.7

    value = sinkhorn_divergence(np.array([[0.0, 0.0]]), np.array([[delta, 0.0]]))

    assert value == pytest.approx(delta ** 2)


def test_sinkhorn_divergence_of_a_translated_set():
    samples = np.random.RandomState(0).normal(size=(40, 2))

    value, log = sinkhorn_divergence(samples, samples + [1.0, 0.0], epsilon=1e-2, log=True)

    assert value == pytest.approx(1.0, rel=0.05)


def test_mmd_of_a_set_with_itself_is_zero():
    samples = np.random.RandomState(0).normal(size=(30, 3))

    assert mmd(samples, samples) == 0.0
    assert mmd(samples, samples + 5.0) > 0.0


def test_sample_sets_of_different_dimensions_raise():
    with pytest.raises(ConfigurationError):
        mmd(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        sinkhorn_divergence(np.zeros((0, 2)), np.zeros((3, 2)))


def test_mode_coverage_of_a_skewed_histogram():
    assert mode_coverage([2, 1, 1, 0]) == pytest.approx(0.75)
    assert mode_coverage([5, 5, 5, 5]) == pytest.approx(1.0)
    assert mode_coverage([9, 0, 0]) == pytest.approx(0.0)


def test_emc_assigns_samples_to_mixture_components():
    target = make_gmm(d=2, m=4, box_halfwidth=20.0, seed=3)

    assert emc(target.modes, target) == pytest.approx(1.0)
    assert emc(np.repeat(target.modes[:1], 10, axis=0), target) == pytest.approx(0.0)


def test_modes_of_other_targets_are_assigned_by_distance():
    target = make_manywell(d=2, m=1, delta=4.0)
    samples = np.array([[2.1, 0.3], [-1.8, 0.0], [1.9, -0.5]])

    assignment, n_modes = assign_modes(samples, target)

    assert n_modes == 2
    assert np.array_equal(assignment, [1, 0, 1])


def test_elbo_is_minus_the_mean_log_ratio():
    params = build_bridge(CMCD, 2, 4, np.random.RandomState(0))
    batch = simulate_reverse(params, make_gaussian([1.0, 0.0]), 64, seed=0)

    value, stderr = elbo(batch)

    assert value == pytest.approx(-np.mean(log_ratio(batch)))
    assert stderr == pytest.approx(np.std(log_ratio(batch)) / 8.0)
    assert value <= 0.0 + 3 * stderr
    assert value == -grad_rkl_ld(batch, params).baseline

    shifted = simulate_reverse(params, make_gaussian([1.0, 0.0]).shifted(7.5), 64, seed=0)
    assert elbo(shifted)[0] == -grad_rkl_ld(shifted, params).baseline


def test_elbo_vanishes_when_both_processes_agree():
    # stationary AR(1) chain with correlation 0.6 read in either direction
    params = BridgeParams(DBS, LearnablePrior(1, 0.0, 1.0, learnable=False), BetaSchedule(1, learnable=False),
                          DiffCoeff(1, 0.8, learnable=False), reverse=LinearDrift("reverse", 1, -0.4, learnable=False),
                          forward=LinearDrift("forward", 1, -0.4, learnable=False), dt=1.0)
    batch = simulate_reverse(params, make_gaussian([0.0]), 256, seed=0)

    value, stderr = elbo(batch)

    assert np.allclose(log_ratio(batch), 0.0, atol=1e-12)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert stderr == pytest.approx(0.0, abs=1e-12)


def test_elbo_of_an_empty_batch_raises():
    params = build_bridge(CMCD, 1, 2, np.random.RandomState(0))
    batch = simulate_reverse(params, make_gaussian([0.0]), 4, seed=0)
    batch.valid[:] = False

    with pytest.raises(EstimationError):
        elbo(batch)


def test_reference_baselines_are_small_for_exact_samples():
    target = make_gaussian([0.0, 0.0])

    baselines = reference_baselines(target, 200, seed=0)

    assert 0.0 <= baselines["mmd"] < 0.5
    assert abs(baselines["sinkhorn"]) < 0.5


def test_sample_metrics_include_coverage_for_targets_with_modes():
    target = make_gmm(d=2, m=4, box_halfwidth=5.0, seed=0)
    reference = target.sample(100, np.random.RandomState(0))

    result = sample_metrics(target.sample(100, np.random.RandomState(1)), target, reference)

    assert set(result) == {"sinkhorn", "sinkhorn_converged", "mmd", "emc"}
    assert result["emc"] > 0.8
    assert "emc" not in sample_metrics(reference, make_gaussian([0.0, 0.0]), reference)
