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
from scipy.integrate import quad
from scipy.linalg import solve_banded
from scipy.optimize import minimize
from scipy.stats import norm, t as student_t

from bridgesampler.exceptions import ConfigurationError
from bridgesampler.gradcheck import finite_difference
from bridgesampler.targets import (Mixture, MixtureSpec, dump_samples, load_samples, make_brownian, make_funnel,
                                   make_gaussian, make_gmm, make_manywell, make_mos, make_target)


TARGETS = [
    make_gaussian([1.0, -2.0], [0.5, 1.5]),
    make_gmm(d=2, m=4, box_halfwidth=3.0, seed=1),
    make_mos(d=2, m=3, box_halfwidth=3.0, seed=2),
    make_funnel(d=4),
    make_manywell(d=3, m=2, delta=2.0),
    make_brownian(T_obs=6, seed=0, missing=[2, 3]),
]


@pytest.mark.parametrize("target", TARGETS, ids=lambda target: target.name)
def test_score_matches_finite_differences(target):
    x = np.random.RandomState(0).normal(scale=0.7, size=(3, target.dim))

    numeric = np.array([finite_difference(lambda z: float(target.log_density(z)), row) for row in x])

    assert np.allclose(target.score(x), numeric, atol=1e-5)


@pytest.mark.parametrize("target", TARGETS, ids=lambda target: target.name)
def test_hvp_matches_finite_differences_of_the_score(target):
    random_state = np.random.RandomState(1)
    x = random_state.normal(scale=0.7, size=(3, target.dim))
    v = random_state.normal(size=(3, target.dim))
    step = 1e-5

    numeric = (target.score(x + step * v) - target.score(x - step * v)) / (2 * step)

    assert np.allclose(target.hvp(x, v), numeric, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("target", TARGETS, ids=lambda target: target.name)
def test_hvp_is_symmetric(target):
    random_state = np.random.RandomState(2)
    x = random_state.normal(scale=0.7, size=target.dim)
    v, w = random_state.normal(size=(2, target.dim))

    assert target.hvp(x, v).shape == (target.dim,)
    assert np.dot(w, target.hvp(x, v)) == pytest.approx(np.dot(v, target.hvp(x, w)), rel=1e-10, abs=1e-12)


def test_hvp_rejects_mismatched_vectors():
    target = make_gaussian([0.0, 0.0])

    with pytest.raises(ConfigurationError):
        target.hvp(np.zeros((3, 2)), np.zeros((2, 2)))


def test_gaussian_density_is_normalized():
    target = make_gaussian([0.5, -1.0], [2.0, 0.5])
    x = np.random.RandomState(0).normal(size=(4, 2))

    assert np.allclose(target.log_density(x), np.sum(norm.logpdf(x, [0.5, -1.0], [2.0, 0.5]), axis=1))
    assert target.log_z == 0.0


@pytest.mark.parametrize("make", [make_gmm, make_mos])
def test_mixtures_in_one_dimension_integrate_to_one(make):
    target = make(d=1, m=3, box_halfwidth=4.0, seed=0)

    total, _ = quad(lambda x: np.exp(target.log_density(np.array([x]))), -np.inf, np.inf, limit=200)

    assert total == pytest.approx(1.0, abs=1e-4)


def test_mixture_locations_depend_only_on_the_seed():
    a = make_gmm(d=2, m=8, box_halfwidth=10.0, seed=5)
    b = make_gmm(d=2, m=8, box_halfwidth=10.0, seed=5)

    assert np.array_equal(a.modes, b.modes)
    assert a.modes.shape == (8, 2)
    assert np.all(np.abs(a.modes) <= 10.0)


def test_single_point_is_returned_as_a_scalar():
    target = make_funnel(d=3)

    assert np.ndim(target.log_density(np.zeros(3))) == 0
    assert target.score(np.zeros(3)).shape == (3,)


def test_wrong_dimension_raises():
    with pytest.raises(ConfigurationError):
        make_gaussian([0.0, 0.0]).log_density(np.zeros((2, 3)))


def test_energy_shift_moves_density_and_normalizer():
    target = make_manywell(d=2, m=2, delta=4.0)
    shifted = target.shifted(3.0)
    x = np.random.RandomState(0).normal(size=(5, 2))

    assert np.allclose(shifted.log_density(x), target.log_density(x) - 3.0)
    assert np.allclose(shifted.raw_log_density(x), target.raw_log_density(x))
    assert np.allclose(shifted.score(x), target.score(x))
    assert shifted.log_z == pytest.approx(target.log_z - 3.0)
    assert target.energy_shift == 0.0


def test_manywell_normalizer_matches_quadrature():
    target = make_manywell(d=3, m=1, delta=4.0)
    well, _ = quad(lambda x: np.exp(-(x ** 2 - 4.0) ** 2), -np.inf, np.inf)

    assert target.log_z == pytest.approx(np.log(well) + np.log(2 * np.pi))
    assert target.log_z_known


def test_manywell_modes():
    target = make_manywell()

    assert target.modes.shape == (32, 5)
    assert np.allclose(np.abs(target.modes), 2.0)


def test_manywell_sampler_reproduces_the_second_moment():
    target = make_manywell(d=2, m=1, delta=4.0)
    samples = target.sample(20000, np.random.RandomState(0))
    z, _ = quad(lambda x: np.exp(-(x ** 2 - 4.0) ** 2), -np.inf, np.inf)
    moment, _ = quad(lambda x: x ** 2 * np.exp(-(x ** 2 - 4.0) ** 2) / z, -np.inf, np.inf)

    assert np.mean(samples[:, 0] ** 2) == pytest.approx(moment, rel=0.02)
    assert np.mean(samples[:, 0] > 0) == pytest.approx(0.5, abs=0.02)
    assert np.var(samples[:, 1]) == pytest.approx(1.0, abs=0.05)


def test_invalid_manywell_raises():
    with pytest.raises(ConfigurationError):
        make_manywell(d=2, m=3)


def test_funnel_samples_are_bounded():
    samples = make_funnel(d=10).sample(5000, np.random.RandomState(0))

    assert samples.shape == (5000, 10)
    assert np.all(np.abs(samples) <= 30.0)
    assert np.var(samples[:, 0]) == pytest.approx(9.0, rel=0.1)


def test_brownian_has_missing_observations():
    target = make_brownian(T_obs=30, seed=0)

    assert target.dim == 32
    assert np.sum(~target.observed) == 9
    assert not target.has_sampler
    assert target.log_z is None
    with pytest.raises(ConfigurationError):
        target.sample(1, np.random.RandomState(0))


def test_brownian_path_mode_with_unit_scales_solves_the_ridge_system():
    n = 12
    y = np.random.RandomState(3).normal(scale=2.0, size=n)
    target = make_brownian(observations=y)
    # D^T D + I for the differences D with x_0 = 0, in banded storage
    banded = np.zeros((3, n))
    banded[0, 1:] = -1.0
    banded[1] = 3.0
    banded[1, -1] = 2.0
    banded[2, :-1] = -1.0
    mode = solve_banded((1, 1), banded, y)

    def negative(path):
        return -float(target.log_density(np.concatenate([[0.0, 0.0], path])))

    def negative_grad(path):
        return -target.score(np.concatenate([[0.0, 0.0], path]))[2:]

    found = minimize(negative, np.zeros(n), jac=negative_grad, method="BFGS", options={"gtol": 1e-10})

    assert np.allclose(target.score(np.concatenate([[0.0, 0.0], mode]))[2:], 0.0, atol=1e-10)
    assert np.allclose(found.x, mode, atol=1e-6)


def test_gmm_samples_reproduce_the_mixture_weights():
    locations = 8.0 * np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    target = Mixture(MixtureSpec(4, locations, "gaussian", seed=0))
    n = 100000

    samples = target.sample(n, np.random.RandomState(0))
    counts = np.bincount(np.argmax(target.component_log_likelihoods(samples), axis=1), minlength=4)

    assert np.all(np.abs(counts / n - 0.25) <= 3 * np.sqrt(0.25 * 0.75 / n))


def test_mos_has_heavier_tails_than_a_gaussian():
    mos = Mixture(MixtureSpec(1, np.zeros((1, 1)), "student_t", seed=0))
    gaussian = make_gaussian([0.0])

    for x in (-10.0, 10.0):
        assert mos.log_density(np.array([x])) > gaussian.log_density(np.array([x])) + 40.0
        assert mos.log_density(np.array([x])) == pytest.approx(student_t.logpdf(x, df=2))
    assert mos.log_density(np.array([0.0])) < gaussian.log_density(np.array([0.0]))


def test_make_target_builds_and_shifts():
    target = make_target({"name": "gmm", "d": 2, "m": 4, "box_halfwidth": 5.0, "seed": 0, "energy_shift": 2.0})

    assert target.name == "gmm"
    assert target.energy_shift == 2.0


def test_make_target_rejects_unknown_names_and_arguments():
    with pytest.raises(ConfigurationError):
        make_target({"name": "banana"})
    with pytest.raises(ConfigurationError):
        make_target({"name": "funnel", "width": 3})


def test_samples_file_keeps_values(tmp_path):
    target = make_gaussian([0.0, 0.0])
    samples = np.random.RandomState(0).normal(size=(7, 2))

    path = dump_samples(tmp_path / "samples.csv", samples, target, seed=3)

    assert open(path).readline() == "# target=gaussian seed=3\n"
    assert np.allclose(load_samples(path), samples)
