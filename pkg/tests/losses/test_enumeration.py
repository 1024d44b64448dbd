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

from bridgesampler.enumeration import TwoPointChain, exact_forward_kl, exact_lv, exact_reverse_kl
from bridgesampler.exceptions import ConfigurationError
from bridgesampler.gradcheck import ENUMERATION_TOLERANCE, finite_difference, relative_error, suite_enumeration
from bridgesampler.losses import grad_fkl_nis, grad_lv, grad_rkl_ld


def _chain(seed=0, T=3):
    return TwoPointChain([0.3, -0.7], T=T, random_state=np.random.RandomState(seed))


def test_path_probabilities_sum_to_one():
    chain = _chain()

    assert chain.paths().shape == (16, 4)
    assert np.sum(chain.enumerate("reverse").weights) == pytest.approx(1.0)
    assert np.sum(chain.enumerate("forward").weights) == pytest.approx(1.0)


def test_exact_divergences_are_non_negative():
    chain = _chain(seed=4)

    assert exact_reverse_kl(chain)[0] >= 0.0
    assert exact_forward_kl(chain)[0] >= 0.0
    assert exact_lv(chain)[0] >= 0.0


@pytest.mark.parametrize("exact", [exact_reverse_kl, exact_forward_kl])
def test_exact_gradients_match_finite_differences(exact):
    chain = _chain(seed=2)
    _, grads = exact(chain)

    for key, value in chain.values().items():
        def f(z):
            trial = chain.copy()
            trial.update({key: z})
            return exact(trial)[0]
        assert np.allclose(grads[key], finite_difference(f, value), atol=1e-7)


def test_estimators_over_all_paths_equal_the_exact_gradients():
    results = suite_enumeration(seed=0)

    assert {result["check"] for result in results} == {"rkl_ld", "lv:on_policy", "lv:forward", "fkl_nis",
                                                       "rkl_ld:shifted"}
    for result in results:
        assert result["error"] <= ENUMERATION_TOLERANCE, result["check"]


@pytest.mark.parametrize("estimator, exact", [(grad_rkl_ld, exact_reverse_kl), (grad_fkl_nis, exact_forward_kl)])
@pytest.mark.parametrize("shift", [0.0, 5.0])
def test_estimators_without_baseline_equal_the_exact_gradients(estimator, exact, shift):
    chain = _chain(seed=3)

    report = estimator(chain.shifted(shift).enumerate("reverse"), chain, use_baseline=False)

    grads = report.gradients()
    _, expected = exact(chain)
    keys = sorted(expected)
    assert relative_error(np.concatenate([np.ravel(grads[k]) for k in keys]),
                          np.concatenate([np.ravel(expected[k]) for k in keys])) <= ENUMERATION_TOLERANCE


def test_weighted_estimators_match_on_a_longer_chain():
    chain = _chain(seed=7, T=5)
    reverse = chain.enumerate("reverse")

    rkl = grad_rkl_ld(reverse, chain).gradients()
    lv = grad_lv(reverse, chain).gradients()
    fkl = grad_fkl_nis(reverse, chain).gradients()

    for key, value in exact_reverse_kl(chain)[1].items():
        assert np.allclose(rkl[key], value, rtol=1e-9, atol=1e-12)
    for key, value in exact_lv(chain)[1].items():
        assert np.allclose(lv[key], value, rtol=1e-9, atol=1e-12)
    for key, value in exact_forward_kl(chain)[1].items():
        assert np.allclose(fkl[key], value, rtol=1e-9, atol=1e-12)


def test_energy_shift_moves_the_normalizer_only():
    chain = _chain()
    shifted = chain.shifted(5.0)

    assert shifted.log_z == pytest.approx(chain.log_z - 5.0)
    assert exact_reverse_kl(shifted)[0] == pytest.approx(exact_reverse_kl(chain)[0])


def test_invalid_chains_raise():
    with pytest.raises(ConfigurationError):
        TwoPointChain([0.0, 1.0, 2.0])
    with pytest.raises(ConfigurationError):
        TwoPointChain([0.0, 1.0], T=0)
    with pytest.raises(ConfigurationError):
        _chain().enumerate("uniform")
