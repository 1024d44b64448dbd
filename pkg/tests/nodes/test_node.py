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

from bridgesampler import ops
from bridgesampler.exceptions import ConfigurationError, UsageError
from bridgesampler.nodes import Tape, backward


def test_gradient_of_inner_product_is_the_other_vector():
    tape = Tape()
    w = tape.leaf([1.0, -2.0, 0.5], name="w")
    x = tape.constant([3.0, 4.0, -1.0])

    grads = backward(ops.sum(w * x))

    assert np.allclose(grads["w"], [3.0, 4.0, -1.0])


def test_backward_accumulates_without_reset():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")
    root = ops.sum(ops.square(w))

    tape.backward(root)
    tape.backward(root)

    assert np.allclose(w.grad, [4.0, 8.0])


def test_backward_with_reset_is_repeatable():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")
    root = ops.sum(ops.square(w))

    first = tape.backward(root, reset=True)["w"].copy()
    second = tape.backward(root, reset=True)["w"]

    assert np.array_equal(first, second)
    assert np.allclose(second, [2.0, 4.0])


def test_leaf_used_twice_sums_both_paths():
    tape = Tape()
    w = tape.leaf(3.0, name="w")

    grads = backward(w * w + 2.0 * w)

    assert grads["w"] == pytest.approx(8.0)


def test_non_scalar_root_raises_usage_error():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")

    with pytest.raises(UsageError):
        backward(w * 2.0)


def test_backward_of_a_constant_root_gives_zero_gradients():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")
    root = tape.constant(5.0)

    grads = tape.backward(root)

    assert np.array_equal(grads["w"], np.zeros(2))


def test_unreachable_leaf_keeps_a_zero_gradient():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")
    v = tape.leaf([1.0, 2.0], name="v")

    grads = backward(ops.sum(w))

    assert np.allclose(grads["w"], 1.0)
    assert np.array_equal(grads["v"], np.zeros(2))
    assert np.array_equal(v.grad, np.zeros(2))


def test_non_recording_tape_stores_no_parents():
    tape = Tape(record=False)
    w = tape.leaf([1.0, 2.0], name="w")

    out = ops.sum(ops.exp(w))

    assert not w.requires_grad
    assert out.parents == ()
    assert out.value == pytest.approx(np.exp(1.0) + np.exp(2.0))


def test_nodes_of_different_tapes_do_not_mix():
    a = Tape().leaf(1.0)
    b = Tape().leaf(2.0)

    with pytest.raises(ConfigurationError):
        a + b


def test_backward_expects_a_node():
    with pytest.raises(UsageError):
        backward(np.ones(1))


def test_numpy_array_on_the_left_dispatches_to_the_node():
    tape = Tape()
    w = tape.leaf([1.0, 2.0], name="w")

    out = np.array([2.0, 3.0]) * w

    assert np.allclose(out.value, [2.0, 6.0])
    assert np.allclose(backward(ops.sum(out))["w"], [2.0, 3.0])
