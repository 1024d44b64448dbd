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
from abc import ABC, abstractmethod

from bridgesampler.exceptions import ConfigurationError, UsageError
from bridgesampler.nodes.node import Node


def common_tape(inputs):
    """Returns the tape shared by the nodes among inputs.
    """
    tapes = {id(x.tape): x.tape for x in inputs if isinstance(x, Node)}
    if not tapes:
        raise UsageError("An op needs at least one Node input.")
    if len(tapes) > 1:
        raise ConfigurationError("All node inputs of an op must belong to the same tape.")
    return next(iter(tapes.values()))


class Op(ABC):
    """An Op computes a new node from input nodes and records its local derivatives.

    Inheriting classes implement forward, which maps the input values to the output value, and vjp,
    which maps the gradient of the output to the gradient of one input. Inputs which are not nodes
    are lifted to constants of the common tape.
    """

    name = "op"

    def __call__(self, *inputs):
        tape = common_tape(inputs)
        nodes = [tape.lift(x) for x in inputs]
        values = [node.value for node in nodes]
        self.check(*values)
        out = np.asarray(self.forward(*values), dtype=np.float64)
        requires_grad = tape.record and any(node.requires_grad for node in nodes)
        parents = ()
        if requires_grad:
            parents = tuple(
                (node, self._closure(i, out, values)) for i, node in enumerate(nodes) if node.requires_grad
            )
        return Node(out, tape, parents=parents, requires_grad=requires_grad, op_name=self.name)

    def _closure(self, index, out, values):
        def closure(grad):
            return self.vjp(index, grad, out, values)
        return closure

    def check(self, *values):
        """Validates the input values. Raises an exception if they do not fit the op.
        """
        pass

    @abstractmethod
    def forward(self, *values):
        pass

    @abstractmethod
    def vjp(self, index, grad, out, values):
        """Returns the gradient of the input at position index.

        Args:
            index (int): Position of the input.
            grad (numpy.ndarray): Gradient of the output.
            out (numpy.ndarray): Value of the output.
            values (list): Values of all inputs.

        Returns:
            numpy.ndarray: Gradient with the shape of the input.
        """
        pass


def unbroadcast(grad, shape):
    """Sums grad down to shape. Only the scalar-vs-array case ever needs this.
    """
    if grad.shape == shape:
        return grad
    return np.full(shape, np.sum(grad))


class BinaryOp(Op):
    """Abstract elementwise op of two inputs.

    The inputs must have equal shapes, or one of them must be a scalar, which is then broadcast against
    the other. Wider broadcasting is done explicitly with tile_rows and tile_cols.

    Inherits Op class.
    """

    def check(self, a, b):
        if a.ndim == 0 or b.ndim == 0 or a.shape == b.shape:
            return
        raise ConfigurationError(f"{self.name}: shapes {a.shape} and {b.shape} do not conform.")

    def vjp(self, index, grad, out, values):
        a, b = values
        if index == 0:
            return unbroadcast(self.d_left(grad, out, a, b), a.shape)
        return unbroadcast(self.d_right(grad, out, a, b), b.shape)

    @abstractmethod
    def d_left(self, grad, out, a, b):
        pass

    @abstractmethod
    def d_right(self, grad, out, a, b):
        pass


class Addition(BinaryOp):
    name = "add"

    def forward(self, a, b):
        return a + b

    def d_left(self, grad, out, a, b):
        return grad * np.ones_like(b)

    def d_right(self, grad, out, a, b):
        return grad * np.ones_like(a)


class Subtraction(BinaryOp):
    name = "subtract"

    def forward(self, a, b):
        return a - b

    def d_left(self, grad, out, a, b):
        return grad * np.ones_like(b)

    def d_right(self, grad, out, a, b):
        return -grad * np.ones_like(a)


class Multiplication(BinaryOp):
    name = "multiply"

    def forward(self, a, b):
        return a * b

    def d_left(self, grad, out, a, b):
        return grad * b

    def d_right(self, grad, out, a, b):
        return grad * a


class Division(BinaryOp):
    name = "divide"

    def forward(self, a, b):
        return a / b

    def d_left(self, grad, out, a, b):
        return grad / b

    def d_right(self, grad, out, a, b):
        return -grad * out / b


class Maximum(BinaryOp):
    """Elementwise maximum. At ties the whole gradient goes to the first input.

    Inherits BinaryOp class.
    """

    name = "maximum"

    def forward(self, a, b):
        return np.maximum(a, b)

    def d_left(self, grad, out, a, b):
        return grad * (a >= b)

    def d_right(self, grad, out, a, b):
        return grad * (a < b)


class MatMul(Op):
    """Matrix product of one- or two-dimensional inputs.

    Inherits Op class.
    """

    name = "matmul"

    def check(self, a, b):
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise ConfigurationError(f"matmul expects 1-d or 2-d inputs, got {a.ndim}-d and {b.ndim}-d.")
        if a.shape[-1] != b.shape[0]:
            raise ConfigurationError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not match.")

    def forward(self, a, b):
        return a @ b

    def vjp(self, index, grad, out, values):
        a, b = values
        if index == 0:
            if b.ndim == 1:
                return np.outer(grad, b) if a.ndim == 2 else grad * b
            return grad @ b.T
        if a.ndim == 1:
            return np.outer(a, grad) if b.ndim == 2 else grad * a
        return a.T @ grad
