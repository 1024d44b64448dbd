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
from scipy.special import expit

from bridgesampler.exceptions import ConfigurationError, DomainError
from bridgesampler.ops.op import Op, common_tape


class UnaryOp(Op):
    """Abstract elementwise op of a single input whose derivative depends on the input and the output.

    Inherits Op class.
    """

    def vjp(self, index, grad, out, values):
        return grad * self.derivative(values[0], out)

    def derivative(self, x, out):
        raise NotImplementedError


class Negative(UnaryOp):
    name = "negative"

    def forward(self, x):
        return -x

    def derivative(self, x, out):
        return -np.ones_like(x)


class Exp(UnaryOp):
    name = "exp"

    def forward(self, x):
        return np.exp(x)

    def derivative(self, x, out):
        return out


class Log(UnaryOp):
    name = "log"

    def check(self, x):
        if np.any(x < 0):
            raise DomainError("log of a negative input.")

    def forward(self, x):
        with np.errstate(divide="ignore"):
            return np.log(x)

    def derivative(self, x, out):
        return 1 / x


class Tanh(UnaryOp):
    name = "tanh"

    def forward(self, x):
        return np.tanh(x)

    def derivative(self, x, out):
        return 1 - out ** 2


class Square(UnaryOp):
    name = "square"

    def forward(self, x):
        return x * x

    def derivative(self, x, out):
        return 2 * x


class Sqrt(UnaryOp):
    name = "sqrt"

    def check(self, x):
        if np.any(x < 0):
            raise DomainError("sqrt of a negative input.")

    def forward(self, x):
        return np.sqrt(x)

    def derivative(self, x, out):
        return 0.5 / out


class Softplus(UnaryOp):
    name = "softplus"

    def forward(self, x):
        return np.logaddexp(0, x)

    def derivative(self, x, out):
        return expit(x)


class Sigmoid(UnaryOp):
    name = "sigmoid"

    def forward(self, x):
        return expit(x)

    def derivative(self, x, out):
        return out * (1 - out)


class Clip(UnaryOp):
    """Clips the input to [low, high].

    The derivative is 1 strictly inside the interval and 0 elsewhere, boundaries included.

    Inherits UnaryOp class.
    """

    name = "clip"

    def __init__(self, low, high):
        """
        Args:
            low (float): Lower end of the interval.
            high (float): Upper end of the interval.
        """
        self.low = low
        self.high = high

    def forward(self, x):
        return np.clip(x, self.low, self.high)

    def derivative(self, x, out):
        return ((x > self.low) & (x < self.high)).astype(np.float64)


class Sum(Op):
    name = "sum"

    def __init__(self, axis=None):
        self.axis = axis

    def forward(self, x):
        return np.sum(x, axis=self.axis)

    def vjp(self, index, grad, out, values):
        x = values[0]
        if self.axis is None:
            return np.full(x.shape, grad)
        return np.broadcast_to(np.expand_dims(grad, self.axis), x.shape).copy()


class Mean(Sum):
    name = "mean"

    def forward(self, x):
        return np.mean(x, axis=self.axis)

    def vjp(self, index, grad, out, values):
        x = values[0]
        count = x.size if self.axis is None else x.shape[self.axis]
        return super().vjp(index, grad, out, values) / count


class Concatenate(Op):
    name = "concatenate"

    def __init__(self, axis=0):
        self.axis = axis

    def check(self, *values):
        shapes = [v.shape for v in values]
        ndims = {len(shape) for shape in shapes}
        if len(ndims) != 1 or not 0 <= self.axis < ndims.pop():
            raise ConfigurationError(f"concatenate: shapes {shapes} do not conform along axis {self.axis}.")
        others = {shape[:self.axis] + shape[self.axis + 1:] for shape in shapes}
        if len(others) != 1:
            raise ConfigurationError(f"concatenate: shapes {shapes} do not conform along axis {self.axis}.")

    def forward(self, *values):
        return np.concatenate(values, axis=self.axis)

    def vjp(self, index, grad, out, values):
        offsets = np.cumsum([0] + [v.shape[self.axis] for v in values])
        return np.take(grad, np.arange(offsets[index], offsets[index + 1]), axis=self.axis)


class GetItem(Op):
    """Slicing and integer-array indexing. Repeated indices accumulate their gradients.

    Inherits Op class.
    """

    name = "getitem"

    def __init__(self, index):
        self.index = index

    def forward(self, x):
        return np.array(x[self.index])

    def vjp(self, index, grad, out, values):
        result = np.zeros_like(values[0])
        np.add.at(result, self.index, grad)
        return result


class TileRows(Op):
    """Stacks n copies of a vector as the rows of a matrix.

    Inherits Op class.
    """

    name = "tile_rows"

    def __init__(self, n):
        self.n = n

    def check(self, x):
        if x.ndim != 1:
            raise ConfigurationError(f"tile_rows expects a vector, got shape {x.shape}.")

    def forward(self, x):
        return np.tile(x, (self.n, 1))

    def vjp(self, index, grad, out, values):
        return np.sum(grad, axis=0)


class TileCols(Op):
    """Stacks n copies of a vector as the columns of a matrix.

    Inherits Op class.
    """

    name = "tile_cols"

    def __init__(self, n):
        self.n = n

    def check(self, x):
        if x.ndim != 1:
            raise ConfigurationError(f"tile_cols expects a vector, got shape {x.shape}.")

    def forward(self, x):
        return np.repeat(x[:, None], self.n, axis=1)

    def vjp(self, index, grad, out, values):
        return np.sum(grad, axis=1)


class Reshape(Op):
    name = "reshape"

    def __init__(self, shape):
        self.shape = shape

    def check(self, x):
        if int(np.prod(self.shape)) != x.size:
            raise ConfigurationError(f"Cannot reshape {x.shape} to {self.shape}.")

    def forward(self, x):
        return np.reshape(x, self.shape)

    def vjp(self, index, grad, out, values):
        return np.reshape(grad, values[0].shape)


class ExternalLogDensity(Op):
    """Evaluates an externally defined log-density row by row.

    The local derivative is the score supplied with it, so a density which is not built from ops can
    still terminate a differentiable path.

    Inherits Op class.
    """

    name = "log_density"

    def __init__(self, log_density, score):
        """
        Args:
            log_density (callable): Maps an (n, d) array to the (n,) log-densities.
            score (callable): Maps an (n, d) array to the (n, d) gradients of the log-density.
        """
        self.log_density = log_density
        self.score = score

    def check(self, x):
        if x.ndim != 2:
            raise ConfigurationError(f"log_density expects an (n, d) input, got shape {x.shape}.")

    def forward(self, x):
        return self.log_density(x)

    def vjp(self, index, grad, out, values):
        return grad[:, None] * self.score(values[0])


class ExternalScore(Op):
    """Evaluates the score of an externally defined log-density row by row.

    The local derivative is the Hessian of the log-density, supplied as a Hessian-vector product. The
    Hessian is symmetric, so the same product maps output gradients to input gradients.

    Inherits Op class.
    """

    name = "score"

    def __init__(self, score, hvp):
        """
        Args:
            score (callable): Maps an (n, d) array to the (n, d) gradients of the log-density.
            hvp (callable): Maps (x, v), both of shape (n, d), to the rows of H(x) v.
        """
        self.score = score
        self.hvp = hvp

    def check(self, x):
        if x.ndim != 2:
            raise ConfigurationError(f"score expects an (n, d) input, got shape {x.shape}.")

    def forward(self, x):
        return self.score(x)

    def vjp(self, index, grad, out, values):
        return self.hvp(values[0], grad)


def negative(x):
    return Negative()(x)


def exp(x):
    return Exp()(x)


def log(x):
    return Log()(x)


def tanh(x):
    return Tanh()(x)


def square(x):
    return Square()(x)


def sqrt(x):
    return Sqrt()(x)


def softplus(x):
    return Softplus()(x)


def sigmoid(x):
    return Sigmoid()(x)


def silu(x):
    """The sigmoid-weighted linear unit x * sigmoid(x).
    """
    return x * sigmoid(x)


def clip(x, low, high):
    return Clip(low, high)(x)


def sum(x, axis=None):
    return Sum(axis)(x)


def mean(x, axis=None):
    return Mean(axis)(x)


def concatenate(nodes, axis=0):
    common_tape(nodes)
    return Concatenate(axis)(*nodes)


def getitem(x, index):
    return GetItem(index)(x)


def tile_rows(x, n):
    return TileRows(n)(x)


def tile_cols(x, n):
    return TileCols(n)(x)


def reshape(x, shape):
    return Reshape(tuple(shape))(x)


def external_log_density(x, log_density, score):
    return ExternalLogDensity(log_density, score)(x)


def external_score(x, score, hvp):
    return ExternalScore(score, hvp)(x)
