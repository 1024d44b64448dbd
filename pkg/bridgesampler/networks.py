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

from bridgesampler import ops
from bridgesampler.exceptions import ConfigurationError
from bridgesampler.nodes import Tape

EMBEDDING_SIZE = 64
HIDDEN_SIZE = 64
LANGEVIN_CLIP = 1e2
CONTROL_CLIP = 1e4
LOG_2PI = np.log(2 * np.pi)


def time_embedding(times, T, size=EMBEDDING_SIZE):
    """Returns sinusoidal features of t / T for every step index in times.

    Args:
        times (array_like): Step indices.
        T (int): Number of steps.
        size (int, optional): Number of features, half sines and half cosines. Defaults to 64.

    Returns:
        numpy.ndarray: Array of shape (len(times), size).
    """
    s = np.asarray(times, dtype=np.float64) / T
    frequencies = np.geomspace(1.0, 1000.0, size // 2)
    angles = s[:, None] * frequencies[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class Component(ABC):
    """Component is the superclass of the parameterized parts of a bridge.

    A component owns the current values of its parameters. When evaluated it does not read them directly
    but resolves the identifiers of its parameters against a mapping of nodes, so the same component can
    run on a recording tape (parameters as leaves) or on a plain evaluation tape (parameters as constants).
    """

    def __init__(self, name, learnable=True):
        """
        Args:
            name (str): Prefix of the identifiers of the parameters.
            learnable (bool, optional): Whether the parameters are trained. Defaults to True.
        """
        self.name = name
        self.learnable = learnable
        self.parameters = {}

    def param_id(self, key):
        return f"{self.name}.{key}"

    def named_parameters(self):
        return {self.param_id(key): value for key, value in self.parameters.items()}

    def set_parameters(self, values):
        """Replaces the parameters whose identifiers appear in values.
        """
        for key in self.parameters:
            param_id = self.param_id(key)
            if param_id in values:
                value = np.array(values[param_id], dtype=np.float64)
                if value.shape != self.parameters[key].shape:
                    raise ConfigurationError(f"Parameter '{param_id}' has shape {self.parameters[key].shape}, "
                                             f"got {value.shape}.")
                self.parameters[key] = value

    def resolve(self, nodes, key):
        param_id = self.param_id(key)
        try:
            return nodes[param_id]
        except KeyError as e:
            message = "The parameter mapping does not contain a parameter "\
                      f"with the identifier '{param_id}', which is expected by "\
                      f"the component {self}."
            raise ConfigurationError(message) from e

    def bind(self, tape):
        return {
            param_id: tape.leaf(value, requires_grad=self.learnable, name=param_id)
            for param_id, value in self.named_parameters().items()
        }

    def evaluate(self, method, *args):
        """Calls method with the parameters bound to a non-recording tape and returns the value.
        """
        tape = Tape(record=False)
        out = method(self.bind(tape), *[tape.constant(a) for a in args])
        return out.value

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Drift(Component):
    """Abstract drift term of one direction of the bridge.
    """

    @abstractmethod
    def drift(self, nodes, x, times, langevin, sigma):
        """Returns the drift at the rows of x.

        Args:
            nodes (dict): Parameter nodes by identifier.
            x (Node): States of shape (M, N).
            times (numpy.ndarray): Step index of every row.
            langevin (Node): Score of the annealed density at every row, shape (M, N).
            sigma (Node): Diffusion coefficients tiled to shape (M, N).

        Returns:
            Node: Drift of shape (M, N).
        """
        pass


def _glorot(fan_in, fan_out, random_state):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return random_state.uniform(-limit, limit, size=(fan_in, fan_out))


class ScoreNet(Drift):
    """Learned score s(x, t) = clip(trunk(x, t) + head(t) * clip(langevin, -1e2, 1e2), -1e4, 1e4).

    The trunk sees the state together with a sinusoidal time embedding, the head sees the time embedding
    only. Both are MLPs with two hidden layers of sigmoid-weighted linear units, and the last layer of both
    starts at zero, so the initial score is exactly zero. As a drift the score is scaled by sigma.
    """

    def __init__(self, name, dim, T, random_state, hidden=HIDDEN_SIZE, embedding=EMBEDDING_SIZE, learnable=True):
        """
        Args:
            name (str): Prefix of the parameter identifiers.
            dim (int): State dimension N.
            T (int): Number of steps.
            random_state (mtrand.RandomState): Random state for the weight initialization.
            hidden (int, optional): Hidden units per layer. Defaults to 64.
            embedding (int, optional): Size of the time embedding. Defaults to 64.
            learnable (bool, optional): Whether the weights are trained. Defaults to True.
        """
        super().__init__(name, learnable)
        self.dim = dim
        self.T = T
        self.embedding = embedding
        self._init_mlp("trunk", [dim + embedding, hidden, hidden, dim], random_state)
        self._init_mlp("head", [embedding, hidden, hidden, dim], random_state)

    def _init_mlp(self, prefix, sizes, random_state):
        n_layers = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == n_layers - 1
            self.parameters[f"{prefix}.w{i}"] = np.zeros((fan_in, fan_out)) if last else \
                _glorot(fan_in, fan_out, random_state)
            self.parameters[f"{prefix}.b{i}"] = np.zeros(fan_out)

    def _mlp(self, nodes, prefix, h):
        n_rows = h.shape[0]
        i = 0
        while f"{prefix}.w{i}" in self.parameters:
            if i > 0:
                h = ops.silu(h)
            weight = self.resolve(nodes, f"{prefix}.w{i}")
            bias = self.resolve(nodes, f"{prefix}.b{i}")
            h = h @ weight + ops.tile_rows(bias, n_rows)
            i += 1
        return h

    def forward(self, nodes, x, times, langevin):
        """Evaluates the clipped score at the rows of x.

        Args:
            nodes (dict): Parameter nodes by identifier.
            x (Node): States of shape (M, N).
            times (numpy.ndarray): Step index of every row.
            langevin (Node): Langevin score of every row, shape (M, N).

        Returns:
            Node: The score, of shape (M, N).
        """
        tape = x.tape
        times = np.asarray(times)
        features = tape.constant(time_embedding(times, self.T, self.embedding))
        trunk = self._mlp(nodes, "trunk", ops.concatenate([x, features], axis=1))
        steps, inverse = np.unique(times, return_inverse=True)
        head = self._mlp(nodes, "head", tape.constant(time_embedding(steps, self.T, self.embedding)))
        guided = head[inverse.ravel()] * ops.clip(langevin, -LANGEVIN_CLIP, LANGEVIN_CLIP)
        return ops.clip(trunk + guided, -CONTROL_CLIP, CONTROL_CLIP)

    def drift(self, nodes, x, times, langevin, sigma):
        return sigma * self.forward(nodes, x, times, langevin)


class LinearDrift(Drift):
    """Affine drift slope * x + intercept, constant in time.
    """

    def __init__(self, name, dim, slope=0.0, intercept=0.0, learnable=True):
        super().__init__(name, learnable)
        self.parameters["slope"] = np.broadcast_to(np.asarray(slope, dtype=np.float64), (dim,)).copy()
        self.parameters["intercept"] = np.broadcast_to(np.asarray(intercept, dtype=np.float64), (dim,)).copy()

    def drift(self, nodes, x, times, langevin, sigma):
        n_rows = x.shape[0]
        slope = ops.tile_rows(self.resolve(nodes, "slope"), n_rows)
        return x * slope + ops.tile_rows(self.resolve(nodes, "intercept"), n_rows)


class ZeroDrift(Drift):
    def __init__(self, name):
        super().__init__(name, learnable=False)

    def drift(self, nodes, x, times, langevin, sigma):
        return x.tape.constant(np.zeros(x.shape))


class LearnablePrior(Component):
    """Diagonal Gaussian prior N(mean, diag(exp(log_std))^2) the reverse process starts from.
    """

    def __init__(self, dim, mean=0.0, std=1.0, learnable=True, name="prior"):
        super().__init__(name, learnable)
        if np.any(np.asarray(std) <= 0):
            raise ConfigurationError(f"The prior standard deviation must be positive, got {std}.")
        self.dim = dim
        self.parameters["mean"] = np.broadcast_to(np.asarray(mean, dtype=np.float64), (dim,)).copy()
        self.parameters["log_std"] = np.log(np.broadcast_to(np.asarray(std, dtype=np.float64), (dim,)))

    def log_density_node(self, nodes, x):
        n_rows = x.shape[0]
        mean = ops.tile_rows(self.resolve(nodes, "mean"), n_rows)
        log_std = self.resolve(nodes, "log_std")
        z = (x - mean) * ops.tile_rows(ops.exp(-log_std), n_rows)
        return -0.5 * ops.sum(ops.square(z), axis=1) - ops.sum(log_std) - 0.5 * self.dim * LOG_2PI

    def score_node(self, nodes, x):
        n_rows = x.shape[0]
        precision = ops.exp(-2.0 * self.resolve(nodes, "log_std"))
        return (ops.tile_rows(self.resolve(nodes, "mean"), n_rows) - x) * ops.tile_rows(precision, n_rows)

    def sample_node(self, nodes, eps):
        n_rows = eps.shape[0]
        std = ops.exp(self.resolve(nodes, "log_std"))
        return ops.tile_rows(self.resolve(nodes, "mean"), n_rows) + ops.tile_rows(std, n_rows) * eps

    def entropy_node(self, nodes):
        return ops.sum(self.resolve(nodes, "log_std")) + 0.5 * self.dim * (1.0 + LOG_2PI)

    def log_density(self, x):
        return self.evaluate(self.log_density_node, np.atleast_2d(x))

    def score(self, x):
        return self.evaluate(self.score_node, np.atleast_2d(x))

    def sample(self, eps):
        """Maps standard normal noise of shape (n, N) to prior samples.
        """
        return self.evaluate(self.sample_node, np.atleast_2d(eps))

    def entropy(self):
        return float(self.evaluate(self.entropy_node))


class BetaSchedule(Component):
    """Interpolation weights beta(t) = softplus(theta_t) / sum_s softplus(theta_s) for t = 0, ..., T-1.

    The annealing exponent is eta(t) = sum_{s >= t} beta(s), which decreases from eta(0) = 1 (target)
    to eta(T) = 0 (prior).
    """

    def __init__(self, T, learnable=True, name="schedule"):
        super().__init__(name, learnable)
        self.T = T
        self.parameters["raw"] = np.zeros(T)
        self._upper = np.triu(np.ones((T + 1, T)))

    def beta_node(self, nodes):
        weights = ops.softplus(self.resolve(nodes, "raw"))
        return weights / ops.sum(weights)

    def eta_node(self, nodes):
        beta = self.beta_node(nodes)
        return beta.tape.constant(self._upper) @ beta

    def beta(self):
        return self.evaluate(self.beta_node)

    def eta(self):
        return self.evaluate(self.eta_node)


class DiffCoeff(Component):
    """Diffusion coefficients sigma = exp(gamma), one per dimension and constant in time.
    """

    def __init__(self, dim, sigma_init, learnable=True, name="diffusion"):
        super().__init__(name, learnable)
        if np.any(np.asarray(sigma_init) <= 0):
            raise ConfigurationError(f"Diffusion coefficients must be positive, got {sigma_init}.")
        self.parameters["log_sigma"] = np.log(np.broadcast_to(np.asarray(sigma_init, dtype=np.float64), (dim,)))

    def log_sigma_node(self, nodes):
        return self.resolve(nodes, "log_sigma")

    def sigma_node(self, nodes):
        return ops.exp(self.log_sigma_node(nodes))

    def sigma(self):
        return self.evaluate(self.sigma_node)


def score_forward(net, x, t, langevin):
    """Evaluates a ScoreNet at the rows of x, all at step t, without recording gradients.

    Args:
        net (ScoreNet): The network.
        x (numpy.ndarray): States of shape (M, N).
        t (int): Step index.
        langevin (numpy.ndarray): Langevin scores of shape (M, N).

    Returns:
        numpy.ndarray: The score of shape (M, N).
    """
    x = np.atleast_2d(x)
    times = np.full(x.shape[0], t)
    tape = Tape(record=False)
    return net.forward(net.bind(tape), tape.constant(x), times, tape.constant(np.atleast_2d(langevin))).value


def anneal_logdensity(target, prior, eta, x):
    """Returns log pi_t(x) = eta * log rho(x) + (1 - eta) * log pi_T(x) and its score.

    Args:
        target (TargetDensity): The target rho.
        prior (LearnablePrior): The prior pi_T.
        eta (float): Interpolation value in [0, 1].
        x (numpy.ndarray): Points of shape (n, N).

    Returns:
        tuple: Log-densities of shape (n,) and scores of shape (n, N).
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"The interpolation value must lie in [0, 1], got {eta}.")
    x = np.atleast_2d(x)
    if eta == 1.0:
        return target.log_density(x), target.score(x)
    if eta == 0.0:
        return prior.log_density(x), prior.score(x)
    value = eta * target.log_density(x) + (1 - eta) * prior.log_density(x)
    return value, eta * target.score(x) + (1 - eta) * prior.score(x)


def parameters_to_json(values):
    """Converts a mapping of parameter arrays to a JSON-compatible mapping of shapes and flat value lists.
    """
    return {name: {"shape": list(value.shape), "values": value.ravel().tolist()} for name, value in values.items()}


def parameters_from_json(obj):
    try:
        return {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]) for name, entry in obj.items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError("Malformed parameter entry in checkpoint.") from e
