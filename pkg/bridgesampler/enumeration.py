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

import copy
import itertools

import numpy as np
from scipy.special import logsumexp

from bridgesampler import ops
from bridgesampler.bridge import PathBatch
from bridgesampler.exceptions import ConfigurationError
from bridgesampler.nodes import Tape


def log_kernel(x, logit):
    """log P(X = x) for X in {-1, +1} with P(X = +1) = sigmoid(logit)."""
    return -ops.softplus(-(x * logit))


class TwoPointChain:
    """A bridge on the state space {-1, +1} whose paths can be enumerated exhaustively.

    The reverse process starts from P(X_T = +1) = sigmoid(kappa) and steps with
    P(X_{t-1} = +1 | X_t) = sigmoid(alpha_t + coupling_t X_t); the forward process starts from the target
    exp(-E(x)) / Z and steps with P(X_t = +1 | X_{t-1}) = sigmoid(phi_t + coupling_t X_{t-1}). The offsets
    alpha and phi belong to one direction each, while the couplings and kappa are shared.
    """

    def __init__(self, energies, T=3, random_state=None, scale=0.5):
        """
        Args:
            energies (array_like): Energies of the states -1 and +1.
            T (int, optional): Number of steps. Defaults to 3.
            random_state (mtrand.RandomState, optional): Draws the initial parameters; all zero if None.
                Defaults to None.
            scale (float, optional): Standard deviation of the initial parameters. Defaults to 0.5.
        """
        self.energies = np.asarray(energies, dtype=np.float64)
        if self.energies.shape != (2,):
            raise ConfigurationError(f"A two-point chain needs two energies, got {self.energies.shape}.")
        if T < 1:
            raise ConfigurationError(f"A chain needs at least one step, got T = {T}.")
        self.T = T
        self.energy_shift = 0.0

        def draw(shape):
            return np.zeros(shape) if random_state is None else random_state.normal(0, scale, size=shape)

        self.parameters = {
            "alpha": draw(T),
            "phi": draw(T),
            "nu.coupling": draw(T),
            "nu.prior": draw(1),
        }
        self.alpha = ("alpha",)
        self.phi = ("phi",)
        self.nu = ("nu.coupling", "nu.prior")

    @property
    def learnable_ids(self):
        return self.alpha + self.phi + self.nu

    def values(self):
        return dict(self.parameters)

    def learnable_values(self):
        return self.values()

    def update(self, values):
        for key in self.parameters:
            if key in values:
                self.parameters[key] = np.array(values[key], dtype=np.float64)

    def copy(self):
        return copy.deepcopy(self)

    def shifted(self, c):
        chain = self.copy()
        chain.energy_shift = self.energy_shift + c
        return chain

    def bind(self, tape):
        return {key: tape.leaf(value, name=key) for key, value in self.parameters.items()}

    def split(self, grads):
        return tuple({k: grads[k] for k in block} for block in (self.alpha, self.phi, self.nu))

    @property
    def log_z(self):
        return logsumexp(-self.energies) - self.energy_shift

    def paths(self):
        """All 2^(T+1) paths as rows (x_0, ..., x_T)."""
        return np.array(list(itertools.product([-1.0, 1.0], repeat=self.T + 1)))

    def raw_log_target(self, x0):
        return -self.energies[(x0 > 0).astype(int)]

    def log_densities_node(self, nodes, paths):
        """Returns log q and the unshifted log p of every path as nodes.
        """
        n_paths = paths.shape[0]
        lower, upper = paths[:, :-1], paths[:, 1:]
        coupling = ops.tile_rows(nodes["nu.coupling"], n_paths)
        q_steps = log_kernel(lower, ops.tile_rows(nodes["alpha"], n_paths) + coupling * upper)
        p_steps = log_kernel(upper, ops.tile_rows(nodes["phi"], n_paths) + coupling * lower)
        kappa = nodes["nu.prior"][np.zeros(n_paths, dtype=int)]
        log_q = log_kernel(paths[:, -1], kappa) + ops.sum(q_steps, axis=1)
        log_p = self.raw_log_target(paths[:, 0]) + ops.sum(p_steps, axis=1)
        return log_q, log_p

    def enumerate(self, proposal="reverse"):
        """Returns the batch of all paths, weighted by their probabilities under the proposal.

        Args:
            proposal (str, optional): "reverse" weights by q, "forward" by the normalized p. Defaults to "reverse".

        Returns:
            EnumeratedBatch: The batch.
        """
        paths = self.paths()
        log_q, log_p = (node.value for node in self.log_densities_node(self.bind(Tape(record=False)), paths))
        if proposal == "reverse":
            weights = np.exp(log_q)
        elif proposal == "forward":
            weights = np.exp(log_p - logsumexp(-self.energies))
        else:
            raise ConfigurationError(f"Unknown proposal '{proposal}'.")
        return EnumeratedBatch(paths, log_q, log_p, weights, self.energy_shift, proposal)


class EnumeratedBatch(PathBatch):
    """All paths of a TwoPointChain with their exact proposal probabilities as weights.

    Inherits PathBatch class.
    """

    def __init__(self, paths, log_q, log_p_core, weights, energy_shift, proposal):
        super().__init__(log_q, log_p_core, np.ones(len(paths), dtype=bool), energy_shift=energy_shift,
                         weights=weights, proposal=proposal)
        self.paths = paths

    def backprop(self, params, q_coeffs, p_coeffs, pool=None):
        tape = Tape()
        log_q, log_p = params.log_densities_node(params.bind(tape), self.paths)
        gq = tape.backward(ops.sum(log_q * q_coeffs), reset=True)
        gp = tape.backward(ops.sum(log_p * p_coeffs), reset=True)
        return gq, gp


def _exact(chain, objective):
    tape = Tape()
    nodes = chain.bind(tape)
    log_q, log_p = chain.log_densities_node(nodes, chain.paths())
    value = objective(log_q, log_p - chain.energy_shift)
    return float(value.value), tape.backward(value, reset=True)


def exact_reverse_kl(chain):
    """KL(q || p / Z) over all paths and its exact gradient.

    Returns:
        tuple: The value and the gradients by parameter identifier.
    """
    def objective(log_q, log_p):
        return ops.sum(ops.exp(log_q) * (log_q - log_p)) + chain.log_z
    return _exact(chain, objective)


def exact_forward_kl(chain):
    """KL(p / Z || q) over all paths and its exact gradient."""
    def objective(log_q, log_p):
        log_p_normalized = log_p - chain.log_z
        return ops.sum(ops.exp(log_p_normalized) * (log_p_normalized - log_q))
    return _exact(chain, objective)


def exact_lv(chain, proposal="reverse"):
    """Half the variance of the log-ratio under the current proposal, which is held fixed, and its gradient.
    """
    weights = chain.enumerate(proposal).weights

    def objective(log_q, log_p):
        log_ratio = log_q - log_p
        mean = ops.sum(log_ratio * weights)
        return 0.5 * ops.sum(ops.square(log_ratio - mean) * weights)
    return _exact(chain, objective)
