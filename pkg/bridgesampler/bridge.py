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
import logging
from abc import ABC, abstractmethod
from functools import partial

import numpy as np
import pandas as pd

from bridgesampler import ops
from bridgesampler.exceptions import ConfigurationError
from bridgesampler.networks import BetaSchedule, DiffCoeff, LearnablePrior, ScoreNet, ZeroDrift
from bridgesampler.noise import PhiloxNoise
from bridgesampler.nodes import Tape

logger = logging.getLogger(__name__)

DBS = "dbs"
CMCD = "cmcd"
FIXED_FORWARD = "fixed_forward"
PARAMETERIZATIONS = (DBS, CMCD, FIXED_FORWARD)

DEFAULT_CHUNK_SIZE = 64


class BridgeParams:
    """The parameters of a bridge, partitioned into reverse-only (alpha), forward-only (phi) and shared (nu) blocks.

    DBS has separate reverse and forward drift networks and a fixed interpolation schedule. CMCD shares
    one control network between both directions around an annealed Langevin reference drift, so all of
    its learnable parameters are shared. FIXED_FORWARD learns the reverse drift only.
    """

    def __init__(self, parameterization, prior, schedule, diffusion, reverse=None, forward=None, control=None,
                 dt=None):
        """
        Args:
            parameterization (str): One of "dbs", "cmcd" and "fixed_forward".
            prior (LearnablePrior): The prior pi_T.
            schedule (BetaSchedule): The interpolation schedule.
            diffusion (DiffCoeff): The diffusion coefficients.
            reverse (Drift, optional): Reverse drift (DBS, FIXED_FORWARD). Defaults to None.
            forward (Drift, optional): Forward drift (DBS, FIXED_FORWARD). Defaults to None.
            control (ScoreNet, optional): Shared control network (CMCD). Defaults to None.
            dt (float, optional): Step size. Defaults to 1 / T.
        """
        if parameterization not in PARAMETERIZATIONS:
            raise ConfigurationError(f"Unknown parameterization '{parameterization}', "
                                     f"expected one of {PARAMETERIZATIONS}.")
        self.parameterization = parameterization
        self.prior = prior
        self.schedule = schedule
        self.diffusion = diffusion
        self.reverse = reverse
        self.forward = forward
        self.control = control
        self.T = schedule.T
        self.dim = prior.dim
        self.dt = 1.0 / self.T if dt is None else float(dt)
        if self.T < 1:
            raise ConfigurationError(f"A bridge needs at least one step, got T = {self.T}.")
        if self.dt <= 0:
            raise ConfigurationError(f"The step size must be positive, got {self.dt}.")
        self._check_components()
        self.alpha, self.phi, self.nu = self._blocks()

    def _check_components(self):
        if self.parameterization == CMCD:
            if self.control is None or self.reverse is not None or self.forward is not None:
                raise ConfigurationError("CMCD takes a shared control network and no separate drifts.")
            return
        if self.reverse is None or self.forward is None or self.control is not None:
            raise ConfigurationError(f"{self.parameterization} takes a reverse and a forward drift.")
        if self.schedule.learnable:
            raise ConfigurationError(f"The interpolation schedule is not learned for {self.parameterization}.")
        if self.parameterization == FIXED_FORWARD:
            if self.forward.learnable:
                raise ConfigurationError("FIXED_FORWARD needs a fixed forward drift.")
            if self.prior.learnable or self.diffusion.learnable:
                raise ConfigurationError("FIXED_FORWARD has no learnable shared parameters.")

    def _blocks(self):
        def ids(component):
            if component is None or not component.learnable:
                return []
            return list(component.named_parameters())

        shared = ids(self.control) + ids(self.schedule) + ids(self.prior) + ids(self.diffusion)
        return tuple(ids(self.reverse)), tuple(ids(self.forward)), tuple(shared)

    @property
    def components(self):
        parts = [self.reverse, self.forward, self.control, self.prior, self.schedule, self.diffusion]
        return [c for c in parts if c is not None]

    @property
    def learnable_ids(self):
        return self.alpha + self.phi + self.nu

    def values(self):
        """Returns the current values of all parameters, learnable or not, by identifier.
        """
        values = {}
        for component in self.components:
            values.update(component.named_parameters())
        return values

    def learnable_values(self):
        values = self.values()
        return {param_id: values[param_id] for param_id in self.learnable_ids}

    def update(self, values):
        for component in self.components:
            component.set_parameters(values)

    def copy(self):
        return copy.deepcopy(self)

    def bind(self, tape):
        nodes = {}
        for component in self.components:
            nodes.update(component.bind(tape))
        return nodes

    def split(self, grads):
        """Splits a gradient mapping into the alpha, phi and nu blocks.
        """
        return tuple({param_id: grads[param_id] for param_id in block} for block in (self.alpha, self.phi, self.nu))

    def sigma_rows(self, nodes, n_rows):
        return ops.tile_rows(self.diffusion.sigma_node(nodes), n_rows)

    def langevin(self, nodes, x, times, target_scores):
        """Returns the score of the annealed density pi_t = rho^eta(t) pi_T^(1 - eta(t)) at the rows of x.

        The target scores are either a constant array or a node, as in the reparameterized pass.
        """
        eta = ops.tile_cols(self.schedule.eta_node(nodes)[times], self.dim)
        return eta * target_scores + (1.0 - eta) * self.prior.score_node(nodes, x)

    def _reference(self, nodes, lang):
        half_variance = 0.5 * ops.square(self.diffusion.sigma_node(nodes))
        return ops.tile_rows(half_variance, lang.shape[0]) * lang

    def reverse_drift(self, nodes, x, times, lang):
        sigma = self.sigma_rows(nodes, x.shape[0])
        if self.parameterization == CMCD:
            return self._reference(nodes, lang) + self.control.drift(nodes, x, times, lang, sigma)
        return self.reverse.drift(nodes, x, times, lang, sigma)

    def forward_drift(self, nodes, x, times, lang):
        sigma = self.sigma_rows(nodes, x.shape[0])
        if self.parameterization == CMCD:
            return self._reference(nodes, lang) - self.control.drift(nodes, x, times, lang, sigma)
        return self.forward.drift(nodes, x, times, lang, sigma)

    def transition_log_density(self, nodes, x, mean):
        """Diagonal Gaussian log-density of the rows of x around mean with variance sigma^2 dt.
        """
        n_rows = x.shape[0]
        log_sigma = self.diffusion.log_sigma_node(nodes)
        variance = ops.tile_rows(ops.exp(2.0 * log_sigma) * self.dt, n_rows)
        quadratic = ops.sum(ops.square(x - mean) / variance, axis=1)
        return -0.5 * quadratic - ops.sum(log_sigma) - 0.5 * self.dim * np.log(2 * np.pi * self.dt)

    def __repr__(self):
        return f"BridgeParams({self.parameterization}, dim={self.dim}, T={self.T})"


def build_bridge(parameterization, dim, T, random_state, sigma_init=1.0, prior_mean=0.0, prior_std=1.0,
                 learn_sigma=False, learn_prior=False, dt=None):
    """Builds a bridge with score networks for the learned drifts.

    Args:
        parameterization (str): One of "dbs", "cmcd" and "fixed_forward".
        dim (int): State dimension.
        T (int): Number of steps.
        random_state (mtrand.RandomState): Random state for the network initialization.
        sigma_init (float, optional): Initial diffusion coefficient. Defaults to 1.0.
        prior_mean (float, optional): Initial prior mean. Defaults to 0.0.
        prior_std (float, optional): Initial prior standard deviation. Defaults to 1.0.
        learn_sigma (bool, optional): Learn the diffusion coefficients. Defaults to False.
        learn_prior (bool, optional): Learn the prior. Defaults to False.
        dt (float, optional): Step size. Defaults to 1 / T.

    Returns:
        BridgeParams: The bridge.
    """
    prior = LearnablePrior(dim, prior_mean, prior_std, learnable=learn_prior)
    diffusion = DiffCoeff(dim, sigma_init, learnable=learn_sigma)
    if parameterization == CMCD:
        control = ScoreNet("control", dim, T, random_state)
        return BridgeParams(CMCD, prior, BetaSchedule(T, learnable=True), diffusion, control=control, dt=dt)
    reverse = ScoreNet("reverse", dim, T, random_state)
    if parameterization == DBS:
        forward = ScoreNet("forward", dim, T, random_state)
    else:
        forward = ZeroDrift("forward")
    return BridgeParams(parameterization, prior, BetaSchedule(T, learnable=False), diffusion,
                        reverse=reverse, forward=forward, dt=dt)


def weighted_mean(values, weights):
    """Mean of values, weighted by normalized weights if they are given.
    """
    if weights is None:
        return np.mean(values)
    return np.dot(weights, values)


def map_chunks(func, items, pool=None):
    """Maps func over items in order, on the pool if one is given.
    """
    if pool is None:
        return [func(item) for item in items]
    return pool.map(func, items)


def chunk_ranges(n, chunk_size):
    if chunk_size < 1:
        raise ConfigurationError(f"The chunk size must be positive, got {chunk_size}.")
    return [range(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def step_major(states):
    """Reorders states of shape (B, T+1, N) into rows t * B + b."""
    return np.transpose(states, (1, 0, 2)).reshape(-1, states.shape[2])


def path_log_densities(params, nodes, rows, target_scores, log_target):
    """Evaluates the joint log-densities of paths given as step-major rows.

    This is the single place where transition log-densities are computed: simulation, recomputation of
    frozen batches, gradients and the reparameterized pass all go through it.

    Args:
        params (BridgeParams): The bridge.
        nodes (dict): Parameter nodes bound to the tape of rows.
        rows (Node): States of shape ((T+1) * B, N); row t * B + b holds X_t of path b.
        target_scores (numpy.ndarray or Node): Target scores at the rows, shape ((T+1) * B, N).
        log_target (Node): Unshifted target log-densities at X_0, shape (B,).

    Returns:
        dict: Nodes "log_prior" (B,), "q_steps" and "p_steps" (T * B,), "log_q" and "log_p" (B,). Step k of
        "q_steps" is log q(X_k | X_{k+1}) and step k of "p_steps" is log p(X_{k+1} | X_k).
    """
    T = params.T
    n_paths = rows.shape[0] // (T + 1)
    times = np.repeat(np.arange(T + 1), n_paths)
    lang = params.langevin(nodes, rows, times, target_scores)
    upper, lower = rows[n_paths:], rows[:-n_paths]
    upper_lang, lower_lang = lang[n_paths:], lang[:-n_paths]

    reverse = params.reverse_drift(nodes, upper, times[n_paths:], upper_lang)
    forward = params.forward_drift(nodes, lower, times[:-n_paths], lower_lang)
    q_steps = params.transition_log_density(nodes, lower, upper + reverse * params.dt)
    p_steps = params.transition_log_density(nodes, upper, lower + forward * params.dt)

    log_prior = params.prior.log_density_node(nodes, rows[T * n_paths:])
    log_q = log_prior + ops.sum(ops.reshape(q_steps, (T, n_paths)), axis=0)
    log_p = log_target + ops.sum(ops.reshape(p_steps, (T, n_paths)), axis=0)
    return {"log_prior": log_prior, "q_steps": q_steps, "p_steps": p_steps, "log_q": log_q, "log_p": log_p}


class PathBatch(ABC):
    """PathBatch is the superclass of batches of paths the gradient estimators work on.

    A batch keeps the log-ratio of every path apart from the constant energy shift of the target: the
    core log q - log p is computed with the unshifted target log-density, and log_ratio = core + shift.
    Invalid paths are kept in the arrays but ignored by every estimator.
    """

    def __init__(self, log_q, log_p_core, valid, energy_shift=0.0, weights=None, proposal="reverse"):
        """
        Args:
            log_q (numpy.ndarray): Joint log-densities under the reverse process.
            log_p_core (numpy.ndarray): Joint log-densities under the forward process with the unshifted target.
            valid (numpy.ndarray): Boolean validity mask.
            energy_shift (float, optional): Energy shift of the target. Defaults to 0.0.
            weights (numpy.ndarray, optional): Probabilities of the paths under the proposal. None means an
                i.i.d. sample. Defaults to None.
            proposal (str, optional): "reverse" for paths from q, "forward" for paths from p. Defaults to "reverse".
        """
        self.log_q = log_q
        self.log_p_core = log_p_core
        self.valid = valid
        self.energy_shift = energy_shift
        self.weights = weights
        self.proposal = proposal

    @property
    def log_p(self):
        return self.log_p_core - self.energy_shift

    @property
    def core(self):
        return self.log_q - self.log_p_core

    @property
    def log_ratio(self):
        return self.core + self.energy_shift

    @property
    def n_paths(self):
        return len(self.valid)

    @property
    def n_valid(self):
        return int(np.sum(self.valid))

    @property
    def n_invalid(self):
        return self.n_paths - self.n_valid

    @property
    def valid_core(self):
        return self.core[self.valid]

    def path_weights(self):
        """Normalized weights of the valid paths, or None for an i.i.d. batch.
        """
        if self.weights is None:
            return None
        weights = self.weights[self.valid]
        return weights / np.sum(weights)

    def coefficient_weights(self):
        weights = self.path_weights()
        if weights is None:
            return np.full(self.n_valid, 1.0 / self.n_valid)
        return weights

    @abstractmethod
    def backprop(self, params, q_coeffs, p_coeffs, pool=None):
        """Returns the gradients of sum(q_coeffs * log q) and sum(p_coeffs * log p) over the valid paths.

        The paths are treated as constants.

        Args:
            params (BridgeParams or compatible): Parameters to differentiate with respect to.
            q_coeffs (numpy.ndarray): One coefficient per valid path.
            p_coeffs (numpy.ndarray): One coefficient per valid path.
            pool (multiprocessing.pool.ThreadPool, optional): Pool the chunks are mapped on. Defaults to None.

        Returns:
            tuple: Two dictionaries of gradients keyed by learnable parameter identifier.
        """
        pass


class TrajectoryBatch(PathBatch):
    """A batch of simulated bridge paths.

    Inherits PathBatch class.
    """

    def __init__(self, states, noises, target_scores, log_target, log_prior, log_q_steps, log_p_steps,
                 log_q, log_p_core, valid, energy_shift, proposal, dt, chunk_size):
        """
        Args:
            states (numpy.ndarray): States of shape (B, T+1, N), X_0 first.
            noises (numpy.ndarray): Noises of shape (B, T+1, N). For reverse paths noise 0 draws X_T from the
                prior and noise t drives the step from X_t to X_{t-1}; for forward paths noise t drives the step
                from X_{t-1} to X_t.
            target_scores (numpy.ndarray): Target scores at the states, shape (B, T+1, N).
            log_target (numpy.ndarray): Unshifted target log-densities at X_0.
            log_prior (numpy.ndarray): Prior log-densities at X_T.
            log_q_steps (numpy.ndarray): Shape (B, T); column k holds log q(X_k | X_{k+1}).
            log_p_steps (numpy.ndarray): Shape (B, T); column k holds log p(X_{k+1} | X_k).
            log_q (numpy.ndarray): Joint reverse log-densities.
            log_p_core (numpy.ndarray): Joint forward log-densities with the unshifted target.
            valid (numpy.ndarray): Validity mask.
            energy_shift (float): Energy shift of the target.
            proposal (str): "reverse" or "forward".
            dt (float): Step size.
            chunk_size (int): Number of paths evaluated together.
        """
        super().__init__(log_q, log_p_core, valid, energy_shift=energy_shift, proposal=proposal)
        self.states = states
        self.noises = noises
        self.target_scores = target_scores
        self.log_target = log_target
        self.log_prior = log_prior
        self.log_q_steps = log_q_steps
        self.log_p_steps = log_p_steps
        self.dt = dt
        self.chunk_size = chunk_size

    @property
    def T(self):
        return self.states.shape[1] - 1

    @property
    def samples(self):
        """The X_0 of the valid paths."""
        return self.states[self.valid, 0]

    def _chunk_terms(self, params, tape, indices):
        indices = np.asarray(indices)
        nodes = params.bind(tape)
        rows = tape.constant(step_major(self.states[indices]))
        scores = step_major(self.target_scores[indices])
        terms = path_log_densities(params, nodes, rows, scores, tape.constant(self.log_target[indices]))
        return nodes, terms

    def _backprop_chunk(self, params, item):
        indices, q_coeffs, p_coeffs = item
        tape = Tape()
        _, terms = self._chunk_terms(params, tape, indices)
        gq = tape.backward(ops.sum(terms["log_q"] * q_coeffs), reset=True)
        gp = tape.backward(ops.sum(terms["log_p"] * p_coeffs), reset=True)
        return gq, gp

    def backprop(self, params, q_coeffs, p_coeffs, pool=None):
        valid_indices = np.flatnonzero(self.valid)
        items = []
        for chunk in chunk_ranges(len(valid_indices), self.chunk_size):
            selection = slice(chunk.start, chunk.stop)
            items.append((valid_indices[selection], q_coeffs[selection], p_coeffs[selection]))
        results = map_chunks(partial(self._backprop_chunk, params), items, pool)
        gq, gp = _reduce([r[0] for r in results]), _reduce([r[1] for r in results])
        empty = {param_id: np.zeros_like(value) for param_id, value in params.learnable_values().items()}
        return gq or dict(empty), gp or dict(empty)

    def frozen_loss_terms(self, params, tape):
        """Returns log q and log p of the valid paths as nodes of tape, with the paths held fixed.
        """
        indices = np.flatnonzero(self.valid)
        nodes, terms = self._chunk_terms(params, tape, indices)
        return nodes, terms["log_q"], terms["log_p"] - self.energy_shift


def _reduce(dicts):
    if not dicts:
        return None
    total = dict(dicts[0])
    for grads in dicts[1:]:
        for key, value in grads.items():
            total[key] = total[key] + value
    return total


def _simulate_chunk(params, target, noise, direction, seed, stream, paths):
    T, N, dt = params.T, params.dim, params.dt
    n_paths = len(paths)
    eps = noise.normal(paths, (T + 1, N))
    states = np.empty((n_paths, T + 1, N))
    scores = np.empty((n_paths, T + 1, N))
    tape = Tape(record=False)
    nodes = params.bind(tape)
    scale = params.diffusion.sigma_node(nodes).value * np.sqrt(dt)

    with np.errstate(all="ignore"):
        if direction == "reverse":
            x = params.prior.sample_node(nodes, tape.constant(eps[:, 0])).value
            steps = range(T, 0, -1)
            next_index = -1
        else:
            random_state = np.random.RandomState([seed, stream, paths.start])
            x = np.asarray(target.sample(n_paths, random_state), dtype=np.float64)
            steps = range(0, T)
            next_index = 1
        for t in steps:
            states[:, t] = x
            scores[:, t] = target.score(x)
            times = np.full(n_paths, t)
            x_node = tape.constant(x)
            lang = params.langevin(nodes, x_node, times, scores[:, t])
            if direction == "reverse":
                drift = params.reverse_drift(nodes, x_node, times, lang).value
                x = x + drift * dt + scale * eps[:, t]
            else:
                drift = params.forward_drift(nodes, x_node, times, lang).value
                x = x + drift * dt + scale * eps[:, t + 1]
        last = t + next_index
        states[:, last] = x
        scores[:, last] = target.score(x)
        log_target = target.raw_log_density(states[:, 0])
        rows = tape.constant(step_major(states))
        terms = path_log_densities(params, nodes, rows, step_major(scores), tape.constant(log_target))
    return states, eps, scores, log_target, terms


def _collect(params, energy_shift, chunks, proposal, chunk_size):
    states = np.concatenate([c[0] for c in chunks])
    n_paths = states.shape[0]
    T = params.T

    def column(name):
        return np.concatenate([c[4][name].value for c in chunks])

    def steps(name):
        return np.concatenate([c[4][name].value.reshape(T, -1).T for c in chunks])

    log_q, log_p_core = column("log_q"), column("log_p")
    valid = np.isfinite(states).reshape(n_paths, -1).all(axis=1) & np.isfinite(log_q) & np.isfinite(log_p_core)
    if not valid.all():
        logger.warning(f"{n_paths - int(valid.sum())} of {n_paths} paths are invalid and will be ignored.")
    return TrajectoryBatch(
        states=states,
        noises=np.concatenate([c[1] for c in chunks]),
        target_scores=np.concatenate([c[2] for c in chunks]),
        log_target=np.concatenate([c[3] for c in chunks]),
        log_prior=column("log_prior"),
        log_q_steps=steps("q_steps"),
        log_p_steps=steps("p_steps"),
        log_q=log_q,
        log_p_core=log_p_core,
        valid=valid,
        energy_shift=energy_shift,
        proposal=proposal,
        dt=params.dt,
        chunk_size=chunk_size,
    )


def _check_target(params, target):
    if target.dim != params.dim:
        raise ConfigurationError(f"The target has dimension {target.dim}, the bridge {params.dim}.")


def simulate_reverse(params, target, n_paths, seed, stream=0, pool=None, chunk_size=DEFAULT_CHUNK_SIZE, noise=None):
    """Simulates paths of the reverse process from the prior to the target with Euler-Maruyama steps.

    The paths are split into chunks of fixed size which are simulated independently, on the pool if one
    is given. Every path draws its noise from its own counter-based stream, so the batch only depends on
    seed and stream.

    Args:
        params (BridgeParams): The bridge.
        target (TargetDensity): The target.
        n_paths (int): Number of paths.
        seed (int): Seed of the run.
        stream (int, optional): Identifier of the batch within the run. Defaults to 0.
        pool (multiprocessing.pool.ThreadPool, optional): Pool the chunks are mapped on. Defaults to None.
        chunk_size (int, optional): Paths per chunk. Defaults to 64.
        noise (NoiseStream, optional): Replaces the Philox stream, e.g. to replay stored noise. Defaults to None.

    Returns:
        TrajectoryBatch: The simulated paths.
    """
    _check_target(params, target)
    noise = PhiloxNoise(seed, stream) if noise is None else noise
    func = partial(_simulate_chunk, params, target, noise, "reverse", seed, stream)
    chunks = map_chunks(func, chunk_ranges(n_paths, chunk_size), pool)
    return _collect(params, target.energy_shift, chunks, "reverse", chunk_size)


def simulate_forward(params, target, n_paths, seed, stream=0, pool=None, chunk_size=DEFAULT_CHUNK_SIZE):
    """Simulates paths of the forward process starting from exact target samples.

    Args:
        params (BridgeParams): The bridge.
        target (TargetDensity): A target with an exact sampler.
        n_paths (int): Number of paths.
        seed (int): Seed of the run.
        stream (int, optional): Identifier of the batch within the run. Defaults to 0.
        pool (multiprocessing.pool.ThreadPool, optional): Pool the chunks are mapped on. Defaults to None.
        chunk_size (int, optional): Paths per chunk. Defaults to 64.

    Returns:
        TrajectoryBatch: The paths, tagged with the "forward" proposal.
    """
    _check_target(params, target)
    if not target.has_sampler:
        raise ConfigurationError(f"Forward paths need exact samples, but {target.name} has no sampler.")
    func = partial(_simulate_chunk, params, target, PhiloxNoise(seed, stream), "forward", seed, stream)
    chunks = map_chunks(func, chunk_ranges(n_paths, chunk_size), pool)
    return _collect(params, target.energy_shift, chunks, "forward", chunk_size)


def _evaluate_chunk(params, batch, indices):
    tape = Tape(record=False)
    _, terms = batch._chunk_terms(params, tape, indices)
    indices = np.asarray(indices)
    return (batch.states[indices], batch.noises[indices], batch.target_scores[indices], batch.log_target[indices],
            terms)


def evaluate_batch(batch, params, pool=None):
    """Recomputes all log-densities of a frozen batch under params.

    Returns:
        TrajectoryBatch: A batch with the same paths and recomputed log-densities.
    """
    chunks = map_chunks(partial(_evaluate_chunk, params, batch), chunk_ranges(batch.n_paths, batch.chunk_size), pool)
    return _collect(params, batch.energy_shift, chunks, batch.proposal, batch.chunk_size)


def reparameterized_log_terms(params, nodes, target, eps):
    """Simulates reverse paths on the tape of nodes, so that the states depend on the parameters.

    The target log-density at X_0 enters through the external log-density op and the target scores inside
    the drifts through the external score op, so both are differentiated through the states.

    Args:
        params (BridgeParams): The bridge.
        nodes (dict): Parameter nodes on a recording tape.
        target (TargetDensity): The target.
        eps (numpy.ndarray): Noise of shape (B, T+1, N), laid out as in TrajectoryBatch.

    Returns:
        dict: The nodes returned by path_log_densities.
    """
    T, dt = params.T, params.dt
    tape = next(iter(nodes.values())).tape
    n_paths = eps.shape[0]
    scale = params.sigma_rows(nodes, n_paths) * np.sqrt(dt)
    x = params.prior.sample_node(nodes, tape.constant(eps[:, 0]))
    states = [None] * (T + 1)
    scores = [None] * (T + 1)
    for t in range(T, 0, -1):
        states[t] = x
        scores[t] = ops.external_score(x, target.score, target.hvp)
        times = np.full(n_paths, t)
        lang = params.langevin(nodes, x, times, scores[t])
        x = x + params.reverse_drift(nodes, x, times, lang) * dt + scale * eps[:, t]
    states[0] = x
    scores[0] = ops.external_score(x, target.score, target.hvp)
    log_target = ops.external_log_density(x, target.raw_log_density, target.score)
    rows = ops.concatenate(states, axis=0)
    return path_log_densities(params, nodes, rows, ops.concatenate(scores, axis=0), log_target)


def log_transition_reverse(params, target, x_t, x_prev, t, nodes=None):
    """Log-density of the reverse step from x_t at step t to x_prev, row by row.

    Args:
        params (BridgeParams): The bridge.
        target (TargetDensity): The target, whose score enters the Langevin terms.
        x_t (numpy.ndarray): States at step t, shape (n, N).
        x_prev (numpy.ndarray): States at step t - 1, shape (n, N).
        t (int): Step index in 1, ..., T.
        nodes (dict, optional): Parameter nodes. If given the result is a node of their tape. Defaults to None.

    Returns:
        numpy.ndarray or Node: Log-densities of shape (n,).
    """
    return _transition(params, target, x_t, x_prev, t, nodes, reverse=True)


def log_transition_forward(params, target, x_prev, x_t, t, nodes=None):
    """Log-density of the forward step from x_prev at step t - 1 to x_t, row by row.
    """
    return _transition(params, target, x_prev, x_t, t - 1, nodes, reverse=False)


def _transition(params, target, x_from, x_to, t, nodes, reverse):
    if not 0 <= t <= params.T:
        raise ConfigurationError(f"Step index {t} outside 0, ..., {params.T}.")
    value_only = nodes is None
    if value_only:
        nodes = params.bind(Tape(record=False))
    tape = next(iter(nodes.values())).tape
    x_from, x_to = tape.lift(np.atleast_2d(x_from)), tape.lift(np.atleast_2d(x_to))
    times = np.full(x_from.shape[0], t)
    lang = params.langevin(nodes, x_from, times, target.score(x_from.value))
    drift = params.reverse_drift if reverse else params.forward_drift
    out = params.transition_log_density(nodes, x_to, x_from + drift(nodes, x_from, times, lang) * params.dt)
    return out.value if value_only else out


def log_ratio(batch):
    """Returns log q(X_{0:T}) - log p(X_{0:T}) per path, with the unnormalized target in p.
    """
    return batch.log_ratio


def joint_entropy_closed_form(params):
    """Entropy of the reverse process on whole paths: H(pi_T) + T/2 (N + sum_i log(2 pi sigma_i^2 dt)).
    """
    sigma = params.diffusion.sigma()
    per_step = params.dim + np.sum(np.log(2 * np.pi * np.square(sigma) * params.dt))
    return params.prior.entropy() + 0.5 * params.T * per_step


def dump_trajectories(path, batch):
    """Writes the paths of a batch to a CSV file with one row per path and step.
    """
    n_paths, n_steps, dim = batch.states.shape
    df = pd.DataFrame(batch.states.reshape(-1, dim), columns=[f"x{i}" for i in range(dim)])
    df.insert(0, "t", np.tile(np.arange(n_steps), n_paths))
    df.insert(0, "path", np.repeat(np.arange(n_paths), n_steps))
    df["valid"] = np.repeat(batch.valid, n_steps)
    df.to_csv(path, index=False)
    return path
