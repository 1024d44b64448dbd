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

import logging
import warnings

import numpy as np
import ot
from scipy.spatial.distance import cdist
from scipy.special import entr, rel_entr

from bridgesampler.bridge import weighted_mean
from bridgesampler.exceptions import ConfigurationError, EstimationError
from bridgesampler.targets import TargetDensity

logger = logging.getLogger(__name__)

SINKHORN_MAX_ITER = 5000
SINKHORN_TOL = 1e-6
MMD_BANDWIDTHS = 100.0 * (10.0 ** (1.0 / 9.0)) ** (np.arange(1, 11) - 5.5)


def elbo(batch):
    """Estimates the evidence lower bound E_q[log p - log q] from a batch of reverse paths.

    Args:
        batch (PathBatch): Paths from the reverse process.

    Returns:
        tuple: The estimate and its standard error.
    """
    if batch.n_valid == 0:
        raise EstimationError(f"None of the {batch.n_paths} paths of the batch is valid.")
    weights = batch.path_weights()
    core = batch.valid_core
    core_mean = weighted_mean(core, weights)
    spread = weighted_mean(np.square(core - core_mean), weights)
    return -(core_mean + batch.energy_shift), np.sqrt(spread / batch.n_valid)


def _check_samples(a, b):
    a, b = np.atleast_2d(np.asarray(a, dtype=np.float64)), np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigurationError("Both sample sets must be non-empty.")
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"Sample sets of dimensions {a.shape[1]} and {b.shape[1]} cannot be compared.")
    return a, b


def entropic_cost(a, b, epsilon):
    """Entropy-regularized transport cost between two uniform empirical measures.

    The cost is <P, M> + epsilon * KL(P || a b^T) for the squared Euclidean cost M and the plan P found by
    log-domain Sinkhorn iterations.

    Returns:
        tuple: The cost and True if the iterations converged.
    """
    cost = ot.dist(a, b)
    weights_a = np.full(a.shape[0], 1.0 / a.shape[0])
    weights_b = np.full(b.shape[0], 1.0 / b.shape[0])
    plan, log = ot.sinkhorn(weights_a, weights_b, cost, epsilon, method="sinkhorn_log",
                            numItermax=SINKHORN_MAX_ITER, stopThr=SINKHORN_TOL, log=True, warn=False)
    value = np.sum(plan * cost) + epsilon * np.sum(rel_entr(plan, np.outer(weights_a, weights_b)))
    return value, bool(log["err"][-1] < SINKHORN_TOL)


def sinkhorn_divergence(samples_a, samples_b, epsilon=None, log=False):
    """Debiased Sinkhorn divergence S(a, b) = OT(a, b) - OT(a, a) / 2 - OT(b, b) / 2.

    Args:
        samples_a (numpy.ndarray): Samples of shape (n, d).
        samples_b (numpy.ndarray): Samples of shape (m, d).
        epsilon (float, optional): Entropic regularization. Defaults to 1e-3 times the mean squared distance
            between the two sets.
        log (bool, optional): Also return a dictionary with the raw cost, epsilon and convergence. Defaults to False.

    Returns:
        float or tuple: The divergence, and the log dictionary if log is True.
    """
    a, b = _check_samples(samples_a, samples_b)
    if epsilon is None:
        epsilon = 1e-3 * np.mean(ot.dist(a, b))
        if epsilon == 0:
            epsilon = 1e-3
    ab, converged_ab = entropic_cost(a, b, epsilon)
    aa, converged_aa = entropic_cost(a, a, epsilon)
    bb, converged_bb = entropic_cost(b, b, epsilon)
    converged = converged_ab and converged_aa and converged_bb
    if not converged:
        warnings.warn(f"Sinkhorn iterations did not converge within {SINKHORN_MAX_ITER} iterations.")
    value = ab - 0.5 * aa - 0.5 * bb
    if log:
        return value, {"cost": ab, "epsilon": epsilon, "converged": converged}
    return value


def mmd(samples_a, samples_b, bandwidths=MMD_BANDWIDTHS):
    """Maximum mean discrepancy with a sum of Gaussian kernels, from the biased V-statistic.

    Args:
        samples_a (numpy.ndarray): Samples of shape (n, d).
        samples_b (numpy.ndarray): Samples of shape (m, d).
        bandwidths (numpy.ndarray, optional): Kernel bandwidths; ten values with mean 100 by default.

    Returns:
        float: The discrepancy.
    """
    a, b = _check_samples(samples_a, samples_b)

    def kernel_mean(x, y):
        distances = cdist(x, y, "sqeuclidean")
        return np.mean(sum(np.exp(-distances / bw ** 2) for bw in bandwidths))

    radicand = kernel_mean(a, a) + kernel_mean(b, b) - 2 * kernel_mean(a, b)
    if radicand < 0:
        warnings.warn(f"Negative MMD radicand {radicand} clamped to 0.")
        radicand = 0.0
    return np.sqrt(radicand)


def assign_modes(samples, modes):
    """Assigns every sample to a mode.

    Args:
        samples (numpy.ndarray): Samples of shape (n, d).
        modes (numpy.ndarray or TargetDensity): Mode locations of shape (M, d), assigned by distance, or a
            target. Mixtures assign by the highest component likelihood, other targets by distance to their modes.

    Returns:
        tuple: Mode index of every sample and the number of modes M.
    """
    samples = np.atleast_2d(samples)
    if isinstance(modes, TargetDensity):
        try:
            likelihoods = modes.component_log_likelihoods(samples)
            return np.argmax(likelihoods, axis=1), likelihoods.shape[1]
        except ConfigurationError:
            if modes.modes is None:
                raise
            modes = modes.modes
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    if modes.shape[0] == 0:
        raise ConfigurationError("The mode list is empty.")
    return np.argmin(cdist(samples, modes, "sqeuclidean"), axis=1), modes.shape[0]


def mode_coverage(frequencies):
    """Entropy of a histogram over M modes in base M, so uniform coverage gives 1 and a single mode 0.
    """
    frequencies = np.asarray(frequencies, dtype=np.float64)
    n_modes = len(frequencies)
    if n_modes == 1:
        return 1.0
    p = frequencies / np.sum(frequencies)
    return np.sum(entr(p)) / np.log(n_modes)


def emc(samples, modes):
    """Entropic mode coverage of samples.

    Args:
        samples (numpy.ndarray): Samples of shape (n, d).
        modes (numpy.ndarray or TargetDensity): As in assign_modes.

    Returns:
        float: A value in [0, 1].
    """
    assignment, n_modes = assign_modes(samples, modes)
    return mode_coverage(np.bincount(assignment, minlength=n_modes))


def reference_baselines(target, n_samples, seed, epsilon=None):
    """Sinkhorn divergence and MMD between two independent sets of exact target samples.

    These are the values a perfect sampler would reach at the same sample count.

    Returns:
        dict: Keys "sinkhorn" and "mmd".
    """
    first = target.sample(n_samples, np.random.RandomState(seed))
    second = target.sample(n_samples, np.random.RandomState(seed + 1))
    return {"sinkhorn": sinkhorn_divergence(first, second, epsilon), "mmd": mmd(first, second)}


def sample_metrics(samples, target, reference, epsilon=None):
    """Computes the sample-based metrics of samples against exact reference samples.

    Returns:
        dict: "sinkhorn", "mmd" and, for targets with modes, "emc"; plus "sinkhorn_converged".
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        divergence, log = sinkhorn_divergence(samples, reference, epsilon, log=True)
    if not log["converged"]:
        logger.warning("Sinkhorn iterations did not converge, the divergence is flagged.")
    result = {"sinkhorn": divergence, "sinkhorn_converged": log["converged"], "mmd": mmd(samples, reference)}
    if target.modes is not None:
        result["emc"] = emc(samples, target)
    return result
