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

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from bridgesampler import ops
from bridgesampler.bridge import (DEFAULT_CHUNK_SIZE, chunk_ranges, map_chunks, reparameterized_log_terms,
                                  simulate_reverse, weighted_mean)
from bridgesampler.exceptions import ConfigurationError, EstimationError, UsageError
from bridgesampler.nodes import Tape

logger = logging.getLogger(__name__)

PROPOSALS = {"on_policy": "reverse", "forward": "forward"}


@dataclass
class GradReport:
    """Gradient blocks of an estimator together with diagnostics of the batch it was computed from.
    """
    estimator: str
    alpha: dict
    phi: dict
    nu: dict
    baseline: float
    log_ratio_mean: float
    log_ratio_var: float
    n_paths: int
    n_invalid: int
    ess: float = None

    def gradients(self):
        """Returns all blocks merged into one mapping keyed by parameter identifier."""
        return {**self.alpha, **self.phi, **self.nu}

    def equals(self, other):
        """True if both reports hold bit-identical gradients and diagnostics, regardless of the estimator name.
        """
        for mine, theirs in zip((self.alpha, self.phi, self.nu), (other.alpha, other.phi, other.nu)):
            if mine.keys() != theirs.keys():
                return False
            if not all(np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        scalars = ("baseline", "log_ratio_mean", "log_ratio_var", "n_paths", "n_invalid")
        return all(getattr(self, name) == getattr(other, name) for name in scalars)

    def to_json(self):
        def listify(block):
            return {k: np.asarray(v).tolist() for k, v in block.items()}

        obj = asdict(self)
        for name in ("alpha", "phi", "nu"):
            obj[name] = listify(getattr(self, name))
        return json.dumps(obj)


@dataclass
class BatchConfig:
    """How the reparameterized estimator simulates its batch."""
    n_paths: int
    seed: int
    stream: int = 0
    chunk_size: int = DEFAULT_CHUNK_SIZE


def _centered(batch, use_baseline=True):
    if batch.n_valid == 0:
        raise EstimationError(f"None of the {batch.n_paths} paths of the batch is valid.")
    weights = batch.path_weights()
    core = batch.valid_core
    core_mean = weighted_mean(core, weights)
    if use_baseline:
        return weights, core, core_mean, core - core_mean
    return weights, core, core_mean, core + batch.energy_shift


def _report(estimator, batch, weights, core, core_mean, alpha, phi, nu):
    return GradReport(
        estimator=estimator,
        alpha=alpha,
        phi=phi,
        nu=nu,
        baseline=core_mean + batch.energy_shift,
        log_ratio_mean=core_mean + batch.energy_shift,
        log_ratio_var=weighted_mean(np.square(core - core_mean), weights),
        n_paths=batch.n_paths,
        n_invalid=batch.n_invalid,
    )


def grad_rkl_ld(batch, params, use_baseline=True, pool=None):
    """Estimates the gradient of the reverse KL divergence with the log-derivative trick.

    The paths are treated as constants. The centered log-ratio (log-ratio minus its batch mean) weights
    the score of the reverse process; without the baseline the raw log-ratio is used.

    Args:
        batch (PathBatch): Paths from the reverse process under params.
        params (BridgeParams): The parameters the batch was simulated with.
        use_baseline (bool, optional): Subtract the batch mean of the log-ratio. Defaults to True.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the per-chunk gradients. Defaults to None.

    Returns:
        GradReport: The gradient blocks.
    """
    if batch.proposal != "reverse":
        raise UsageError(f"The rKL-LD estimator needs paths from the reverse process, got '{batch.proposal}'.")
    weights, core, core_mean, centered = _centered(batch, use_baseline)
    coeffs = batch.coefficient_weights()
    gq, gp = batch.backprop(params, coeffs * centered, coeffs, pool)
    alpha = {k: gq[k] for k in params.alpha}
    phi = {k: -gp[k] for k in params.phi}
    nu = {k: gq[k] - gp[k] for k in params.nu}
    return _report("rkl_ld", batch, weights, core, core_mean, alpha, phi, nu)


def grad_lv(batch, params, proposal="on_policy", pool=None):
    """Estimates the gradient of half the variance of the log-ratio under a frozen proposal.

    Args:
        batch (PathBatch): Paths from the proposal.
        params (BridgeParams): The parameters to differentiate with respect to.
        proposal (str, optional): "on_policy" for paths from the reverse process, "forward" for paths from
            the forward process started at exact target samples. Defaults to "on_policy".
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the per-chunk gradients. Defaults to None.

    Returns:
        GradReport: The gradient blocks.
    """
    try:
        expected = PROPOSALS[proposal]
    except KeyError as e:
        raise UsageError(f"Unknown proposal '{proposal}', expected one of {sorted(PROPOSALS)}.") from e
    if batch.proposal != expected:
        raise UsageError(f"The proposal '{proposal}' needs paths from the {expected} process, "
                         f"got '{batch.proposal}'.")
    weights, core, core_mean, centered = _centered(batch)
    coeffs = batch.coefficient_weights() * centered
    gq, gp = batch.backprop(params, coeffs, coeffs, pool)
    alpha = {k: gq[k] for k in params.alpha}
    phi = {k: -gp[k] for k in params.phi}
    nu = {k: gq[k] - gp[k] for k in params.nu}
    return _report("lv", batch, weights, core, core_mean, alpha, phi, nu)


def lv_loss_value(batch):
    """Half the population variance of the log-ratio over the valid paths.
    """
    weights, core, core_mean, centered = _centered(batch)
    return 0.5 * weighted_mean(np.square(centered), weights)


def importance_weights(batch):
    """Self-normalized importance weights proportional to p / q over the valid paths.
    """
    if batch.n_valid == 0:
        raise EstimationError(f"None of the {batch.n_paths} paths of the batch is valid.")
    core = batch.valid_core
    with np.errstate(all="ignore"):
        unnormalized = batch.coefficient_weights() * np.exp(-(core - np.min(core)))
        total = np.sum(unnormalized)
        weights = unnormalized / total
    if not np.isfinite(total) or total == 0 or not np.all(np.isfinite(weights)):
        raise EstimationError("The importance weights are all zero or not finite.")
    return weights


def grad_fkl_nis(batch, params, use_baseline=True, pool=None):
    """Estimates the gradient of the forward KL divergence with self-normalized importance weights.

    Args:
        batch (PathBatch): Paths from the reverse process under params.
        params (BridgeParams): The parameters the batch was simulated with.
        use_baseline (bool, optional): Subtract the weighted mean of the log-ratio. Defaults to True.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the per-chunk gradients. Defaults to None.

    Returns:
        GradReport: The gradient blocks, with the effective sample size of the weights.
    """
    if batch.proposal != "reverse":
        raise UsageError(f"The fKL-NIS estimator needs paths from the reverse process, got '{batch.proposal}'.")
    weights = importance_weights(batch)
    core = batch.valid_core
    nis_mean = np.dot(weights, core)
    centered = core - nis_mean if use_baseline else core + batch.energy_shift
    gq, gp = batch.backprop(params, weights, weights * centered, pool)
    alpha = {k: -gq[k] for k in params.alpha}
    phi = {k: -gp[k] for k in params.phi}
    nu = {k: -gp[k] - gq[k] for k in params.nu}
    ess = 1.0 / np.sum(np.square(weights))
    report = GradReport(
        estimator="fkl_nis",
        alpha=alpha,
        phi=phi,
        nu=nu,
        baseline=nis_mean + batch.energy_shift,
        log_ratio_mean=nis_mean + batch.energy_shift,
        log_ratio_var=np.dot(weights, np.square(core - nis_mean)),
        n_paths=batch.n_paths,
        n_invalid=batch.n_invalid,
        ess=ess,
    )
    logger.debug(f"fKL-NIS effective sample size {ess:.1f} of {batch.n_valid}")
    return report


def _rkl_r_chunk(params, target, eps, n_valid):
    tape = Tape()
    nodes = params.bind(tape)
    terms = reparameterized_log_terms(params, nodes, target, eps)
    loss = ops.sum(terms["log_q"] - terms["log_p"]) / n_valid
    return tape.backward(loss, reset=True)


def grad_rkl_r(params, target, batch_config, pool=None):
    """Estimates the gradient of the reverse KL divergence by differentiating through the simulated paths.

    The batch is first simulated without recording to find the valid paths, whose noise is then replayed
    on recording tapes.

    Args:
        params (BridgeParams): The bridge.
        target (TargetDensity): The target, which must provide a score and a Hessian-vector product.
        batch_config (BatchConfig): Size, seed and chunking of the batch.
        pool (multiprocessing.pool.ThreadPool, optional): Pool for the per-chunk gradients. Defaults to None.

    Returns:
        GradReport: The gradient blocks.
    """
    if not all(callable(getattr(target, method, None)) for method in ("score", "hvp")):
        raise ConfigurationError(f"The reparameterized estimator needs the score and hvp of the target {target}.")
    batch = simulate_reverse(params, target, batch_config.n_paths, batch_config.seed, batch_config.stream,
                             pool=pool, chunk_size=batch_config.chunk_size)
    weights, core, core_mean, _ = _centered(batch)
    eps = batch.noises[batch.valid]
    n_valid = batch.n_valid
    items = [eps[chunk.start:chunk.stop] for chunk in chunk_ranges(n_valid, batch_config.chunk_size)]
    results = map_chunks(lambda e: _rkl_r_chunk(params, target, e, n_valid), items, pool)
    grads = dict(results[0])
    for chunk_grads in results[1:]:
        for key, value in chunk_grads.items():
            grads[key] = grads[key] + value
    alpha, phi, nu = params.split(grads)
    return _report("rkl_r", batch, weights, core, core_mean, alpha, phi, nu)


def divergence_diagnostics(batch, log_z=None):
    """Estimates the reverse KL, forward KL and Jeffrey divergences between the path measures.

    The reverse and forward KL need the normalizing constant of the target; the Jeffrey divergence does not.

    Args:
        batch (PathBatch): Paths from the reverse process.
        log_z (float, optional): Log normalizing constant of the (shifted) target. Defaults to None.

    Returns:
        dict: Keys "rkl", "fkl", "jeffrey" and "ess"; the KL values are None without log_z.
    """
    weights, core, core_mean, _ = _centered(batch)
    nis = importance_weights(batch)
    nis_mean = np.dot(nis, core)
    rkl = fkl = None
    if log_z is not None:
        rkl = core_mean + batch.energy_shift + log_z
        fkl = -(nis_mean + batch.energy_shift) - log_z
    return {"rkl": rkl, "fkl": fkl, "jeffrey": core_mean - nis_mean, "ess": 1.0 / np.sum(np.square(nis))}
