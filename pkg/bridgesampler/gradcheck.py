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

import numpy as np
import pandas as pd

from bridgesampler import ops
from bridgesampler.bridge import (CMCD, DBS, FIXED_FORWARD, BridgeParams, build_bridge, evaluate_batch,
                                  joint_entropy_closed_form, log_transition_forward, log_transition_reverse,
                                  simulate_reverse)
from bridgesampler.enumeration import TwoPointChain, exact_forward_kl, exact_lv, exact_reverse_kl
from bridgesampler.exceptions import ConfigurationError
from bridgesampler.losses import BatchConfig, grad_fkl_nis, grad_lv, grad_rkl_ld, grad_rkl_r, lv_loss_value
from bridgesampler.networks import BetaSchedule, DiffCoeff, LearnablePrior, LinearDrift, ZeroDrift
from bridgesampler.nodes import Tape
from bridgesampler.targets import make_gaussian, make_mos

logger = logging.getLogger(__name__)

STEP = 1e-6
RAW_OP_STEP = 1e-5
RAW_OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4
ENUMERATION_TOLERANCE = 1e-10


def finite_difference(f, x, step=STEP):
    """Central finite-difference gradient of a scalar function.

    Args:
        f (callable): Maps an array shaped like x to a float.
        x (numpy.ndarray): The point.
        step (float, optional): Step size. Defaults to 1e-6.

    Returns:
        numpy.ndarray: The gradient, shaped like x.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        upper = f(x)
        x[index] = original - step
        lower = f(x)
        x[index] = original
        grad[index] = (upper - lower) / (2 * step)
    return grad


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-4)


def perturbed(params, random_state, scale=0.1):
    """Returns a copy of params with Gaussian noise added to every learnable parameter.

    Networks start with a zero output layer, which hides most of their gradient paths.
    """
    params = params.copy()
    params.update({param_id: value + random_state.normal(0, scale, size=value.shape)
                   for param_id, value in params.learnable_values().items()})
    return params


def parameter_fd(objective, values, random_state, n_coords=6, step=STEP):
    """Central differences of objective along a few random coordinates of every parameter.

    Args:
        objective (callable): Maps a mapping of parameter values to a float.
        values (dict): The parameter values to differentiate at.
        random_state (mtrand.RandomState): Picks the coordinates.
        n_coords (int, optional): Coordinates per parameter. Defaults to 6.
        step (float, optional): Step size. Defaults to 1e-6.

    Returns:
        dict: Parameter identifier to the flat indices of the coordinates and their derivatives.
    """
    result = {}
    for param_id, value in values.items():
        coords = random_state.choice(value.size, size=min(n_coords, value.size), replace=False)

        def along(flat):
            trial = dict(values)
            trial[param_id] = flat.reshape(value.shape)
            return objective(trial)

        flat = value.ravel().copy()
        derivatives = []
        for index in coords:
            original = flat[index]
            flat[index] = original + step
            upper = along(flat)
            flat[index] = original - step
            lower = along(flat)
            flat[index] = original
            derivatives.append((upper - lower) / (2 * step))
        result[param_id] = (coords, np.array(derivatives))
    return result


def compare_with_fd(grads, fd):
    """Relative error between autodiff gradients and the coordinates checked by parameter_fd."""
    autodiff = np.concatenate([np.ravel(grads[param_id])[coords] for param_id, (coords, _) in fd.items()])
    numeric = np.concatenate([derivatives for _, derivatives in fd.values()])
    return relative_error(autodiff, numeric)


def _result(suite, check, error, tolerance):
    passed = bool(error <= tolerance)
    if not passed:
        logger.warning(f"{suite}/{check} failed with error {error:.3e} (tolerance {tolerance:.0e})")
    return {"suite": suite, "check": check, "error": float(error), "tolerance": tolerance, "passed": passed}


def check_op(func, x, random_state, step=STEP):
    """Relative error between the autodiff and finite-difference gradients of sum(w * func(x)) for random w.

    Args:
        func (callable): Maps a Node to a Node.
        x (numpy.ndarray): The input.
        random_state (mtrand.RandomState): Draws the weights w.
        step (float, optional): Step size. Defaults to 1e-6.

    Returns:
        float: The relative error.
    """
    tape = Tape()
    leaf = tape.leaf(x, name="x")
    out = func(leaf)
    weights = random_state.normal(size=out.shape)
    grad = tape.backward(ops.sum(out * weights))["x"]

    def f(z):
        trial = Tape(record=False)
        return float(np.sum(func(trial.constant(z)).value * weights))

    return relative_error(grad, finite_difference(f, x, step))


def _away_from(x, points, margin=0.05):
    for point in points:
        x = np.where(np.abs(x - point) < margin, x + 2 * margin, x)
    return x


def raw_op_cases(random_state):
    """Returns (name, func, x) cases covering every op."""
    x = random_state.uniform(-2, 2, size=(4, 3))
    positive = random_state.uniform(0.5, 2, size=(4, 3))
    vector = random_state.normal(size=3)
    matrix = random_state.normal(size=(3, 2))
    other = random_state.normal(size=(4, 3))
    target = make_gaussian([0.5, -1.0, 2.0], [1.0, 0.5, 2.0])
    heavy = make_mos(3, 3, 2.0, seed=0)
    return [
        ("add", lambda n: n + other, x),
        ("subtract", lambda n: other - n, x),
        ("multiply", lambda n: n * n, x),
        ("divide", lambda n: other / n, positive),
        ("maximum", lambda n: ops.maximum(n, other), _away_from(x - other, [0.0]) + other),
        ("matmul", lambda n: n @ matrix, x),
        ("rmatmul", lambda n: matrix.T @ ops.reshape(n, (3, 4)), x),
        ("negative", lambda n: -n, x),
        ("exp", ops.exp, x),
        ("log", ops.log, positive),
        ("tanh", ops.tanh, x),
        ("square", ops.square, x),
        ("sqrt", ops.sqrt, positive),
        ("softplus", ops.softplus, x),
        ("sigmoid", ops.sigmoid, x),
        ("silu", ops.silu, x),
        ("clip", lambda n: ops.clip(n, -1.0, 1.0), _away_from(x, [-1.0, 1.0])),
        ("sum", lambda n: ops.sum(n, axis=0), x),
        ("mean", lambda n: ops.mean(n, axis=1), x),
        ("tile_rows", lambda n: ops.tile_rows(n, 5), vector),
        ("tile_cols", lambda n: ops.tile_cols(n, 5), vector),
        ("getitem", lambda n: n[np.array([0, 2, 2, 1])], x),
        ("reshape", lambda n: ops.reshape(n, (3, 4)), x),
        ("concatenate", lambda n: ops.concatenate([n, ops.square(n)], axis=1), x),
        ("log_density", lambda n: ops.external_log_density(n, target.raw_log_density, target.score), x),
        ("score", lambda n: ops.external_score(n, heavy.score, heavy.hvp), x),
    ]


def suite_raw_ops(seed=0):
    random_state = np.random.RandomState(seed)
    return [_result("fd", f"op:{name}", check_op(func, x, random_state, RAW_OP_STEP), RAW_OP_TOLERANCE)
            for name, func, x in raw_op_cases(random_state)]


def _bridge(parameterization, seed, dim=2, T=4, learn=True):
    random_state = np.random.RandomState(seed)
    learn = learn and parameterization != FIXED_FORWARD
    params = build_bridge(parameterization, dim, T, random_state, sigma_init=0.8, prior_std=1.5,
                          learn_sigma=learn, learn_prior=learn)
    return perturbed(params, random_state)


def _bridge_objective(params, func):
    trial = params.copy()

    def objective(values):
        trial.update(values)
        return func(trial)
    return objective


def check_network(parameterization, seed=0, n_rows=6):
    """Checks the gradient of the drifts of a bridge with respect to its parameters."""
    params = _bridge(parameterization, seed)
    random_state = np.random.RandomState(seed + 1)
    x = random_state.normal(size=(n_rows, params.dim))
    lang = random_state.normal(size=(n_rows, params.dim))
    times = random_state.randint(0, params.T + 1, size=n_rows)
    weights = random_state.normal(size=(2, n_rows, params.dim))

    def drifts(p, tape):
        nodes = p.bind(tape)
        x_node, lang_node = tape.constant(x), tape.constant(lang)
        reverse = p.reverse_drift(nodes, x_node, times, lang_node)
        forward = p.forward_drift(nodes, x_node, times, lang_node)
        return ops.sum(reverse * weights[0]) + ops.sum(forward * weights[1])

    tape = Tape()
    grads = tape.backward(drifts(params, tape))
    fd = parameter_fd(_bridge_objective(params, lambda p: float(drifts(p, Tape(record=False)).value)),
                      params.learnable_values(), random_state)
    return compare_with_fd(grads, fd)


def check_transitions(parameterization, seed=0, n_rows=6):
    """Checks the gradients of the reverse and forward transition log-densities."""
    params = _bridge(parameterization, seed)
    target = make_gaussian(np.zeros(params.dim), 2.0)
    random_state = np.random.RandomState(seed + 2)
    x_from = random_state.normal(size=(n_rows, params.dim))
    x_to = x_from + 0.3 * random_state.normal(size=(n_rows, params.dim))
    t = params.T // 2

    def total(p, nodes=None):
        reverse = log_transition_reverse(p, target, x_from, x_to, t, nodes)
        forward = log_transition_forward(p, target, x_to, x_from, t, nodes)
        return reverse, forward

    tape = Tape()
    reverse, forward = total(params, params.bind(tape))
    grads = tape.backward(ops.sum(reverse) + ops.sum(forward))
    fd = parameter_fd(_bridge_objective(params, lambda p: float(sum(np.sum(v) for v in total(p)))),
                      params.learnable_values(), random_state)
    return compare_with_fd(grads, fd)


def check_lv_loss(parameterization, seed=0, n_paths=32):
    """Checks grad_lv against finite differences of lv_loss_value on a frozen batch."""
    params = _bridge(parameterization, seed)
    target = make_gaussian(np.full(params.dim, 1.0), 1.5)
    batch = simulate_reverse(params, target, n_paths, seed)
    grads = grad_lv(batch, params).gradients()
    fd = parameter_fd(_bridge_objective(params, lambda p: lv_loss_value(evaluate_batch(batch, p))),
                      params.learnable_values(), np.random.RandomState(seed + 3))
    return compare_with_fd(grads, fd)


def check_reparameterized(parameterization, seed=0, n_paths=16):
    """Checks grad_rkl_r against finite differences of the mean log-ratio of the same simulated batch.

    The target is a non-Gaussian mixture, so its score and curvature vary along the paths.
    """
    params = _bridge(parameterization, seed)
    target = make_mos(params.dim, 2, 1.5, seed)
    config = BatchConfig(n_paths=n_paths, seed=seed)
    grads = grad_rkl_r(params, target, config).gradients()

    def objective(p):
        return float(np.mean(simulate_reverse(p, target, config.n_paths, config.seed).log_ratio))

    fd = parameter_fd(_bridge_objective(params, objective), params.learnable_values(),
                      np.random.RandomState(seed + 4))
    return compare_with_fd(grads, fd)


def suite_fd(seed=0):
    """Finite-difference checks of the ops, the drifts, the transitions and the LV loss."""
    results = suite_raw_ops(seed)
    for parameterization in (DBS, CMCD):
        results.append(_result("fd", f"drift:{parameterization}", check_network(parameterization, seed),
                               MODEL_TOLERANCE))
        results.append(_result("fd", f"transition:{parameterization}", check_transitions(parameterization, seed),
                               MODEL_TOLERANCE))
        results.append(_result("fd", f"lv_loss:{parameterization}", check_lv_loss(parameterization, seed),
                               MODEL_TOLERANCE))
    for parameterization in (FIXED_FORWARD, DBS, CMCD):
        results.append(_result("fd", f"rkl_r:{parameterization}", check_reparameterized(parameterization, seed),
                               MODEL_TOLERANCE))
    return results


def _max_difference(a, b):
    if a.keys() != b.keys():
        return np.inf
    return max((np.max(np.abs(a[k] - b[k])) for k in a), default=0.0)


def equivalence_reports(seed=0, n_paths=256, T=16, dim=2):
    """The GradReports the equivalence suite compares, keyed by parameterization.

    Returns:
        dict: Parameterization to the reports "rkl_ld", "lv" and "rkl_ld:shifted", all on the same paths.
    """
    target = make_gaussian(np.linspace(-1.0, 1.0, dim), 1.5)
    reports = {}
    for parameterization in (FIXED_FORWARD, DBS, CMCD):
        params = _bridge(parameterization, seed, dim=dim, T=T)
        batch = simulate_reverse(params, target, n_paths, seed)
        reports[parameterization] = {
            "rkl_ld": grad_rkl_ld(batch, params),
            "lv": grad_lv(batch, params),
            "rkl_ld:shifted": grad_rkl_ld(simulate_reverse(params, target.shifted(123.0), n_paths, seed), params),
        }
    return reports


def suite_equivalence(seed=0, n_paths=256, T=16, dim=2):
    """Exact identities between the estimators on a shared on-policy batch.

    LV with on-policy paths and rKL-LD give bit-identical gradients for a fixed forward process, and
    identical reverse-drift blocks for every parameterization. Shifting the target energy changes neither.
    """
    results = []
    for parameterization, reports in equivalence_reports(seed, n_paths, T, dim).items():
        rkl_ld, lv, shifted = reports["rkl_ld"], reports["lv"], reports["rkl_ld:shifted"]
        if parameterization == FIXED_FORWARD:
            error = 0.0 if rkl_ld.equals(lv) else max(_max_difference(rkl_ld.gradients(), lv.gradients()), 1.0)
            results.append(_result("equivalence", "report:fixed_forward", error, 0.0))
        error = _max_difference(rkl_ld.alpha, lv.alpha)
        results.append(_result("equivalence", f"alpha:{parameterization}", error, 0.0))
        error = max(_max_difference(rkl_ld.gradients(), shifted.gradients()),
                    0.0 if shifted.baseline == rkl_ld.baseline + 123.0 else np.inf)
        results.append(_result("equivalence", f"energy_shift:{parameterization}", error, 0.0))
    return results


def suite_enumeration(seed=0, T=3):
    """Estimators averaged over all paths of a two-point chain against the exact gradients."""
    chain = TwoPointChain([0.3, -0.7], T=T, random_state=np.random.RandomState(seed))
    reverse = chain.enumerate("reverse")
    cases = [
        ("rkl_ld", grad_rkl_ld(reverse, chain), exact_reverse_kl(chain)),
        ("lv:on_policy", grad_lv(reverse, chain, "on_policy"), exact_lv(chain, "reverse")),
        ("lv:forward", grad_lv(chain.enumerate("forward"), chain, "forward"), exact_lv(chain, "forward")),
        ("fkl_nis", grad_fkl_nis(reverse, chain), exact_forward_kl(chain)),
        ("rkl_ld:shifted", grad_rkl_ld(chain.shifted(5.0).enumerate("reverse"), chain), exact_reverse_kl(chain)),
    ]
    results = []
    for name, report, (_, exact) in cases:
        grads = report.gradients()
        keys = sorted(exact)
        error = relative_error(np.concatenate([np.ravel(grads[k]) for k in keys]),
                               np.concatenate([np.ravel(exact[k]) for k in keys]))
        results.append(_result("enumeration", name, error, ENUMERATION_TOLERANCE))
    return results


def entropy_bridge(dim=4, T=8, seed=0):
    """A bridge with an affine reverse drift whose path entropy is known in closed form."""
    random_state = np.random.RandomState(seed)
    reverse = LinearDrift("reverse", dim, slope=random_state.normal(0, 0.5, dim),
                          intercept=random_state.normal(0, 0.5, dim))
    return BridgeParams(FIXED_FORWARD, LearnablePrior(dim, 0.5, 1.3, learnable=False),
                        BetaSchedule(T, learnable=False), DiffCoeff(dim, 0.7, learnable=False),
                        reverse=reverse, forward=ZeroDrift("forward"))


def check_entropy(n_paths=100000, seed=0, dim=4, T=8, pool=None):
    """Compares the closed-form path entropy with a Monte Carlo estimate.

    Returns:
        tuple: The closed form, the estimate and its standard error.
    """
    params = entropy_bridge(dim, T, seed)
    batch = simulate_reverse(params, make_gaussian(np.zeros(dim), 1.0), n_paths, seed, pool=pool, chunk_size=4096)
    log_q = batch.log_q[batch.valid]
    return joint_entropy_closed_form(params), -np.mean(log_q), np.std(log_q) / np.sqrt(len(log_q))


def suite_entropy(seed=0, n_paths=100000):
    closed, estimate, stderr = check_entropy(n_paths, seed)
    return [_result("entropy", "closed_form", abs(closed - estimate) / stderr, 3.0)]


SUITES = {
    "equivalence": suite_equivalence,
    "fd": suite_fd,
    "enumeration": suite_enumeration,
    "entropy": suite_entropy,
}


def run_suite(name=None, seed=0):
    """Runs one suite, or all of them when name is None.

    Returns:
        pandas.DataFrame: One row per check with its error, tolerance and outcome.
    """
    if name is None:
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ConfigurationError(f"Unknown suite '{name}', expected one of {sorted(SUITES)}.")
    results = []
    for suite in names:
        logger.info(f"Running the {suite} suite")
        results.extend(SUITES[suite](seed=seed))
    return pd.DataFrame(results)
