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
from dataclasses import dataclass, field

import numpy as np

from bridgesampler.exceptions import ConfigurationError
from bridgesampler.networks import parameters_from_json, parameters_to_json

logger = logging.getLogger(__name__)

BETAS = (0.9, 0.999)
EPS = 1e-8
MAX_GRAD_NORM = 1.0
FINAL_LR_FRACTION = 0.1


@dataclass
class OptimizerState:
    """Moment estimates and counters of the rectified Adam optimizer.

    Attributes:
        step (int): Number of applied updates.
        m (dict): First moments by parameter identifier.
        v (dict): Second moments by parameter identifier.
        skipped (int): Number of skipped updates.
        consecutive_skips (int): Number of skipped updates since the last applied one.
    """
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0
    consecutive_skips: int = 0

    def to_json(self):
        return {
            "step": self.step,
            "m": parameters_to_json(self.m),
            "v": parameters_to_json(self.v),
            "skipped": self.skipped,
            "consecutive_skips": self.consecutive_skips,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(step=int(obj["step"]), m=parameters_from_json(obj["m"]), v=parameters_from_json(obj["v"]),
                       skipped=int(obj["skipped"]), consecutive_skips=int(obj["consecutive_skips"]))
        except KeyError as e:
            raise ConfigurationError(f"Optimizer state is missing the key {e}.") from e


def global_norm(grads):
    return np.sqrt(sum(np.sum(np.square(g)) for g in grads.values()))


def clip_by_global_norm(grads, max_norm=MAX_GRAD_NORM):
    """Scales all gradients by a common factor so that their joint Euclidean norm is at most max_norm.

    Returns:
        tuple: The clipped gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {param_id: g * scale for param_id, g in grads.items()}, norm


def _learning_rate(lr, param_id):
    if isinstance(lr, dict):
        try:
            return lr[param_id]
        except KeyError as e:
            raise ConfigurationError(f"No learning rate given for the parameter '{param_id}'.") from e
    return lr


def optimizer_step(values, grads, state, lr, betas=BETAS, eps=EPS, max_norm=MAX_GRAD_NORM):
    """Applies one rectified Adam update after clipping the gradients by their global norm.

    A step with a non-finite gradient entry is skipped: the values and moments are left alone and the skip
    counters are incremented.

    Args:
        values (dict): Parameter values by identifier.
        grads (dict): Gradients with the same keys and shapes as values.
        state (OptimizerState): State of the optimizer, updated in place.
        lr (float or dict): Learning rate, or a learning rate per parameter identifier.
        betas (tuple, optional): Decay rates of the moments. Defaults to (0.9, 0.999).
        eps (float, optional): Denominator offset. Defaults to 1e-8.
        max_norm (float, optional): Clipping threshold of the global gradient norm. Defaults to 1.0.

    Returns:
        dict: The updated values.
    """
    for param_id, value in values.items():
        if param_id not in grads:
            raise ConfigurationError(f"No gradient given for the parameter '{param_id}'.")
        if np.shape(grads[param_id]) != np.shape(value):
            raise ConfigurationError(f"Gradient of '{param_id}' has shape {np.shape(grads[param_id])}, "
                                     f"expected {np.shape(value)}.")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        state.consecutive_skips += 1
        logger.warning(f"Non-finite gradient, skipping the update ({state.consecutive_skips} in a row).")
        return dict(values)
    state.consecutive_skips = 0

    grads, _ = clip_by_global_norm({param_id: grads[param_id] for param_id in values}, max_norm)
    beta1, beta2 = betas
    state.step += 1
    t = state.step
    bias_correction1 = 1 - beta1 ** t
    bias_correction2 = 1 - beta2 ** t
    rho_inf = 2 / (1 - beta2) - 1
    rho_t = rho_inf - 2 * t * beta2 ** t / bias_correction2

    updated = {}
    for param_id, value in values.items():
        g = grads[param_id]
        m = beta1 * state.m.get(param_id, np.zeros_like(value)) + (1 - beta1) * g
        v = beta2 * state.v.get(param_id, np.zeros_like(value)) + (1 - beta2) * np.square(g)
        state.m[param_id], state.v[param_id] = m, v
        step_size = _learning_rate(lr, param_id)
        momentum = m / bias_correction1
        if rho_t > 5:
            rect = np.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            adaptive = np.sqrt(bias_correction2) / (np.sqrt(v) + eps)
            updated[param_id] = value - step_size * momentum * rect * adaptive
        else:
            updated[param_id] = value - step_size * momentum
    return updated


def lr_schedule(step, total, lr_start):
    """Cosine decay from lr_start at step 0 to lr_start / 10 at step total.
    """
    if total == 0:
        return lr_start
    if not 0 <= step <= total:
        raise ConfigurationError(f"Step {step} outside 0, ..., {total}.")
    cosine = 0.5 * (1 + np.cos(np.pi * step / total))
    return lr_start * (FINAL_LR_FRACTION + (1 - FINAL_LR_FRACTION) * cosine)
