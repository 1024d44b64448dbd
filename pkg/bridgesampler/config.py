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

import itertools
import json
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from bridgesampler.bridge import CMCD, FIXED_FORWARD, PARAMETERIZATIONS
from bridgesampler.exceptions import ConfigurationError

LOSSES = ("rkl_ld", "lv", "rkl_r")
PROPOSALS = ("on_policy", "forward")


@dataclass
class RunConfig:
    """Everything a training run depends on.

    Attributes:
        target (dict): Target specification, see targets.make_target.
        parameterization (str): "dbs", "cmcd" or "fixed_forward".
        loss (str): "rkl_ld", "lv" or "rkl_r".
        proposal (str): Proposal of the LV loss, "on_policy" or "forward".
        T (int): Number of steps.
        batch_size (int): Paths per gradient estimate.
        iterations (int): Number of optimizer steps.
        lr (float): Learning rate of the networks.
        interpolation_lr (float): Learning rate of the schedule, prior and diffusion coefficients. Defaults to lr.
        sigma_init (float): Initial diffusion coefficient.
        prior_mean (float): Initial prior mean.
        prior_std_init (float): Initial prior standard deviation.
        learn_sigma (bool): Learn the diffusion coefficients.
        learn_prior (bool): Learn the prior.
        seed (int): Seed of everything random in the run.
        eval_every (int): Evaluation cadence in iterations.
        eval_paths (int): Paths simulated per evaluation.
        metric_samples (int): Samples for the sample-based metrics.
        sample_metrics_every (int): Cadence of the sample-based metrics; 0 computes them at the end only.
        chunk_size (int): Paths simulated together.
        max_grad_norm (float): Global gradient norm clip.
        divergence_drop (float): A run diverges when the ELBO drops this far below its best value.
        max_nan_steps (int): A run diverges after this many consecutive skipped steps.
        sinkhorn_epsilon (float): Entropic regularization of the Sinkhorn divergence, None for the default.
    """
    target: dict = field(default_factory=lambda: {"name": "manywell"})
    parameterization: str = CMCD
    loss: str = "rkl_ld"
    proposal: str = "on_policy"
    T: int = 64
    batch_size: int = 512
    iterations: int = 4000
    lr: float = 1e-3
    interpolation_lr: float = None
    sigma_init: float = 1.0
    prior_mean: float = 0.0
    prior_std_init: float = 1.0
    learn_sigma: bool = False
    learn_prior: bool = False
    seed: int = 0
    eval_every: int = 250
    eval_paths: int = 2000
    metric_samples: int = 2000
    sample_metrics_every: int = 0
    chunk_size: int = 64
    max_grad_norm: float = 1.0
    divergence_drop: float = 100.0
    max_nan_steps: int = 10
    sinkhorn_epsilon: float = None

    def __post_init__(self):
        if self.interpolation_lr is None:
            self.interpolation_lr = self.lr
        self.validate()

    def validate(self):
        if not isinstance(self.target, dict) or "name" not in self.target:
            raise ConfigurationError(f"The target must be a table with a name, got {self.target}.")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigurationError(f"Unknown parameterization '{self.parameterization}'.")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"Unknown loss '{self.loss}', expected one of {LOSSES}.")
        if self.proposal not in PROPOSALS:
            raise ConfigurationError(f"Unknown proposal '{self.proposal}', expected one of {PROPOSALS}.")
        if self.proposal == "forward" and self.loss != "lv":
            raise ConfigurationError("Forward proposals are only used by the LV loss.")
        if self.parameterization == FIXED_FORWARD and (self.learn_sigma or self.learn_prior):
            raise ConfigurationError("FIXED_FORWARD has no learnable prior or diffusion coefficients.")
        for name in ("lr", "interpolation_lr", "sigma_init", "prior_std_init", "max_grad_norm", "divergence_drop"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}.")
        for name in ("T", "batch_size", "eval_every", "eval_paths", "metric_samples", "chunk_size", "max_nan_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1, got {getattr(self, name)}.")
        if self.iterations < 0 or self.sample_metrics_every < 0:
            raise ConfigurationError("iterations and sample_metrics_every cannot be negative.")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys {unknown}.")
        return cls(**values)


def load_config(path):
    """Reads a RunConfig from a TOML or JSON file.

    Args:
        path (str): Path to a .toml or .json file.

    Returns:
        RunConfig: The configuration.
    """
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as file:
                values = tomllib.load(file)
        elif path.suffix == ".json":
            with open(path, "r") as file:
                values = json.load(file)
        else:
            raise ConfigurationError(f"Configuration files are .toml or .json, got '{path.suffix}'.")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Could not parse the configuration file {path}.") from e
    return RunConfig.from_dict(values)


PRESETS = {
    "manywell_desk": dict(target={"name": "manywell", "d": 5, "m": 5, "delta": 4.0}, parameterization=CMCD,
                          loss="rkl_ld", T=64, batch_size=512, iterations=4000, lr=1e-3, sigma_init=1.0,
                          prior_std_init=1.0, learn_sigma=True),
    "gmm_desk": dict(target={"name": "gmm", "d": 2, "m": 8, "box_halfwidth": 10.0, "seed": 0}, parameterization=CMCD,
                     loss="rkl_ld", T=64, batch_size=512, iterations=4000, lr=1e-3, sigma_init=1.0,
                     prior_std_init=10.0, learn_sigma=True, learn_prior=True),
    "funnel_desk": dict(target={"name": "funnel", "d": 10}, parameterization=CMCD, loss="rkl_ld", T=64,
                        batch_size=512, iterations=4000, lr=1e-3, sigma_init=1.0, prior_std_init=1.0,
                        learn_sigma=True, learn_prior=True),
}

GRIDS = {
    "manywell": {"sigma_init": [0.05, 0.1, 0.2], "prior_std_init": [0.5, 1.0, 2.0], "lr": [1e-3, 1e-4, 1e-5]},
    "bayesian": {"sigma_init": [0.1, 0.3], "prior_std_init": [0.5, 1.0], "lr": [5e-3, 2e-3, 1e-3]},
    "mixture": {"prior_std_init": [80.0], "lr": [1e-3, 1e-4, 1e-5]},
}


def preset(name, **overrides):
    """Returns one of the desk-scale configurations, optionally with some fields replaced.
    """
    try:
        values = dict(PRESETS[name])
    except KeyError as e:
        raise ConfigurationError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}.") from e
    values.update(overrides)
    return RunConfig.from_dict(values)


def grid(family):
    """Returns the list of field overrides of a grid search family.
    """
    try:
        axes = GRIDS[family]
    except KeyError as e:
        raise ConfigurationError(f"Unknown grid '{family}', expected one of {sorted(GRIDS)}.") from e
    keys = list(axes)
    return [dict(zip(keys, combination)) for combination in itertools.product(*(axes[k] for k in keys))]


def expand(base, overrides_list, seeds=(None,)):
    """Returns one configuration per combination of overrides and seed.
    """
    configs = []
    for overrides in overrides_list:
        for seed in seeds:
            values = dict(overrides)
            if seed is not None:
                values["seed"] = seed
            # a schedule rate tied to lr follows it
            if "lr" in values and "interpolation_lr" not in values and base.interpolation_lr == base.lr:
                values["interpolation_lr"] = values["lr"]
            configs.append(replace(base, **values))
    return configs
