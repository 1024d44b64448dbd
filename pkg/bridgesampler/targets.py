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
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.integrate import IntegrationWarning, quad
from scipy.special import gammaln, logsumexp, softmax

from bridgesampler.exceptions import ConfigurationError, SetupError

LOG_2PI = np.log(2 * np.pi)


def _rows(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ConfigurationError(f"Expected points of dimension {dim}, got an array of shape {x.shape}.")
    return x, single


class TargetDensity(ABC):
    """TargetDensity is the superclass of the unnormalized densities rho(x) = exp(-E(x)) the bridge samples from.

    Inheriting classes implement the raw log-density and its score. A constant energy shift is kept
    apart from the raw values so that shifting a target changes log-densities by exactly -shift and
    leaves scores untouched.
    """

    def __init__(self, dim, name, log_z=None):
        """
        Args:
            dim (int): Dimension of the state space.
            name (str): Name of the target.
            log_z (float, optional): Logarithm of the normalizing constant if it is known. Defaults to None.
        """
        if dim < 1:
            raise ConfigurationError(f"The dimension of a target must be positive, got {dim}.")
        self.dim = dim
        self.name = name
        self.raw_log_z = log_z
        self.energy_shift = 0.0
        self.modes = None

    @abstractmethod
    def _log_density(self, x):
        """Returns the unshifted log-densities of the rows of x.
        """
        pass

    @abstractmethod
    def _score(self, x):
        pass

    @abstractmethod
    def _hvp(self, x, v):
        """Returns the rows of H(x) v, where H is the Hessian of the log-density.
        """
        pass

    def raw_log_density(self, x):
        x, single = _rows(x, self.dim)
        out = self._log_density(x)
        return out[0] if single else out

    def log_density(self, x):
        """Returns log rho(x) = -E(x) row by row.

        Args:
            x (numpy.ndarray): A point of shape (d,) or points of shape (n, d).

        Returns:
            float or numpy.ndarray: The unnormalized log-densities.
        """
        return self.raw_log_density(x) - self.energy_shift

    def energy(self, x):
        return -self.log_density(x)

    def score(self, x):
        """Returns the gradient of log rho at x, row by row.
        """
        x, single = _rows(x, self.dim)
        out = self._score(x)
        return out[0] if single else out

    def hvp(self, x, v):
        """Returns the Hessian of log rho at x applied to v, row by row.

        Args:
            x (numpy.ndarray): A point of shape (d,) or points of shape (n, d).
            v (numpy.ndarray): Vectors shaped like x.

        Returns:
            numpy.ndarray: The products, shaped like x.
        """
        x, single = _rows(x, self.dim)
        v, _ = _rows(v, self.dim)
        if v.shape != x.shape:
            raise ConfigurationError(f"Points of shape {x.shape} and vectors of shape {v.shape} do not match.")
        out = self._hvp(x, v)
        return out[0] if single else out

    @property
    def log_z(self):
        if self.raw_log_z is None:
            return None
        return self.raw_log_z - self.energy_shift

    @property
    def log_z_known(self):
        return self.raw_log_z is not None

    @property
    def has_sampler(self):
        return False

    def sample(self, n, random_state):
        """Draws exact samples from the normalized target.

        Args:
            n (int): Number of samples.
            random_state (mtrand.RandomState): Random state used for all randomness.

        Returns:
            numpy.ndarray: Samples of shape (n, d).
        """
        raise ConfigurationError(f"The target {self.name} has no exact sampler.")

    def component_log_likelihoods(self, x):
        raise ConfigurationError(f"The target {self.name} is not a mixture.")

    def shifted(self, c):
        """Returns a copy of the target whose energy is increased by c.
        """
        target = copy.copy(self)
        target.energy_shift = self.energy_shift + c
        return target

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name}, dim={self.dim})"


class DiagonalGaussian(TargetDensity):
    """Normalized Gaussian target with diagonal covariance.
    """

    def __init__(self, mean, std):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape).copy()
        if np.any(std <= 0):
            raise ConfigurationError("Standard deviations of a Gaussian target must be positive.")
        super().__init__(mean.size, "gaussian", log_z=0.0)
        self.mean = mean
        self.std = std

    def _log_density(self, x):
        z = (x - self.mean) / self.std
        return -0.5 * np.sum(z ** 2, axis=1) - np.sum(np.log(self.std)) - 0.5 * self.dim * LOG_2PI

    def _score(self, x):
        return -(x - self.mean) / self.std ** 2

    def _hvp(self, x, v):
        return -v / self.std ** 2

    @property
    def has_sampler(self):
        return True

    def sample(self, n, random_state):
        return self.mean + self.std * random_state.normal(size=(n, self.dim))


@dataclass
class MixtureSpec:
    """Locations and family of an equal-weight mixture.

    Attributes:
        m (int): Number of components.
        locations (numpy.ndarray): Component locations of shape (m, d).
        family (str): "gaussian" for unit-covariance Gaussians or "student_t" for products of t_2 variables.
        seed (int): Seed the locations were drawn with.
    """
    m: int
    locations: np.ndarray
    family: str
    seed: int

    @classmethod
    def draw(cls, d, m, box_halfwidth, seed, family):
        if d < 1 or m < 1:
            raise ConfigurationError(f"A mixture needs d >= 1 and m >= 1, got d={d} and m={m}.")
        locations = np.random.RandomState(seed).uniform(-box_halfwidth, box_halfwidth, size=(m, d))
        return cls(m, locations, family, seed)


class Mixture(TargetDensity):
    """Equal-weight mixture of unit Gaussians or of products of Student-t distributions with two degrees of freedom.
    """

    families = ("gaussian", "student_t")
    dof = 2.0

    def __init__(self, spec, name=None):
        """
        Args:
            spec (MixtureSpec): The components of the mixture.
            name (str, optional): Name of the target. Defaults to "gmm" or "mos" by family.
        """
        if spec.family not in self.families:
            raise ConfigurationError(f"Unknown mixture family '{spec.family}', expected one of {self.families}.")
        spec.locations = np.asarray(spec.locations, dtype=np.float64)
        default_name = "gmm" if spec.family == "gaussian" else "mos"
        super().__init__(spec.locations.shape[1], name or default_name, log_z=0.0)
        self.spec = spec
        self.modes = spec.locations

    def component_log_likelihoods(self, x):
        """Returns the (n, m) log-densities of every component at every row of x.
        """
        x, _ = _rows(x, self.dim)
        diff = x[:, None, :] - self.spec.locations[None, :, :]
        if self.spec.family == "gaussian":
            return -0.5 * np.sum(diff ** 2, axis=2) - 0.5 * self.dim * LOG_2PI
        nu = self.dof
        log_norm = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
        return np.sum(log_norm - (nu + 1) / 2 * np.log1p(diff ** 2 / nu), axis=2)

    def _log_density(self, x):
        return logsumexp(self.component_log_likelihoods(x), axis=1) - np.log(self.spec.m)

    def _score(self, x):
        responsibilities = softmax(self.component_log_likelihoods(x), axis=1)
        diff = x[:, None, :] - self.spec.locations[None, :, :]
        if self.spec.family == "gaussian":
            component_scores = -diff
        else:
            component_scores = -(self.dof + 1) * diff / (self.dof + diff ** 2)
        return np.einsum("nk,nkd->nd", responsibilities, component_scores)

    def _hvp(self, x, v):
        # sum_k r_k (H_k + g_k g_k^T) - s s^T for responsibilities r, component scores g and the score s
        responsibilities = softmax(self.component_log_likelihoods(x), axis=1)
        diff = x[:, None, :] - self.spec.locations[None, :, :]
        if self.spec.family == "gaussian":
            component_scores = -diff
            curvature = -np.ones_like(diff)
        else:
            nu = self.dof
            component_scores = -(nu + 1) * diff / (nu + diff ** 2)
            curvature = -(nu + 1) * (nu - diff ** 2) / (nu + diff ** 2) ** 2
        score = np.einsum("nk,nkd->nd", responsibilities, component_scores)
        projections = np.einsum("nkd,nd->nk", component_scores, v)
        per_component = curvature * v[:, None, :] + component_scores * projections[:, :, None]
        return np.einsum("nk,nkd->nd", responsibilities, per_component) - score * np.sum(score * v, axis=1)[:, None]

    @property
    def has_sampler(self):
        return True

    def sample(self, n, random_state):
        components = random_state.randint(self.spec.m, size=n)
        if self.spec.family == "gaussian":
            noise = random_state.normal(size=(n, self.dim))
        else:
            noise = random_state.standard_t(self.dof, size=(n, self.dim))
        return self.spec.locations[components] + noise


class Funnel(TargetDensity):
    """Neal's funnel: x_1 ~ N(0, 9) and x_2, ..., x_d ~ N(0, exp(x_1)) independently given x_1.
    """

    first_variance = 9.0
    sample_bound = 30.0

    def __init__(self, d):
        if d < 2:
            raise ConfigurationError(f"The funnel needs d >= 2, got {d}.")
        super().__init__(d, "funnel", log_z=0.0)

    def _log_density(self, x):
        x1, rest = x[:, 0], x[:, 1:]
        n_rest = self.dim - 1
        first = -0.5 * x1 ** 2 / self.first_variance - 0.5 * np.log(2 * np.pi * self.first_variance)
        second = -0.5 * np.sum(rest ** 2, axis=1) * np.exp(-x1) - 0.5 * n_rest * (LOG_2PI + x1)
        return first + second

    def _score(self, x):
        x1, rest = x[:, 0], x[:, 1:]
        out = np.empty_like(x)
        out[:, 0] = -x1 / self.first_variance + 0.5 * np.sum(rest ** 2, axis=1) * np.exp(-x1) - 0.5 * (self.dim - 1)
        out[:, 1:] = -rest * np.exp(-x1)[:, None]
        return out

    def _hvp(self, x, v):
        x1, rest = x[:, 0], x[:, 1:]
        v1, v_rest = v[:, 0], v[:, 1:]
        scale = np.exp(-x1)
        out = np.empty_like(x)
        out[:, 0] = -(1 / self.first_variance + 0.5 * np.sum(rest ** 2, axis=1) * scale) * v1 \
            + scale * np.sum(rest * v_rest, axis=1)
        out[:, 1:] = scale[:, None] * (rest * v1[:, None] - v_rest)
        return out

    @property
    def has_sampler(self):
        return True

    def sample(self, n, random_state):
        x1 = np.sqrt(self.first_variance) * random_state.normal(size=n)
        rest = np.exp(0.5 * x1)[:, None] * random_state.normal(size=(n, self.dim - 1))
        samples = np.concatenate([x1[:, None], rest], axis=1)
        return np.clip(samples, -self.sample_bound, self.sample_bound)


class ManyWell(TargetDensity):
    """Product of m double wells exp(-(x_i^2 - delta)^2) and d - m standard Gaussian factors.

    The normalizing constant is computed once by one-dimensional quadrature, and exact samples are drawn
    dimension by dimension with rejection sampling.
    """

    def __init__(self, d, m, delta):
        if not 0 <= m <= d:
            raise ConfigurationError(f"Many Well needs 0 <= m <= d, got m={m} and d={d}.")
        if delta < 0:
            raise ConfigurationError(f"Many Well needs delta >= 0, got {delta}.")
        self.m = m
        self.delta = float(delta)
        self.well_log_z = self._well_log_normalizer()
        log_z = m * self.well_log_z + 0.5 * (d - m) * LOG_2PI
        super().__init__(d, "manywell", log_z=log_z)
        self._proposal_std, self._log_bound = self._rejection_constants()
        if 1 <= m <= 12:
            signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * m, indexing="ij")).reshape(m, -1).T
            self.modes = np.concatenate([np.sqrt(self.delta) * signs, np.zeros((2 ** m, d - m))], axis=1)

    def _well_log_normalizer(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", IntegrationWarning)
            try:
                value, error = quad(lambda x: np.exp(-(x ** 2 - self.delta) ** 2), -np.inf, np.inf)
            except IntegrationWarning as e:
                raise SetupError(f"Quadrature of the Many Well normalizer did not converge for delta={self.delta}.") \
                    from e
        if not value > 0 or error > 1e-6 * value:
            raise SetupError(f"Quadrature of the Many Well normalizer is unreliable: {value} +- {error}.")
        return np.log(value)

    def _well_log_density(self, x):
        return -(x ** 2 - self.delta) ** 2

    def _proposal_log_density(self, x):
        centre = np.sqrt(self.delta)
        std = self._proposal_std
        log_components = np.stack([-0.5 * ((x - centre) / std) ** 2, -0.5 * ((x + centre) / std) ** 2])
        return logsumexp(log_components, axis=0) - np.log(2) - np.log(std) - 0.5 * LOG_2PI

    def _rejection_constants(self):
        # the proposal is a two-component Gaussian mixture at +-sqrt(delta) with widened wells
        self._proposal_std = 2.0 / np.sqrt(8 * self.delta) if self.delta >= 0.5 else 1.0
        reach = np.sqrt(self.delta) + 10.0
        grid = np.linspace(-reach, reach, 200001)
        log_ratio = self._well_log_density(grid) - self._proposal_log_density(grid)
        return self._proposal_std, np.max(log_ratio) + np.log(1.05)

    def _log_density(self, x):
        wells = np.sum(self._well_log_density(x[:, :self.m]), axis=1)
        return wells - 0.5 * np.sum(x[:, self.m:] ** 2, axis=1)

    def _score(self, x):
        out = -x.copy()
        wells = x[:, :self.m]
        out[:, :self.m] = -4 * wells * (wells ** 2 - self.delta)
        return out

    def _hvp(self, x, v):
        out = -v.copy()
        wells = x[:, :self.m]
        out[:, :self.m] = (4 * self.delta - 12 * wells ** 2) * v[:, :self.m]
        return out

    @property
    def has_sampler(self):
        return True

    def _sample_wells(self, n, random_state):
        accepted = np.empty(0)
        while accepted.size < n:
            size = 2 * (n - accepted.size) + 16
            signs = np.where(random_state.random_sample(size) < 0.5, -1.0, 1.0)
            proposals = signs * np.sqrt(self.delta) + self._proposal_std * random_state.normal(size=size)
            log_u = np.log(random_state.random_sample(size))
            keep = log_u < self._well_log_density(proposals) - self._proposal_log_density(proposals) - self._log_bound
            accepted = np.concatenate([accepted, proposals[keep]])
        return accepted[:n]

    def sample(self, n, random_state):
        samples = np.empty((n, self.dim))
        for i in range(self.m):
            samples[:, i] = self._sample_wells(n, random_state)
        samples[:, self.m:] = random_state.normal(size=(n, self.dim - self.m))
        return samples


class Brownian(TargetDensity):
    """Posterior of a Gaussian random walk observed with noise, parameterized in log-scale space.

    The state is (log a_inn, log a_obs, x_1, ..., x_n) where a_inn and a_obs are the innovation and
    observation scales with LogNormal(0, 2) priors. Observations are given as an array with NaN marking
    the withheld ones.
    """

    log_scale_std = 2.0

    def __init__(self, observations):
        observations = np.asarray(observations, dtype=np.float64)
        super().__init__(observations.size + 2, "brownian")
        self.observations = observations
        self.observed = ~np.isnan(observations)
        self._y = np.where(self.observed, observations, 0.0)

    def _unpack(self, x):
        return x[:, 0], x[:, 1], x[:, 2:]

    def _log_density(self, x):
        u_inn, u_obs, path = self._unpack(x)
        n = path.shape[1]
        increments = np.diff(path, axis=1, prepend=0.0)
        residuals = (self._y - path) * self.observed
        n_obs = np.sum(self.observed)
        log_prior = -0.5 * (u_inn ** 2 + u_obs ** 2) / self.log_scale_std ** 2 \
            - 2 * (np.log(self.log_scale_std) + 0.5 * LOG_2PI)
        log_walk = -0.5 * np.sum(increments ** 2, axis=1) * np.exp(-2 * u_inn) - n * (u_inn + 0.5 * LOG_2PI)
        log_obs = -0.5 * np.sum(residuals ** 2, axis=1) * np.exp(-2 * u_obs) - n_obs * (u_obs + 0.5 * LOG_2PI)
        return log_prior + log_walk + log_obs

    def _score(self, x):
        u_inn, u_obs, path = self._unpack(x)
        n = path.shape[1]
        increments = np.diff(path, axis=1, prepend=0.0)
        residuals = (self._y - path) * self.observed
        inn_precision = np.exp(-2 * u_inn)[:, None]
        obs_precision = np.exp(-2 * u_obs)[:, None]
        out = np.empty_like(x)
        out[:, 0] = -u_inn / self.log_scale_std ** 2 + np.sum(increments ** 2 * inn_precision, axis=1) - n
        out[:, 1] = -u_obs / self.log_scale_std ** 2 \
            + np.sum(residuals ** 2 * obs_precision, axis=1) - np.sum(self.observed)
        grad_path = -increments * inn_precision
        grad_path[:, :-1] += increments[:, 1:] * inn_precision
        out[:, 2:] = grad_path + residuals * obs_precision
        return out

    def _hvp(self, x, v):
        u_inn, u_obs, path = self._unpack(x)
        v_inn, v_obs, v_path = self._unpack(v)
        increments = np.diff(path, axis=1, prepend=0.0)
        residuals = (self._y - path) * self.observed
        inn_precision = np.exp(-2 * u_inn)[:, None]
        obs_precision = np.exp(-2 * u_obs)[:, None]
        walk = -increments * inn_precision
        walk[:, :-1] += increments[:, 1:] * inn_precision
        obs = residuals * obs_precision
        # the walk precision is D^T D for the differences D with x_0 = 0
        v_increments = np.diff(v_path, axis=1, prepend=0.0)
        walk_v = v_increments.copy()
        walk_v[:, :-1] -= v_increments[:, 1:]
        out = np.empty_like(x)
        out[:, 0] = -(1 / self.log_scale_std ** 2 + 2 * np.sum(increments ** 2 * inn_precision, axis=1)) * v_inn \
            - 2 * np.sum(walk * v_path, axis=1)
        out[:, 1] = -(1 / self.log_scale_std ** 2 + 2 * np.sum(residuals ** 2 * obs_precision, axis=1)) * v_obs \
            - 2 * np.sum(obs * v_path, axis=1)
        out[:, 2:] = -2 * walk * v_inn[:, None] - 2 * obs * v_obs[:, None] - inn_precision * walk_v \
            - obs_precision * self.observed * v_path
        return out


def make_gaussian(mean, std=1.0):
    """Returns a normalized diagonal Gaussian target.
    """
    return DiagonalGaussian(mean, std)


def make_gmm(d, m, box_halfwidth, seed):
    """Returns an equal-weight mixture of m unit Gaussians with locations drawn uniformly from a box.

    Args:
        d (int): Dimension.
        m (int): Number of components.
        box_halfwidth (float): Locations are drawn from [-box_halfwidth, box_halfwidth]^d.
        seed (int): Seed for the location draws.

    Returns:
        Mixture: The normalized target (log Z = 0) with an exact sampler.
    """
    return Mixture(MixtureSpec.draw(d, m, box_halfwidth, seed, "gaussian"))


def make_mos(d, m, box_halfwidth, seed):
    """As make_gmm, with components that are products of independent t_2 variables.
    """
    return Mixture(MixtureSpec.draw(d, m, box_halfwidth, seed, "student_t"))


def make_funnel(d=10):
    return Funnel(d)


def make_manywell(d=5, m=5, delta=4.0):
    return ManyWell(d, m, delta)


def make_brownian(T_obs=30, seed=0, observations=None, missing=range(10, 19)):
    """Builds the Brownian random-walk posterior.

    Unless observations are given, scales, path and observations are drawn once from the generative
    model with the seed, and the observations at the (zero-based) indices in missing are withheld.

    Args:
        T_obs (int, optional): Length of the walk. Defaults to 30.
        seed (int, optional): Seed of the generated observations. Defaults to 0.
        observations (array_like, optional): Observations with NaN for withheld entries. Defaults to None.
        missing (iterable, optional): Zero-based indices withheld from generated observations.
            Defaults to the 11th to 19th observation.

    Returns:
        Brownian: The target, of dimension T_obs + 2.
    """
    if observations is None:
        random_state = np.random.RandomState(seed)
        a_inn, a_obs = random_state.lognormal(0.0, Brownian.log_scale_std, size=2)
        path = np.cumsum(a_inn * random_state.normal(size=T_obs))
        observations = path + a_obs * random_state.normal(size=T_obs)
        observations[[i for i in missing if i < T_obs]] = np.nan
    return Brownian(observations)


TARGETS = {
    "gaussian": make_gaussian,
    "gmm": make_gmm,
    "mos": make_mos,
    "funnel": make_funnel,
    "manywell": make_manywell,
    "brownian": make_brownian,
}


def make_target(spec):
    """Builds a target from a dictionary such as {"name": "manywell", "d": 5, "m": 5, "delta": 4.0}.

    An optional "energy_shift" entry shifts the energy of the built target.

    Args:
        spec (dict): Name of the target and the keyword arguments of its constructor.

    Returns:
        TargetDensity: The target.
    """
    spec = dict(spec)
    try:
        name = spec.pop("name")
        constructor = TARGETS[name]
    except KeyError as e:
        message = f"The target specification {spec} does not name one of the known targets {sorted(TARGETS)}."
        raise ConfigurationError(message) from e
    shift = spec.pop("energy_shift", 0.0)
    try:
        target = constructor(**spec)
    except TypeError as e:
        raise ConfigurationError(f"Invalid arguments {spec} for the target '{name}'.") from e
    return target.shifted(shift) if shift else target


def dump_samples(path, samples, target, seed):
    """Writes samples to a CSV file, one row per sample, after a comment line naming the target and seed.
    """
    df = pd.DataFrame(samples, columns=[f"x{i}" for i in range(samples.shape[1])])
    with open(path, "w") as file:
        file.write(f"# target={target.name} seed={seed}\n")
        df.to_csv(file, index=False)
    return path


def load_samples(path):
    return pd.read_csv(path, comment="#").to_numpy()
