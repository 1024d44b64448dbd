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

from dataclasses import asdict, dataclass

import numpy as np

from bridgesampler.exceptions import ConfigurationError, DomainError

LEVELS = ("marginal", "joint", "conditional")
VIOLATION_THRESHOLD = -1e-6


class FinitePair:
    """Two joint distributions q(x, y) and p(x, y) on {0, 1} x {0, 1}, rows indexed by x and columns by y.
    """

    def __init__(self, q, p, tol=1e-12):
        """
        Args:
            q (array_like): 2x2 table of q.
            p (array_like): 2x2 table of p.
            tol (float, optional): Tolerance on the total mass. Defaults to 1e-12.
        """
        self.q = np.asarray(q, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.float64)
        for name, table in (("q", self.q), ("p", self.p)):
            if table.shape != (2, 2):
                raise ConfigurationError(f"The table {name} must have shape (2, 2), got {table.shape}.")
            if np.any(table < 0) or abs(np.sum(table) - 1.0) > tol:
                raise ConfigurationError(f"The table {name} is not a probability table: {table.tolist()}.")

    @property
    def support(self):
        return self.q > 0

    def log_ratios(self, level):
        """Returns the log-ratio at every cell of the table for the given level; cells outside supp(q) hold 0.
        """
        if level == "joint":
            q, p = self.q, self.p
        elif level == "marginal":
            q = np.repeat(self.q.sum(axis=1, keepdims=True), 2, axis=1)
            p = np.repeat(self.p.sum(axis=1, keepdims=True), 2, axis=1)
        elif level == "conditional":
            with np.errstate(divide="ignore", invalid="ignore"):
                q = self.q / self.q.sum(axis=1, keepdims=True)
                p = self.p / self.p.sum(axis=1, keepdims=True)
        else:
            raise ConfigurationError(f"Unknown level '{level}', expected one of {LEVELS}.")
        support = self.support
        if np.any(~(p[support] > 0)):
            raise DomainError(f"p vanishes on the support of q at the {level} level.")
        out = np.zeros((2, 2))
        out[support] = np.log(q[support]) - np.log(p[support])
        return out

    def expectation(self, values):
        return np.sum(self.q[self.support] * values[self.support])

    def __repr__(self):
        return f"FinitePair(q={self.q.tolist()}, p={self.p.tolist()})"


def lv_functional(pair, level):
    """Variance under q of the log-ratio at the given level.

    Args:
        pair (FinitePair): The distributions.
        level (str): "marginal" for log q(X)/p(X), "joint" for log q(X, Y)/p(X, Y) and "conditional" for
            log q(Y|X)/p(Y|X).

    Returns:
        float: The variance.
    """
    f = pair.log_ratios(level)
    mean = pair.expectation(f)
    return pair.expectation(np.square(f - mean))


def kl_divergence(pair, level):
    """KL(q || p) at the "joint" or "marginal" level, with 0 log 0 = 0."""
    if level not in ("joint", "marginal"):
        raise ConfigurationError(f"KL is compared at the joint and marginal levels, got '{level}'.")
    return pair.expectation(pair.log_ratios(level))


@dataclass
class DpiReport:
    """Variance decomposition Var_joint = Var_marginal + Var_conditional + 2 Cov and the KL values of a pair.
    """
    gap: float
    var_joint: float
    var_marginal: float
    var_conditional: float
    cov: float
    kl_joint: float
    kl_marginal: float

    @property
    def violates(self):
        return self.gap < VIOLATION_THRESHOLD

    def to_dict(self):
        return {key: float(value) for key, value in asdict(self).items()}


def dpi_gap(pair):
    """Returns Var_joint - Var_marginal of the log-ratio under q together with its decomposition.

    A negative gap means that marginalizing out Y increased the log-variance functional, i.e. the
    functional violates the data processing inequality on this pair.

    Args:
        pair (FinitePair): The distributions.

    Returns:
        DpiReport: The gap, the variances, the covariance and the KL values.
    """
    f = pair.log_ratios("marginal")
    g = pair.log_ratios("conditional")
    cov = pair.expectation(f * g) - pair.expectation(f) * pair.expectation(g)
    var_joint = lv_functional(pair, "joint")
    var_marginal = lv_functional(pair, "marginal")
    return DpiReport(
        gap=var_joint - var_marginal,
        var_joint=var_joint,
        var_marginal=var_marginal,
        var_conditional=lv_functional(pair, "conditional"),
        cov=cov,
        kl_joint=kl_divergence(pair, "joint"),
        kl_marginal=kl_divergence(pair, "marginal"),
    )


def counterexample():
    """A pair on which the log-variance functional violates the data processing inequality."""
    return FinitePair(q=[[0.9, 0.0], [0.1, 0.0]], p=[[0.05, 0.05], [0.09, 0.81]])


def random_pairs(seed, trials, concentration=0.5, sparsity=0.5):
    """Draws random pairs. q is sparsified cell by cell so the boundary of the simplex gets explored too.

    Args:
        seed (int): Seed of the search.
        trials (int): Number of pairs.
        concentration (float, optional): Dirichlet concentration of both tables. Defaults to 0.5.
        sparsity (float, optional): Probability of zeroing a cell of q. Defaults to 0.5.

    Yields:
        FinitePair: The pairs.
    """
    random_state = np.random.RandomState(seed)
    for _ in range(trials):
        q = random_state.dirichlet(np.full(4, concentration))
        p = random_state.dirichlet(np.full(4, concentration))
        mask = random_state.uniform(size=4) >= sparsity
        if mask.any():
            q = q * mask
        yield FinitePair(q.reshape(2, 2) / np.sum(q), p.reshape(2, 2), tol=1e-9)


def violation_search(seed, trials):
    """Searches random pairs for violations of the data processing inequality by the log-variance functional.

    Args:
        seed (int): Seed of the search.
        trials (int): Number of pairs to try.

    Returns:
        list: (FinitePair, DpiReport) tuples with gap < -1e-6, most negative gap first.
    """
    found = []
    for pair in random_pairs(seed, trials):
        try:
            report = dpi_gap(pair)
        except DomainError:
            continue
        if report.violates:
            found.append((pair, report))
    return sorted(found, key=lambda item: item[1].gap)
