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

from bridgesampler.exceptions import ConfigurationError


class NoiseStream(ABC):
    """Noise streams supply the standard normal increments of simulated paths.

    The noise of a path depends only on the stream and the index of the path, never on how the paths
    are split between workers.
    """

    @abstractmethod
    def normal(self, paths, shape):
        """Draws the noise of the given paths.

        Args:
            paths (range or numpy.ndarray): Indices of the paths.
            shape (tuple): Shape of the noise of a single path.

        Returns:
            numpy.ndarray: An array of shape (len(paths), *shape).
        """
        pass


class PhiloxNoise(NoiseStream):
    """Counter-based noise: every path has its own Philox generator.

    The key of the generator is derived from (seed, stream) and the counter from the path index, so
    a path can be regenerated in isolation.
    """

    def __init__(self, seed, stream=0):
        """
        Args:
            seed (int): Seed of the run.
            stream (int, optional): Identifier of the batch within the run, e.g. the iteration. Defaults to 0.
        """
        if seed < 0 or stream < 0:
            raise ConfigurationError(f"Seed and stream must be non-negative, got {seed} and {stream}.")
        self.seed = int(seed)
        self.stream = int(stream)

    def generator(self, path):
        key = (self.seed << 64) + self.stream
        return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(path)]))

    def normal(self, paths, shape):
        shape = tuple(shape)
        out = np.empty((len(paths),) + shape)
        for i, path in enumerate(paths):
            out[i] = self.generator(path).standard_normal(shape)
        return out


class FixedNoise(NoiseStream):
    """Replays stored noise, one row per path.
    """

    def __init__(self, noise):
        """
        Args:
            noise (numpy.ndarray): Array of shape (n_paths, *shape).
        """
        self.noise = np.asarray(noise, dtype=np.float64)

    def normal(self, paths, shape):
        out = self.noise[np.asarray(paths, dtype=int)]
        if out.shape[1:] != tuple(shape):
            raise ConfigurationError(f"Stored noise has shape {out.shape[1:]}, expected {tuple(shape)}.")
        return out
