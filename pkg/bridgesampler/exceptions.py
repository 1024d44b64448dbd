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

class BridgeSamplerError(Exception):
    """Base class of all errors raised by bridgesampler.
    """


class ConfigurationError(BridgeSamplerError, ValueError):
    """Invalid configuration, mismatched shapes or a missing parameter identifier.
    """


class DomainError(BridgeSamplerError, ValueError):
    """A value lies outside the domain of a mathematical operation.
    """


class UsageError(BridgeSamplerError):
    """An operation was called in a way its contract does not allow.
    """


class EstimationError(BridgeSamplerError, RuntimeError):
    """An estimator had nothing to estimate from, e.g. an empty valid batch.
    """


class SetupError(BridgeSamplerError, RuntimeError):
    """Building an object failed, e.g. a normalizing constant could not be computed.
    """


class DivergenceError(BridgeSamplerError, RuntimeError):
    """A training run was flagged as divergent.
    """

    def __init__(self, message, manifest=None):
        """
        Args:
            message (str): Description of the divergence.
            manifest (RunManifest, optional): The manifest saved for the divergent run. Defaults to None.
        """
        super().__init__(message)
        self.manifest = manifest
