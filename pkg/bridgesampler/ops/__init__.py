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

from .op import Op, BinaryOp, Addition, Subtraction, Multiplication, Division, Maximum, MatMul
from .common import clip, concatenate, exp, external_log_density, external_score, getitem, log, mean, negative
from .common import reshape
from .common import sigmoid, silu, softplus, sqrt, square, sum, tanh, tile_cols, tile_rows


def add(a, b):
    return Addition()(a, b)


def subtract(a, b):
    return Subtraction()(a, b)


def multiply(a, b):
    return Multiplication()(a, b)


def divide(a, b):
    return Division()(a, b)


def maximum(a, b):
    return Maximum()(a, b)


def matmul(a, b):
    return MatMul()(a, b)
