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

from bridgesampler.exceptions import ConfigurationError, UsageError


def _ops():
    from bridgesampler import ops
    return ops


class Node:
    """Node is a value recorded on a Tape.

    Leaves and constants are created by the tape itself, every other node is the output of an op
    applied to nodes of the same tape. A node keeps references to its parents together with closures
    which map the gradient of the node to the gradient contribution of each parent.
    """

    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, value, tape, parents=(), requires_grad=False, name=None, op_name=None):
        """
        Args:
            value (numpy.ndarray): The value of the node. Treated as immutable.
            tape (Tape): The tape recording the node.
            parents (tuple, optional): Pairs (parent node, closure) where closure(grad) returns the
                gradient contribution of the parent. Defaults to ().
            requires_grad (bool, optional): True if gradients are propagated to or through this node.
                Defaults to False.
            name (str, optional): Name of the node, set for leaves. Defaults to None.
            op_name (str, optional): Name of the op which produced the node. Defaults to None.
        """
        self.value = value
        self.tape = tape
        self.parents = parents
        self.requires_grad = requires_grad
        self.name = name
        self.op_name = op_name
        self._grad = None
        self.index = tape.add(self)

    @property
    def is_leaf(self):
        return not self.parents and self.op_name is None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def grad(self):
        """The gradient accumulator of the node. Zero until a backward pass reaches the node.
        """
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def accumulate(self, grad):
        if self._grad is None:
            self._grad = np.array(grad, dtype=np.float64)
        else:
            self._grad = self._grad + grad

    def backward(self, reset=False):
        """Shorthand for ``self.tape.backward(self, reset)``.
        """
        return self.tape.backward(self, reset)

    def __repr__(self):
        label = self.name or self.op_name or "const"
        return f"Node({label}, shape={self.value.shape})"

    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().subtract(self, other)

    def __rsub__(self, other):
        return _ops().subtract(other, self)

    def __mul__(self, other):
        return _ops().multiply(self, other)

    def __rmul__(self, other):
        return _ops().multiply(other, self)

    def __truediv__(self, other):
        return _ops().divide(self, other)

    def __rtruediv__(self, other):
        return _ops().divide(other, self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __neg__(self):
        return _ops().negative(self)

    def __getitem__(self, index):
        return _ops().getitem(self, index)


class Tape:
    """Tape is the ordered record of the nodes of one computation.

    Nodes are appended in construction order, which is a topological order of the graph. A tape is
    meant to be used by a single thread; distinct tapes can be used concurrently.

    A non-recording tape evaluates ops without storing any derivative closures, which is how the
    samplers run the networks when no gradient is needed.
    """

    def __init__(self, record=True):
        """
        Args:
            record (bool, optional): If False, ops only compute values. Defaults to True.
        """
        self.record = record
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def add(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value, requires_grad=True, name=None):
        """Creates a leaf node, typically a parameter.

        Args:
            value (array_like): The value of the leaf.
            requires_grad (bool, optional): Whether the gradient of the leaf is wanted. Defaults to True.
            name (str, optional): Name of the leaf, used as the key of the gradient map. Defaults to None.

        Returns:
            Node: The leaf.
        """
        return Node(as_array(value), self, requires_grad=requires_grad and self.record, name=name)

    def constant(self, value, name=None):
        return Node(as_array(value), self, name=name)

    def lift(self, value):
        """Returns value itself if it is a node of this tape and a new constant otherwise.
        """
        if isinstance(value, Node):
            if value.tape is not self:
                raise ConfigurationError(f"The node {value} belongs to another tape.")
            return value
        return self.constant(value)

    def leaves(self):
        return [node for node in self.nodes if node.is_leaf and node.requires_grad]

    def zero_grad(self):
        for node in self.nodes:
            node.zero_grad()

    def ancestors(self, root):
        """Returns the indices of the nodes from which root can be reached, root included.
        """
        seen = {root.index}
        stack = [root]
        while stack:
            node = stack.pop()
            for parent, _ in node.parents:
                if parent.index not in seen:
                    seen.add(parent.index)
                    stack.append(parent)
        return seen

    def backward(self, root, reset=False):
        """Propagates the gradient of a scalar root to every leaf it depends on.

        Gradients of leaves accumulate: calling backward twice without reset doubles them. With
        reset=True all accumulators are cleared first, so repeated calls give identical results.
        Intermediate nodes hold the gradient of the latest pass only.

        Args:
            root (Node): A scalar node of this tape.
            reset (bool, optional): Clear all gradient accumulators before the pass. Defaults to False.

        Returns:
            dict: Gradients of the named requires-grad leaves, keyed by leaf name.
        """
        if root.tape is not self:
            raise UsageError("The root of a backward pass must belong to the tape.")
        if root.value.size != 1:
            raise UsageError(f"The root of a backward pass must be a scalar, got shape {root.value.shape}.")
        if reset:
            self.zero_grad()

        reachable = self.ancestors(root)
        pass_grads = {root.index: np.ones_like(root.value)}
        for index in sorted(reachable, reverse=True):
            node = self.nodes[index]
            grad = pass_grads.pop(index, None)
            if grad is None or not node.requires_grad and node is not root:
                continue
            if node.is_leaf:
                node.accumulate(grad)
                continue
            node._grad = grad
            for parent, closure in node.parents:
                contribution = closure(grad)
                if parent.index in pass_grads:
                    pass_grads[parent.index] = pass_grads[parent.index] + contribution
                else:
                    pass_grads[parent.index] = contribution
        return {node.name: node.grad for node in self.leaves() if node.name is not None}


def as_array(value):
    """Converts value to a float64 numpy array.
    """
    return np.array(value, dtype=np.float64)


def backward(root, reset=False):
    """Runs a backward pass from root on its own tape.

    Args:
        root (Node): A scalar node.
        reset (bool, optional): Clear all gradient accumulators first. Defaults to False.

    Returns:
        dict: Gradients of the named requires-grad leaves.
    """
    if not isinstance(root, Node):
        raise UsageError("backward expects a Node.")
    return root.tape.backward(root, reset)
