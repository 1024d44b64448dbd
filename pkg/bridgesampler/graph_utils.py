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

from graphviz import Digraph

from bridgesampler.utils import generate_unique_path


def visualize_tape(root, path=None, render=False, view=False):
    """Generates a directed graph of the computation that produced root.

    Only nodes from which root can be reached are drawn, so root must come from a recording tape.

    Args:
        root (Node): The output node.
        path (str, optional): Where to save the DOT description. Defaults to a unique path in out/.
        render (bool, optional): Also render the graph with the dot executable. Defaults to False.
        view (bool, optional): Open the rendered graph. Implies render. Defaults to False.

    Returns:
        str: File path to the saved DOT graph description file.
    """
    dot = Digraph()
    tape = root.tape
    max_label_length = 40

    for index in sorted(tape.ancestors(root)):
        node = tape.nodes[index]
        if node.is_leaf:
            label = node.name or ("constant" if not node.requires_grad else "leaf")
            shape = "box" if node.requires_grad else "ellipse"
        else:
            label = node.op_name
            shape = "oval"
        label = str(label)
        if len(label) > max_label_length:
            label = label[:max_label_length] + "..."
        dot.node(str(index), label=f"{label} {node.shape}", _attributes={"shape": shape})
        for parent, _ in node.parents:
            dot.edge(str(parent.index), str(index))

    path_to_graph = path or generate_unique_path("out", "gv")
    if render or view:
        dot.render(path_to_graph, view=view)
    else:
        dot.save(path_to_graph)
    return path_to_graph
