"""
The autodiff core in five minutes
=================================

Every operation appends a node to a graph.  ``backward`` walks the nodes in
reverse and returns a gradient for every parameter.
"""

import numpy as np

from advseizure.tensor import Graph, apply_primitive, backward, finite_difference_check

rng = np.random.default_rng(0)

# a tiny logistic regression: p = sigmoid(x @ w + b)
g = Graph()
w = g.parameter("w", rng.normal(size=(3, 1)))
b = g.parameter("b", np.zeros(1))
x = rng.normal(size=(5, 3))
y = np.array([[0.0], [1.0], [1.0], [0.0], [1.0]])

p = apply_primitive("sigmoid", x @ w + b)
loss = ((p - y) * (p - y)).mean()
print("loss", loss.item())

grads = backward(g, loss)
print("dL/dw", grads["w"].ravel())
print("dL/db", grads["b"])

# compare against central differences; the graph is replayed with each
# parameter entry nudged by +-h
for name in ("w", "b"):
    print(name, "relative error", finite_difference_check(g, loss, name, h=1e-5))
