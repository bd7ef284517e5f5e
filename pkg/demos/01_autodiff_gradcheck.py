"""Reverse-mode autodiff on numpy arrays, checked against central differences."""

import numpy as np

from hardabsa import numerics as nx
from hardabsa.numerics import Tensor

rng = np.random.default_rng(0)

# a two-layer perceptron with a cross-entropy loss
x = rng.normal(size=(5, 3))
labels = np.array([0, 1, 2, 1, 0])
w1 = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 3)), requires_grad=True)


def loss_of(w1, w2):
    hidden = nx.gelu(nx.matmul(Tensor(x), w1))
    return nx.cross_entropy(nx.matmul(hidden, w2), labels)


loss = loss_of(w1, w2)
nx.backward(loss)
print("loss", round(loss.item(), 6))
print("graph ops", [t.op for t in nx.topological_order(loss) if t.op != "leaf"])

# the same gradient by perturbing one entry at a time
h = 1e-5
numeric = np.zeros_like(w1.data)
for i in np.ndindex(w1.shape):
    up, down = w1.data.copy(), w1.data.copy()
    up[i] += h
    down[i] -= h
    with nx.no_grad():
        numeric[i] = (loss_of(Tensor(up), w2).item() - loss_of(Tensor(down), w2).item()) / (2 * h)

rel = np.abs(w1.grad - numeric) / np.maximum(np.abs(numeric), 1e-8)
print("max relative error on w1", f"{rel.max():.2e}")

# softmax and layer norm stay finite for extreme inputs
big = Tensor(np.array([[1e4, 0.0, -1e4]]), requires_grad=True)
probs = nx.softmax(big)
print("softmax of +/-1e4", probs.data)
normed = nx.layer_norm(Tensor(np.full((1, 4), 7.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
print("layer norm of a constant row", normed.data)
