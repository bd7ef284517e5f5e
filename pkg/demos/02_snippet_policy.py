"""Span sampling and the self-critical gradient on a five-word toy.

With five words there are only fifteen (start, end) pairs, so every
expectation can be written out exactly and compared with sampling.
"""

import numpy as np

from hardabsa import heads as hd
from hardabsa import numerics as nx
from hardabsa.numerics import Tensor
from hardabsa.trainer import reward, scst_loss

rng = np.random.default_rng(3)
n, h = 5, 4
rows = Tensor(rng.normal(size=(n, h)))
params = hd.init_head_params(h, 3, seed=0, std=1.0)
label = 0
W2, b = params.classifier("hard")


def softmax(z):
    z = z - z.max()
    return np.exp(z) / np.exp(z).sum()


# exact probability of every span: beta_l[l] * beta_r[r - l]
beta_l = softmax(rows.data @ params["s"].data)
exact = {}
for l in range(n):
    beta_r = softmax(rows.data[l:] @ params["e"].data)
    for r in range(l, n):
        exact[(l, r)] = beta_l[l] * beta_r[r - l]
print("spans", len(exact), "total probability", round(sum(exact.values()), 12))

# sampled frequencies
draws = 20_000
counts = {}
with nx.no_grad():
    for _ in range(draws):
        span = hd.select_span(rows, params, "sampled", rng).span
        counts[span] = counts.get(span, 0) + 1
print(" span   exact  sampled")
for span, p in sorted(exact.items(), key=lambda kv: -kv[1])[:6]:
    print(f"{span}  {p:.4f}  {counts.get(span, 0) / draws:.4f}")

# greedy selection is the baseline
greedy = hd.select_span(rows, params, "greedy")
with nx.no_grad():
    R_b = reward(hd.classify(hd.pool_snippet(rows, greedy), W2, b).probs, label)
print("greedy span", greedy.span, "baseline reward", round(R_b, 4))

# per-sample policy gradients with the greedy baseline and with none
grads = {"greedy": [], "zero": []}
for _ in range(5000):
    sel = hd.select_span(rows, params, "sampled", rng)
    with nx.no_grad():
        R = reward(hd.classify(hd.pool_snippet(rows, sel), W2, b).probs, label)
    for name, base in (("greedy", R_b), ("zero", 0.0)):
        params["s"].grad = None
        params["e"].grad = None
        nx.backward(scst_loss(R, base, sel.logp_l, sel.logp_r))
        grads[name].append(np.concatenate([params["s"].grad, params["e"].grad]))

for name, g in grads.items():
    g = np.asarray(g)
    print(f"{name:>6} baseline: mean |grad| {np.abs(g.mean(axis=0)).mean():.4f}  total variance {g.var(axis=0).sum():.4f}")
