"""Tensor core walkthrough: build a graph, backpropagate, verify against
central finite differences, and take an AdamW step."""

import numpy as np

from pansurv import autodiff as ad
from pansurv.optim import AdamW

rng = np.random.default_rng(0)

# forward graph: two-layer perceptron to a scalar
x = ad.Tensor(rng.standard_normal((4, 6)))
w1 = ad.parameter(rng.standard_normal((6, 8)) / np.sqrt(6), name="w1")
w2 = ad.parameter(rng.standard_normal((8, 1)) / np.sqrt(8), name="w2")

with ad.tape_scope() as tape:
    hidden = ad.relu(ad.matmul(x, w1))
    out = ad.tsum(ad.sigmoid(ad.matmul(hidden, w2)))
ad.backward(tape, out)
print(f"scalar output: {out.item():.6f}")
print(f"gradient shapes: w1 {w1.grad.shape}, w2 {w2.grad.shape}")

# finite-difference spot check on one weight entry
h = 1e-6
orig = w1.data[2, 3]


def f():
    hidden = ad.relu(ad.matmul(x, w1))
    return ad.tsum(ad.sigmoid(ad.matmul(hidden, w2))).item()


w1.data[2, 3] = orig + h
fp = f()
w1.data[2, 3] = orig - h
fm = f()
w1.data[2, 3] = orig
numeric = (fp - fm) / (2 * h)
print(f"analytic dL/dw1[2,3] = {w1.grad[2, 3]:+.8f}")
print(f"numeric  dL/dw1[2,3] = {numeric:+.8f}")
assert abs(w1.grad[2, 3] - numeric) < 1e-6

# one AdamW step
opt = AdamW({"w1": w1, "w2": w2}, lr=1e-2, weight_decay=0.01)
before = w1.data.copy()
opt.step()
print(f"max |w1 update| after one AdamW step: {np.abs(w1.data - before).max():.6f}")

# softmax + attention primitives
s = ad.softmax(ad.Tensor([1.0, 2.0, 3.0]))
print(f"softmax([1,2,3]) = {np.round(s.data, 4)} (sums to {s.data.sum():.12f})")
q = ad.Tensor(rng.standard_normal((2, 8)))
kv = ad.Tensor(rng.standard_normal((5, 8)))
mask = np.array([1.0, 1.0, 1.0, 0.0, 0.0])  # last two keys invisible
att = ad.attention(q, kv, kv, n_heads=2, key_mask=mask)
print(f"masked attention output shape: {att.data.shape}")
