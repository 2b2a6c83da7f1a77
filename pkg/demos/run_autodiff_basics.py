#!/usr/bin/env python3
"""Tour of the autodiff tape: forward ops, backward, and the gradient checker."""

import numpy as np

from conmamba import tensor as tz
from conmamba.tensor import Tensor, grad_check, tsum

print("A Tensor wraps a numpy buffer; requires_grad opts it into the tape.")
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.3]]), requires_grad=True, dtype=np.float64)
x = Tensor(np.array([[1.0, 2.0]]), dtype=np.float64)
print("w =", w, "\nx =", x)

print("\nForward: y = sum(gelu(x @ w))")
y = tsum(tz.gelu(tz.matmul(x, w)))
print("y =", float(y.data))

print("\nBackward populates .grad on every tensor that asked for it:")
y.backward()
print("dy/dw =\n", w.grad)

print("\nFan-out accumulates: using a value twice doubles its gradient.")
w.grad = None
y2 = tz.add(tsum(tz.gelu(tz.matmul(x, w))), tsum(tz.gelu(tz.matmul(x, w))))
y2.backward()
print("dy2/dw =\n", w.grad)

print("\ngrad_check compares the tape against float64 central differences")
print("(worst relative error over every coordinate):")
err = grad_check(lambda v: tsum(tz.gelu(tz.matmul(x, v))), [w])
print(f"  gelu(matmul): {err:.2e}")

rng = np.random.default_rng(0)
xs = Tensor(rng.normal(size=(5, 4)), requires_grad=True, dtype=np.float64)
g = Tensor(rng.normal(1.0, 0.1, size=4), requires_grad=True, dtype=np.float64)
b = Tensor(rng.normal(size=4), requires_grad=True, dtype=np.float64)
wgt = Tensor(rng.normal(size=(5, 4)), dtype=np.float64)
err = grad_check(lambda *ts: tsum(tz.mul(tz.layer_norm(*ts), wgt)), [xs, g, b])
print(f"  layer_norm:   {err:.2e}")

print("\nlogsumexp is max-shifted, so huge inputs cannot overflow:")
big = tz.logsumexp(Tensor([1000.0, 1000.0], dtype=np.float64), axis=0)
print(f"  logsumexp([1000, 1000]) = {float(big.data):.6f} (= 1000 + ln 2)")
