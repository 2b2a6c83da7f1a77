#!/usr/bin/env python3
"""CTC by hand: the dynamic program, the enumeration oracle, greedy decoding."""

import math

import numpy as np

from conmamba.ctc import brute_force_ctc, collapse, ctc_grad, ctc_loss, greedy_decode

print("Two frames, vocabulary {blank, a, b}, uniform rows, target [a].")
print("Valid paths: (a,a), (a,-), (-,a); each has probability 1/9,")
print("so the loss should be -log(3/9) = log 3.")
lp = np.full((2, 3), math.log(1.0 / 3.0))
print(f"  dynamic program:   {ctc_loss(lp, [1]):.6f}")
print(f"  path enumeration:  {brute_force_ctc(lp, [1]):.6f}")
print(f"  log 3:             {math.log(3.0):.6f}")

print("\nRandom lattices: the DP and the oracle agree to float precision.")
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(50):
    T, V = int(rng.integers(2, 7)), int(rng.integers(2, 5))
    logits = rng.normal(size=(T, V))
    lattice = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    target = [int(rng.integers(1, V))]
    worst = max(worst, abs(ctc_loss(lattice, target) - brute_force_ctc(lattice, target)))
print(f"  worst |difference| over 50 random instances: {worst:.2e}")

print("\nThe gradient is softmax minus occupancy, so every row sums to zero:")
g = ctc_grad(lattice, target)
print(f"  max |row sum| = {np.max(np.abs(g.sum(axis=1))):.2e}")

print("\nGreedy decoding: per-frame argmax, merge repeats, drop blanks.")
frames = [1, 1, 0, 1, 2, 2]
print(f"  argmax frames {frames} collapse to {collapse(frames)}")
lp = np.full((6, 3), math.log(0.05))
for t, v in enumerate(frames):
    lp[t, v] = math.log(0.9)
lp -= np.log(np.exp(lp).sum(axis=1, keepdims=True))
print(f"  greedy_decode on the matching lattice: {greedy_decode(lp)}")
