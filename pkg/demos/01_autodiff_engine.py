#!/usr/bin/env python3
"""Tour of the tensor engine: forward ops, the tape, and gradient checking.

Every differentiable operation records one node on a Tape; a single reverse
sweep then yields gradients for all leaves.  The engine is deliberately small:
NCHW convolutions, pointwise ops, channel concat, batched matmul, softmax,
sub-pixel shuffling, covariance pooling and a Newton-Schulz matrix square
root -- exactly what the super-resolution network needs.
"""

import numpy as np

from amsr import tensor as T
from amsr.gradcheck import grad_check

rng = np.random.default_rng(0)

print("== forward ops ==")
x = T.constant(np.ones((1, 1, 3, 3)))
w = T.constant(np.ones((1, 1, 3, 3)))
out = T.conv2d(x, w, T.constant(np.zeros(1)), pad=1)
print("3x3 all-ones conv on all-ones input (zero padding):")
print(out.data[0, 0])
print("-> the centre sees all 9 taps, corners only 4\n")

probs = T.softmax_rows(T.constant(np.array([[0.0, np.log(3.0)]])))
print("softmax of [0, ln 3] =", probs.data[0], "(rows always sum to 1)\n")

shuffled = T.pixel_shuffle(T.constant(np.arange(1.0, 5.0).reshape(1, 4, 1, 1)), 2)
print("pixel_shuffle of channels [1,2,3,4] into a 2x2 block:")
print(shuffled.data[0, 0], "\n")

print("== reverse mode on a tape ==")
tape = T.Tape()
a = T.leaf(rng.standard_normal((2, 3)), tape)
b = T.leaf(rng.standard_normal((3, 2)), tape)
loss = T.mean_all(T.relu(T.matmul(a, b)))
grads = T.backward(tape, loss)
print(f"tape recorded {len(tape)} nodes; d(loss)/da has shape {grads[a].shape}")
print("gradient of a:\n", grads[a], "\n")

print("== finite-difference verification ==")
report = grad_check(
    lambda xx, ww, bb: T.conv2d(xx, ww, bb, 1),
    [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
    name="conv2d",
    tol=1e-6,
)
print(report.summary())

spd = rng.standard_normal((4, 4))
spd = spd @ spd.T + 4 * np.eye(4)
report = grad_check(lambda m: T.newton_schulz_sqrt(m, 5), [spd], name="newton_schulz_sqrt", tol=1e-5)
print(report.summary())
root = T.newton_schulz_sqrt(T.constant(spd), 5).data
print("‖root@root − A‖_F / ‖A‖_F =", np.linalg.norm(root @ root - spd) / np.linalg.norm(spd))
