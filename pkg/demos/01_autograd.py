"""
Reverse-mode gradients on numpy arrays
======================================

Build a tiny conv + batch-norm + sigmoid graph, backpropagate, and compare
the gradient with central finite differences.
"""

import numpy as np

from roigan import functional as F
from roigan.gradcheck import max_relative_error, numerical_gradient
from roigan.tensor import Tensor, default_dtype

rng = np.random.default_rng(0)

# gradient checks want 64-bit arithmetic
with default_dtype(np.float64):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 4, 4)) * 0.3
    gamma, beta = np.ones(4), np.zeros(4)

    def loss(x_arr, w_arr):
        h = F.conv2d(Tensor(x_arr), w_arr, None, 2, 1)  # 8x8 -> 4x4
        h = F.batch_norm(h, Tensor(gamma), Tensor(beta), training=True)
        return F.mean(F.sigmoid(h))

    wt = Tensor(w.copy(), requires_grad=True)
    out = loss(x, wt)
    out.backward()
    print("loss", out.item(), "grad shape", wt.grad.shape)

    num = numerical_gradient(lambda: loss(x, Tensor(w)).item(), [w])[0]
    print("max relative error vs finite differences: %.2e" % max_relative_error(wt.grad, num))

# outputs are checked for finiteness as they are produced
with default_dtype(np.float64), np.errstate(over="ignore"):
    try:
        F.scale(Tensor(np.array([1e308, 1.0])), 10.0)
    except FloatingPointError as e:
        print("caught:", e)
