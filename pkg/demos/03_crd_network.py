"""
Contact residual network
========================

One shared per-leg network maps 21 features to a force and a contact
probability. The residual angular acceleration is I^-1 sum C_i (d_i x F_i).
"""

import numpy as np

from thrustwalk.crd import Batch, NetworkParams, forward, loss_and_grad, residual_from_outputs

rng = np.random.default_rng(0)
inertia = np.diag([0.0276, 0.0552, 0.0696])
params = NetworkParams.init(seed=0)
print("parameters", params.n_params())

features = rng.normal(size=(4, 21))
d = np.array([[0.18, 0.13, -0.26], [0.18, -0.13, -0.26], [-0.18, 0.13, -0.26], [-0.18, -0.13, -0.26]])
out = forward(params, features)
print("forces\n", out.F.round(3))
print("contact probabilities", out.C.round(3))
print("residual", residual_from_outputs(out, d, inertia).round(3))

# composite loss and a spot check of one gradient entry
batch = Batch(rng.normal(size=(8, 4, 21)), rng.normal(scale=0.2, size=(8, 4, 3)),
              rng.normal(scale=5.0, size=(8, 3)), rng.random((8, 4)) < 0.5)
loss, (l_grf, l_con), grads = loss_and_grad(params, batch, 0.3, inertia)
print(f"loss {loss:.4f} = 0.7 * {l_grf:.4f} + 0.3 * {l_con:.4f}")
W = params.weights["hidden2"]
h = 1e-5
W[3, 7] += h
lp = loss_and_grad(params, batch, 0.3, inertia, compute_grad=False)[0]
W[3, 7] -= 2 * h
lm = loss_and_grad(params, batch, 0.3, inertia, compute_grad=False)[0]
W[3, 7] += h
print("d loss / d W[3,7]: analytic", grads["hidden2.weight"][3, 7], "finite difference", (lp - lm) / (2 * h))
