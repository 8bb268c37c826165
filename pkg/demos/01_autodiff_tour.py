"""A tour of the differentiation engine.

Builds a few tensors, runs them through the ops the segmentation nets are
made of, and checks the two properties everything else rests on: gradients
match finite differences, and gradients of gradients work (the corrector
update differentiates through a weight update, so the backward pass itself
must be differentiable).

Run from the repository root:  python3 demos/01_autodiff_tour.py
"""

import numpy as np

from maskcorrect import autodiff as ad

rng = np.random.default_rng(0)

# --- forward + first-order gradients ---------------------------------------

x = ad.tensor(rng.standard_normal((1, 1, 6, 6)), requires_grad=True)
k = ad.tensor(rng.standard_normal((2, 1, 3, 3)) * 0.5, requires_grad=True)
b = ad.tensor(np.zeros(2), requires_grad=True)

feat = ad.relu(ad.conv2d(x, k, b, padding=1))
pooled = ad.maxpool2(feat)
loss = (pooled * pooled).mean()
print(f"loss on a random 6x6 image: {float(loss.data):.6f}")

grads = ad.grad(loss, {"x": x, "k": k, "b": b})
print(f"gradient shapes: x {grads['x'].shape}, k {grads['k'].shape}, "
      f"b {grads['b'].shape}")

# spot-check one kernel coordinate against a central difference
eps = 1e-6
probe = k.data.copy()
vals = []
for sign in (+1.0, -1.0):
    probe[0, 0, 1, 1] = k.data[0, 0, 1, 1] + sign * eps
    with ad.no_grad():
        f = ad.maxpool2(ad.relu(ad.conv2d(x, ad.tensor(probe), b, padding=1)))
        vals.append(float((f * f).mean().data))
fd = (vals[0] - vals[1]) / (2 * eps)
exact = float(grads["k"].data[0, 0, 1, 1])
print(f"dL/dk[0,0,1,1]: exact {exact:+.8f}, finite difference {fd:+.8f}")

# --- second-order: differentiate through a gradient step -------------------
#
# This is the heart of the one-step hypergradient: take a weight, step it
# against an inner loss that depends on a second parameter theta, then ask
# how an outer loss of the *stepped* weight changes with theta.

w = ad.tensor(np.array(1.0), requires_grad=True)
theta = ad.tensor(np.array(0.0), requires_grad=True)
alpha = 0.1

d = w - theta
inner = (d * d) * 0.5                                   # (w - theta)^2 / 2
step = ad.grad(inner, {"w": w}, create_graph=True)      # backward stays a graph
w_prime = ad.functional_sgd_step({"w": w}, step, alpha)
outer = (w_prime["w"] * w_prime["w"]) * 0.5             # w'^2 / 2

hyper = ad.grad(outer, {"theta": theta})
closed_form = alpha * (1.0 - alpha * (1.0 - 0.0))
print(f"d(outer)/d(theta): engine {float(hyper['theta'].data):.12f}, "
      f"closed form {closed_form:.12f}")
