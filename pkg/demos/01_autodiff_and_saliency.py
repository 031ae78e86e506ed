"""
Gradients and attributions on a small MLP
=========================================

Builds a two-layer network, checks one gradient against finite
differences and compares the four attribution methods on a single input.
"""

import numpy as np

from sgtrain import autodiff as ad
from sgtrain import saliency as sal
from sgtrain.models import ModelSpec, build_model

model = build_model(ModelSpec("mlp", (8,), 3, widths=(16,), activation="tanh", seed=0))
x = np.random.default_rng(0).normal(size=8)

# the loss gradient with respect to the input, checked numerically
err = ad.finite_diff_check(lambda t: ad.softmax_cross_entropy(model.forward(ad.reshape(t, (1, 8))), [1]), x)
print(f"finite-difference relative error: {err:.2e}")

target = int(model.predict(x[None]).argmax())
for method, kw in [("gradient", {}), ("integrated_gradients", {"steps": 256}),
                   ("smoothgrad", {"sigma": 0.15, "n": 64, "seed": 0}), ("gradient_shap", {"n": 256, "seed": 0})]:
    s = sal.compute(model, x, target, method, **kw).scores
    print(f"{method:22s}", np.array2string(s, precision=3, suppress_small=True))

# integrated gradients add up to the logit change from the zero baseline
ig = sal.integrated_gradients(model, x, target, steps=256).scores
f = model.predict(np.stack([x, np.zeros(8)]))[:, target]
print(f"IG sum {ig.sum():.6f} vs f(x) - f(0) {f[0] - f[1]:.6f}")
