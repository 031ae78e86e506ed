"""Gradient-based attribution: vanilla gradient, integrated gradients, SmoothGrad, Gradient SHAP.

All methods run the model in eval mode (dropout off) and accept either one
sample shaped like the model input or a batch of samples; ``target`` is then
a scalar or one class index per sample.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import LabelError, ParameterError, ShapeError

METHODS = ("gradient", "integrated_gradients", "smoothgrad", "gradient_shap", "random")


@dataclass
class SaliencyMap:
    scores: np.ndarray
    target: object
    method: str
    params: dict = field(default_factory=dict)


@dataclass
class Baseline:
    kind: str = "zeros"
    tensor: np.ndarray = None

    def resolve(self, sample_shape, dataset_min=None):
        if self.kind == "zeros":
            return np.zeros(sample_shape)
        if self.kind == "dataset_min":
            if dataset_min is None:
                raise ParameterError("dataset_min baseline needs the dataset minimum")
            return np.broadcast_to(np.asarray(dataset_min, dtype=float), sample_shape).copy()
        if self.kind == "custom":
            b = np.asarray(self.tensor, dtype=float)
            if b.shape != tuple(sample_shape):
                raise ShapeError(f"baseline shape {list(b.shape)} != input shape {list(sample_shape)}")
            return b
        raise ParameterError(f"unknown baseline kind {self.kind!r}")


def _as_batch(model, x, target):
    x = np.asarray(x, dtype=np.float64)
    in_shape = model.spec.input_shape
    single = x.shape == in_shape
    if single:
        x = x[None]
    elif x.shape[1:] != in_shape:
        raise ShapeError(f"input {list(x.shape)} does not match model input {list(in_shape)}")
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (x.shape[0],)).copy()
    if np.any(t < 0) or np.any(t >= model.spec.n_classes):
        raise LabelError(f"target class out of range [0, {model.spec.n_classes})")
    return x, t, single


def input_gradients(model, x, targets, chunk=256):
    """d logit[target] / d x for every row of a batch, eval mode."""
    out = np.empty_like(x)
    for i in range(0, len(x), chunk):
        xt = ad.Tensor(x[i:i + chunk], requires_grad=True)
        logits = model.forward(xt, training=False)
        picked = ad.tsum(ad.getitem(logits, (np.arange(len(xt.data)), targets[i:i + chunk])))
        (g,) = ad.grad(picked, [xt])
        out[i:i + chunk] = g
    return out


def predicted_class(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.spec.input_shape
    logits = model.predict(x[None] if single else x)
    pred = logits.argmax(axis=1)
    return int(pred[0]) if single else pred


def _finish(scores, single):
    return scores[0] if single else scores


def vanilla_gradient(model, x, target):
    xb, t, single = _as_batch(model, x, target)
    return SaliencyMap(_finish(input_gradients(model, xb, t), single), target, "gradient")


def integrated_gradients(model, x, target, baseline=None, steps=64):
    """Midpoint-rule path integral from ``baseline`` to ``x``."""
    if steps < 1:
        raise ParameterError("integrated gradients needs at least one step")
    xb, t, single = _as_batch(model, x, target)
    base = baseline if isinstance(baseline, Baseline) else Baseline("zeros") if baseline is None \
        else Baseline("custom", np.asarray(baseline))
    b = base.resolve(model.spec.input_shape)
    diff = xb - b
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(xb)
    # one batch per alpha keeps memory flat; each row is an independent sample
    for a in alphas:
        total += input_gradients(model, b + a * diff, t)
    scores = diff * total / steps
    return SaliencyMap(_finish(scores, single), target, "integrated_gradients",
                       {"steps": steps, "baseline": base.kind})


def smoothgrad(model, x, target, sigma=0.15, n=16, seed=0):
    if sigma < 0 or n < 1:
        raise ParameterError("smoothgrad needs sigma >= 0 and n >= 1")
    xb, t, single = _as_batch(model, x, target)
    params = {"sigma": sigma, "n": n, "seed": seed}
    if sigma == 0:
        # every noisy copy equals x; averaging identical maps would only add rounding
        return SaliencyMap(_finish(input_gradients(model, xb, t), single), target, "smoothgrad", params)
    rng = np.random.default_rng(seed)
    total = np.zeros_like(xb)
    for _ in range(n):
        total += input_gradients(model, xb + rng.normal(0.0, sigma, size=xb.shape), t)
    return SaliencyMap(_finish(total / n, single), target, "smoothgrad", params)


def gradient_shap(model, x, target, baselines=None, sigma=0.0, n=16, seed=0):
    """Expected (x - b) * grad at b + u (x + eps - b) over baselines b, u ~ U(0,1), eps ~ N(0, sigma^2)."""
    if n < 1:
        raise ParameterError("gradient_shap needs n >= 1")
    xb, t, single = _as_batch(model, x, target)
    in_shape = model.spec.input_shape
    if baselines is None:
        baselines = np.zeros((1,) + in_shape)
    baselines = np.asarray(baselines, dtype=np.float64)
    if baselines.shape == in_shape:
        baselines = baselines[None]
    if baselines.ndim == 0 or len(baselines) == 0:
        raise ParameterError("gradient_shap needs at least one baseline sample")
    if baselines.shape[1:] != in_shape:
        raise ShapeError("baseline samples must match the model input shape")
    rng = np.random.default_rng(seed)
    total = np.zeros_like(xb)
    bshape = (len(xb),) + (1,) * len(in_shape)
    for _ in range(n):
        b = baselines[rng.integers(0, len(baselines), size=len(xb))]
        u = rng.uniform(0.0, 1.0, size=bshape)
        eps = rng.normal(0.0, sigma, size=xb.shape) if sigma > 0 else 0.0
        total += (xb - b) * input_gradients(model, b + u * (xb + eps - b), t)
    return SaliencyMap(_finish(total / n, single), target, "gradient_shap",
                       {"sigma": sigma, "n": n, "seed": seed, "baselines": len(baselines)})


def random_saliency(model, x, target=None, seed=0):
    """Uniform(0, 1) scores, the reference assignment for difference metrics."""
    x = np.asarray(x, dtype=np.float64)
    return SaliencyMap(np.random.default_rng(seed).uniform(0.0, 1.0, size=x.shape), target, "random",
                       {"seed": seed})


def compute(model, x, target, method, **params):
    """Dispatch by method name; unknown keyword arguments are rejected by the method."""
    fns = {"gradient": vanilla_gradient, "integrated_gradients": integrated_gradients,
           "smoothgrad": smoothgrad, "gradient_shap": gradient_shap, "random": random_saliency}
    if method not in fns:
        raise ParameterError(f"unknown saliency method {method!r}; expected one of {METHODS}")
    return fns[method](model, x, target, **params)


def aggregate_saliency(smap, axis_spec="none", sample_ndim=None):
    """Sum out the channel (images) or feature (sequences) axis of a map.

    ``per_pixel_over_channels`` needs C x H x W samples and
    ``per_position_sum`` needs F x T samples; batched maps are detected from
    ``sample_ndim``.
    """
    scores = np.asarray(smap.scores if isinstance(smap, SaliencyMap) else smap)
    if axis_spec == "none":
        return smap
    need = {"per_pixel_over_channels": 3, "per_position_sum": 2}
    if axis_spec not in need:
        raise ParameterError(f"unknown aggregation {axis_spec!r}")
    nd = sample_ndim if sample_ndim is not None else need[axis_spec]
    if nd != need[axis_spec] or scores.ndim not in (nd, nd + 1):
        raise ShapeError(f"{axis_spec} needs {need[axis_spec]}-D samples, got shape {list(scores.shape)}")
    axis = 0 if scores.ndim == nd else 1
    reduced = scores.sum(axis=axis)
    if isinstance(smap, SaliencyMap):
        return SaliencyMap(reduced, smap.target, smap.method, dict(smap.params, aggregate=axis_spec))
    return reduced
