"""Traditional, saliency-guided and fine-tuning training loops.

A saliency-guided step takes the input gradient of the true-class logit,
masks each sample's lowest-ranked ``ceil(k * N)`` features, and minimizes

    CE(f(X), y) + lambda * KL(softmax f(X) || softmax f(X_masked))

with the masked batch treated as a constant.

Randomness comes from two streams spawned from the run seed: one drives
shuffling and dropout (consumed identically by every mode), the other drives
mask draws. Keeping them apart is what lets ``lambda = 0`` or ``k = 0``
reproduce traditional training bit for bit.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericError, ParameterError, ShapeError
from .models import DropoutTape

MODES = ("traditional", "saliency_guided", "fine_tune")
MASK_KINDS = ("uniform_in_range", "fixed_value", "carry_forward_salient")


def fraction_count(fraction, n):
    """``ceil(fraction * n)``, immune to float noise such as 0.3 * 10 = 3.0000000000000004."""
    return int(math.ceil(round(fraction * n, 9)))


# -- optimizers ---------------------------------------------------------------

class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = list(params), lr

    def step(self):
        for p in self.params:
            p.data = p.data - self.lr * p.grad


class Momentum:
    def __init__(self, params, lr, beta=0.9):
        self.params, self.lr, self.beta = list(params), lr, beta
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            self.velocity[i] = self.beta * self.velocity[i] + p.grad
            p.data = p.data - self.lr * self.velocity[i]


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.lr, self.betas, self.eps = list(params), lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for i, p in enumerate(self.params):
            self.m[i] = b1 * self.m[i] + (1 - b1) * p.grad
            self.v[i] = b2 * self.v[i] + (1 - b2) * p.grad * p.grad
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def make_optimizer(name, params, lr):
    if name == "sgd":
        return SGD(params, lr)
    if name in ("sgd_momentum", "momentum"):
        return Momentum(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ParameterError(f"unknown optimizer {name!r}")


# -- masking ------------------------------------------------------------------

@dataclass
class MaskStrategy:
    """How masked features are replaced.

    ``lo``/``hi`` broadcast against one sample (see
    :meth:`Dataset.feature_ranges`), ``value`` is the constant for
    ``fixed_value``, and ``carry_forward_salient`` fills along the last axis.
    """

    kind: str = "uniform_in_range"
    lo: np.ndarray = None
    hi: np.ndarray = None
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ParameterError(f"unknown mask strategy {self.kind!r}")
        if self.kind == "uniform_in_range":
            if self.lo is None or self.hi is None:
                raise ParameterError("uniform_in_range needs per-feature lo/hi ranges")
            if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
                raise ParameterError("mask ranges need lo <= hi")


def rank_features(saliency, sort_by="signed"):
    """Ascending, stable ordering of flat feature indices per sample (ties by index)."""
    s = np.asarray(saliency, dtype=np.float64)
    single = s.ndim <= 1
    flat = s.reshape(1, -1) if single else s.reshape(len(s), -1)
    if np.isnan(flat).any():
        raise DataError("saliency contains NaN")
    if sort_by == "absolute":
        flat = np.abs(flat)
    elif sort_by != "signed":
        raise ParameterError(f"sort_by must be 'signed' or 'absolute', got {sort_by!r}")
    order = np.argsort(flat, axis=1, kind="stable")
    return order[0] if single else order


def _position_mask(sample_shape, ranking, k_count):
    """Boolean element mask ``[B, *sample_shape]`` from per-sample rankings."""
    n_pos = ranking.shape[1]
    full = int(np.prod(sample_shape))
    batch = ranking.shape[0]
    if not 0 <= k_count <= n_pos:
        raise ParameterError(f"k_count={k_count} outside [0, {n_pos}]")
    chosen = np.zeros((batch, n_pos), dtype=bool)
    np.put_along_axis(chosen, ranking[:, :k_count], True, axis=1)
    if n_pos == full:
        return chosen.reshape((batch,) + tuple(sample_shape))
    if len(sample_shape) >= 2 and n_pos == int(np.prod(sample_shape[1:])):
        # one position covers every channel / feature along the first axis
        grouped = chosen.reshape((batch, 1) + tuple(sample_shape[1:]))
        return np.broadcast_to(grouped, (batch,) + tuple(sample_shape)).copy()
    raise ShapeError(f"ranking over {n_pos} positions does not fit samples of shape {list(sample_shape)}")


def _carry_forward(x, mask):
    t = x.shape[-1]
    rows_x = x.reshape(-1, t)
    rows_m = mask.reshape(-1, t)
    pos = np.arange(t)
    prev = np.where(~rows_m, pos, -1)
    prev = np.maximum.accumulate(prev, axis=1)
    nxt = np.where(~rows_m, pos, t)
    nxt = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    src = np.where(prev >= 0, prev, nxt)
    src = np.where(src == t, pos, src)  # a fully masked row has no source and stays put
    return np.take_along_axis(rows_x, src, axis=1).reshape(x.shape)


def mask_bottom_k(x, ranking, k_count, strategy, rng=None):
    """Replace the first ``k_count`` ranked positions of each sample per ``strategy``.

    ``ranking`` indexes either every element of a sample or, for grouped
    masking, positions over all axes but the first (pixels of ``C x H x W``,
    time steps of ``F x T``); a grouped position masks every channel.
    """
    x = np.asarray(x, dtype=np.float64)
    ranking = np.asarray(ranking)
    single = ranking.ndim == 1
    xb = x[None] if single else x
    rb = ranking[None] if single else ranking
    if len(rb) != len(xb):
        raise ShapeError("need one ranking per sample")
    mask = _position_mask(xb.shape[1:], rb, int(k_count))
    if strategy.kind == "fixed_value":
        out = np.where(mask, float(strategy.value), xb)
    elif strategy.kind == "uniform_in_range":
        if rng is None:
            raise ParameterError("uniform_in_range masking needs an rng")
        lo = np.broadcast_to(strategy.lo, xb.shape[1:])
        hi = np.broadcast_to(strategy.hi, xb.shape[1:])
        draw = lo + (hi - lo) * rng.random(xb.shape)
        out = np.where(mask, draw, xb)
    else:
        out = _carry_forward(xb, mask)
    return out[0] if single else out


# -- configuration and report -------------------------------------------------

@dataclass
class TrainConfig:
    k: float = 0.5
    lam: float = 1.0
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    optimizer: str = "sgd"
    seed: int = 0
    mode: str = "saliency_guided"
    sort_by: str = "signed"
    mask: str = "uniform_in_range"
    mask_value: float = 0.0
    mask_grouping: str = "element"
    checkpoint_in: str = None

    def __post_init__(self):
        if not 0 <= self.k < 1:
            raise ParameterError(f"k must lie in [0, 1), got {self.k}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be > 0, got {self.lr}")
        if self.mode not in MODES:
            raise ParameterError(f"unknown training mode {self.mode!r}")
        if self.mask not in MASK_KINDS:
            raise ParameterError(f"unknown mask strategy {self.mask!r}")
        if self.mask_grouping not in ("element", "per_pixel", "per_position"):
            raise ParameterError(f"unknown mask grouping {self.mask_grouping!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch size >= 1")


@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: str = None
    kl_first_epoch_steps: list = field(default_factory=list)
    kl_last_epoch_steps: list = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "ce", "kl", "train_acc", "test_acc")

    def rows(self):
        for i in range(len(self.loss)):
            yield (i + 1, self.loss[i], self.ce[i], self.kl[i], self.train_acc[i], self.test_acc[i])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def from_csv(cls, path):
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for name in cls.COLUMNS[1:]:
                    getattr(rep, name).append(float(row[name]))
        return rep


@dataclass
class StepResult:
    loss: float
    ce: float
    kl: float
    correct: int


def _grouped(saliency, grouping):
    if grouping == "element":
        return saliency.reshape(len(saliency), -1)
    # per_pixel (C x H x W) and per_position (F x T) both sum the first sample axis
    return saliency.sum(axis=1).reshape(len(saliency), -1)


def sgt_step(model, x, y, config, optimizer, dropout_rng, mask_rng, strategy):
    """One optimizer step; ``config.mode == 'traditional'`` skips the masking branch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    guided = config.mode != "traditional"
    tape = DropoutTape(dropout_rng)
    xt = ad.Tensor(x, requires_grad=guided)
    logits = model.forward(xt, training=True, dropout=tape)
    ce = ad.softmax_cross_entropy(logits, y)
    kl_value = 0.0
    if guided:
        target = ad.tsum(ad.getitem(logits, (np.arange(len(y)), y)))
        (sal,) = ad.grad(target, [xt])
        positions = _grouped(sal, config.mask_grouping)
        ranking = rank_features(positions, config.sort_by)
        k_count = fraction_count(config.k, positions.shape[1])
        masked = mask_bottom_k(x, ranking, k_count, strategy, mask_rng)
        logits_masked = model.forward(ad.Tensor(masked), training=True, dropout=tape.replay())
        kl = ad.kl_divergence(logits, logits_masked)
        kl_value = kl.item()
        loss = ad.add(ce, ad.mul(kl, config.lam))
    else:
        loss = ce
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    model.zero_grad()
    ad.backward(loss)
    optimizer.step()
    correct = int((logits.data.argmax(axis=1) == y).sum())
    return StepResult(value, ce.item(), kl_value, correct)


def accuracy(model, x, y, batch_size=512):
    if len(x) == 0:
        return float("nan")
    return float((model.predict(x, batch_size).argmax(axis=1) == np.asarray(y)).mean())


def make_strategy(config, dataset):
    if config.mask == "uniform_in_range":
        lo, hi = dataset.feature_ranges()
        return MaskStrategy("uniform_in_range", lo, hi)
    return MaskStrategy(config.mask, value=config.mask_value)


def train(model, dataset, config, checkpoint_out=None, log=None, on_step=None):
    """Run ``config.epochs`` epochs; returns ``(TrainReport, model)``.

    ``on_step(step, model)`` is called after every optimizer update.

    ``fine_tune`` starts from ``config.checkpoint_in`` when given (else from
    ``model`` as passed) and continues with saliency-guided epochs.
    """
    if len(dataset.x_train) == 0:
        raise DataError("empty training split")
    if config.mode == "fine_tune" and config.checkpoint_in:
        model = load_checkpoint(config.checkpoint_in)
    stream_dropout, stream_mask = np.random.SeedSequence(config.seed).spawn(2)
    dropout_rng = np.random.default_rng(stream_dropout)
    mask_rng = np.random.default_rng(stream_mask)
    optimizer = make_optimizer(config.optimizer, model.parameters(), config.lr)
    strategy = make_strategy(config, dataset) if config.mode != "traditional" else None
    report = TrainReport()
    start = time.perf_counter()
    n = len(dataset.x_train)
    step = 0
    for epoch in range(config.epochs):
        order = dropout_rng.permutation(n)
        tot = {"loss": 0.0, "ce": 0.0, "kl": 0.0, "correct": 0}
        kls = []
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            r = sgt_step(model, dataset.x_train[idx], dataset.y_train[idx], config, optimizer,
                         dropout_rng, mask_rng, strategy)
            w = len(idx)
            tot["loss"] += r.loss * w
            tot["ce"] += r.ce * w
            tot["kl"] += r.kl * w
            tot["correct"] += r.correct
            kls.append(r.kl)
            step += 1
            if on_step is not None:
                on_step(step, model)
        report.loss.append(tot["loss"] / n)
        report.ce.append(tot["ce"] / n)
        report.kl.append(tot["kl"] / n)
        report.train_acc.append(tot["correct"] / n)
        report.test_acc.append(accuracy(model, dataset.x_test, dataset.y_test))
        if epoch == 0:
            report.kl_first_epoch_steps = kls
        report.kl_last_epoch_steps = kls
        if log is not None:
            log(f"epoch {epoch + 1}: loss={report.loss[-1]:.4f} kl={report.kl[-1]:.4f} "
                f"train_acc={report.train_acc[-1]:.3f} test_acc={report.test_acc[-1]:.3f}")
    report.wall_clock = time.perf_counter() - start
    tag = {"traditional": "traditional", "saliency_guided": "saliency_guided", "fine_tune": "fine_tuned"}
    model.meta = {"mode": tag[config.mode], "epochs": model.meta.get("epochs", 0) + config.epochs
                  if config.mode == "fine_tune" else config.epochs,
                  "rng_state": {"dropout": dropout_rng.bit_generator.state, "mask": mask_rng.bit_generator.state}}
    if checkpoint_out is not None:
        save_checkpoint(model, checkpoint_out)
        report.checkpoint = str(checkpoint_out)
    return report, model
