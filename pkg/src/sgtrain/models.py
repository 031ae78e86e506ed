"""Classifier architectures: MLP, reduced MNIST CNN, TCN-lite and LSTM.

Every model maps a batch ``[B, *input_shape]`` to logits ``[B, n_classes]``
and owns an ordered dict of named :class:`~sgtrain.autodiff.Parameter`.
"""

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError, SpecError

KINDS = ("mlp", "mnist_cnn", "tcn", "lstm")
ACTIVATIONS = ("relu", "tanh")

_DEFAULTS = {
    "mlp": dict(widths=(32,), dropout=()),
    "mnist_cnn": dict(widths=(8, 16, 64), dropout=(0.25, 0.5)),
    "tcn": dict(widths=(16, 16, 16), dropout=(), kernel_size=5, dilations=(1, 2, 4)),
    "lstm": dict(widths=(32,), dropout=()),
}


@dataclass
class ModelSpec:
    """Architecture description.

    ``widths`` means hidden sizes for the MLP, ``(conv1, conv2, dense)`` for
    the MNIST CNN, per-block channels for the TCN and ``(hidden,)`` for the
    LSTM. Empty tuples are filled from per-kind defaults. ``activation``
    applies to the MLP's hidden layers only.
    """

    kind: str
    input_shape: tuple
    n_classes: int = 2
    widths: tuple = ()
    dropout: tuple = ()
    kernel_size: int = 5
    dilations: tuple = ()
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        self.input_shape = tuple(int(v) for v in self.input_shape)
        defaults = _DEFAULTS[self.kind]
        self.widths = tuple(int(v) for v in (self.widths or defaults["widths"]))
        self.dropout = tuple(float(v) for v in (self.dropout or defaults["dropout"]))
        if self.kind == "tcn":
            self.dilations = tuple(int(v) for v in (self.dilations or defaults["dilations"]))
            if len(self.widths) == 1:
                self.widths = self.widths * len(self.dilations)
            if len(self.widths) != len(self.dilations):
                raise SpecError("tcn needs one width per dilation")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.activation != "relu" and self.kind != "mlp":
            raise SpecError("only the mlp takes a non-relu activation")
        self.n_classes = int(self.n_classes)
        self.kernel_size = int(self.kernel_size)
        self.seed = int(self.seed)
        if self.n_classes < 2:
            raise SpecError("a classifier needs at least 2 classes")
        if any(v < 1 for v in self.input_shape + self.widths):
            raise SpecError("input shape and widths must be positive")
        if self.kind in ("tcn", "lstm") and len(self.input_shape) != 2:
            raise SpecError(f"{self.kind} needs an F x T input shape, got {self.input_shape}")
        if self.kind == "mnist_cnn":
            if len(self.input_shape) != 3:
                raise SpecError(f"mnist_cnn needs a C x H x W input shape, got {self.input_shape}")
            if len(self.widths) != 3 or len(self.dropout) != 2:
                raise SpecError("mnist_cnn needs widths (conv1, conv2, dense) and two dropout rates")
            _, h, w = self.input_shape
            if h < 5 or w < 5 or (h - 4) % 2 or (w - 4) % 2:
                raise SpecError("mnist_cnn needs H, W >= 5 with H-4 and W-4 even")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


def _uniform(rng, shape, fan_in, gain=6.0):
    bound = np.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DropoutTape:
    """Records dropout masks on a first forward pass and replays them on later ones.

    The saliency-guided step uses this so the masked batch sees exactly the
    same dropout pattern as the original batch.
    """

    def __init__(self, rng):
        self.rng = rng
        self.masks = []
        self._cursor = None

    def mask(self, shape, p):
        if self._cursor is None:
            m = ad.dropout_mask(shape, p, self.rng)
            self.masks.append(m)
            return m
        m = self.masks[self._cursor]
        self._cursor += 1
        return m

    def replay(self):
        self._cursor = 0
        return self


class Model:
    def __init__(self, spec):
        self.spec = spec
        self.params = {}
        self.meta = {}
        rng = np.random.default_rng(spec.seed)
        self._build(rng)

    def _add(self, name, data):
        self.params[name] = ad.Parameter(data, name)

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def fingerprint(self):
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()[:16]

    def __call__(self, x, training=False, dropout=None):
        return self.forward(x, training, dropout)

    def forward(self, x, training=False, dropout=None):
        """Logits for a batch. ``dropout`` is a :class:`DropoutTape` or a seed/Generator."""
        x = ad.as_tensor(x)
        if tuple(x.shape[1:]) != self.spec.input_shape:
            if tuple(x.shape) == self.spec.input_shape:
                x = ad.reshape(x, (1,) + self.spec.input_shape)
            else:
                raise ShapeError(f"{self.spec.kind}: expected batch of {list(self.spec.input_shape)}, "
                                 f"got {list(x.shape)}")
        if training and dropout is not None and not isinstance(dropout, DropoutTape):
            dropout = DropoutTape(np.random.default_rng(dropout) if not isinstance(dropout, np.random.Generator) else dropout)
        return self._forward(x, training, dropout)

    def predict(self, x, batch_size=512):
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def _dropout(self, h, p, training, tape):
        if not training or p == 0.0:
            return h
        if tape is None:
            raise ParameterError("training-mode forward with dropout needs a dropout tape or seed")
        return ad.dropout(h, p, True, mask=tape.mask(h.shape, p))

    def _dense(self, h, name):
        return ad.add(ad.matmul(h, self.params[name + ".weight"]), self.params[name + ".bias"])


class MLP(Model):
    def _build(self, rng):
        sizes = (int(np.prod(self.spec.input_shape)),) + self.spec.widths + (self.spec.n_classes,)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self._add(f"fc{i}.weight", _uniform(rng, (a, b), a))
            self._add(f"fc{i}.bias", np.zeros(b))

    def _forward(self, x, training, tape):
        h = ad.reshape(x, (x.shape[0], -1))
        n_layers = len(self.spec.widths) + 1
        for i in range(n_layers):
            h = self._dense(h, f"fc{i}")
            if i < n_layers - 1:
                h = ad.relu(h) if self.spec.activation == "relu" else ad.tanh(h)
                if i < len(self.spec.dropout):
                    h = self._dropout(h, self.spec.dropout[i], training, tape)
        return h


class MnistCNN(Model):
    """conv3x3 -> relu -> conv3x3 -> relu -> maxpool2 -> dropout -> dense -> relu -> dropout -> dense."""

    def _build(self, rng):
        c, h, w = self.spec.input_shape
        c1, c2, hidden = self.spec.widths
        self._add("conv1.weight", _uniform(rng, (c1, c, 3, 3), c * 9))
        self._add("conv1.bias", np.zeros((c1, 1, 1)))
        self._add("conv2.weight", _uniform(rng, (c2, c1, 3, 3), c1 * 9))
        self._add("conv2.bias", np.zeros((c2, 1, 1)))
        flat = c2 * ((h - 4) // 2) * ((w - 4) // 2)
        self._add("fc1.weight", _uniform(rng, (flat, hidden), flat))
        self._add("fc1.bias", np.zeros(hidden))
        self._add("fc2.weight", _uniform(rng, (hidden, self.spec.n_classes), hidden))
        self._add("fc2.bias", np.zeros(self.spec.n_classes))

    def _forward(self, x, training, tape):
        p = self.params
        h = ad.relu(ad.add(ad.conv2d(x, p["conv1.weight"]), p["conv1.bias"]))
        h = ad.relu(ad.add(ad.conv2d(h, p["conv2.weight"]), p["conv2.bias"]))
        h = ad.maxpool2d(h, 2)
        h = self._dropout(h, self.spec.dropout[0], training, tape)
        h = ad.reshape(h, (h.shape[0], -1))
        h = ad.relu(self._dense(h, "fc1"))
        h = self._dropout(h, self.spec.dropout[1], training, tape)
        return self._dense(h, "fc2")


class TCN(Model):
    """Residual blocks of two causal dilated convolutions; dense head on the last step."""

    def _build(self, rng):
        f, _ = self.spec.input_shape
        k = self.spec.kernel_size
        c_prev = f
        for i, c in enumerate(self.spec.widths):
            self._add(f"block{i}.conv1.weight", _uniform(rng, (c, c_prev, k), c_prev * k))
            self._add(f"block{i}.conv1.bias", np.zeros((c, 1)))
            self._add(f"block{i}.conv2.weight", _uniform(rng, (c, c, k), c * k))
            self._add(f"block{i}.conv2.bias", np.zeros((c, 1)))
            if c != c_prev:
                self._add(f"block{i}.skip.weight", _uniform(rng, (c, c_prev, 1), c_prev, gain=3.0))
            c_prev = c
        self._add("head.weight", _uniform(rng, (c_prev, self.spec.n_classes), c_prev, gain=3.0))
        self._add("head.bias", np.zeros(self.spec.n_classes))

    def receptive_field(self):
        return 1 + 2 * (self.spec.kernel_size - 1) * sum(self.spec.dilations)

    def features(self, x):
        """Last block activations ``[B, C, T]``; position t depends on inputs at steps <= t only."""
        p = self.params
        h = ad.as_tensor(x)
        for i, d in enumerate(self.spec.dilations):
            name = f"block{i}"
            y = ad.relu(ad.add(ad.conv1d(h, p[name + ".conv1.weight"], d, True), p[name + ".conv1.bias"]))
            y = ad.relu(ad.add(ad.conv1d(y, p[name + ".conv2.weight"], d, True), p[name + ".conv2.bias"]))
            skip = ad.conv1d(h, p[name + ".skip.weight"], 1, True) if name + ".skip.weight" in p else h
            h = ad.relu(ad.add(y, skip))
        return h

    def _forward(self, x, training, tape):
        last = ad.getitem(self.features(x), (slice(None), slice(None), -1))
        return self._dense(last, "head")


class LSTMClassifier(Model):
    def _build(self, rng):
        f, _ = self.spec.input_shape
        (hidden,) = self.spec.widths[:1]
        bound = 1.0 / np.sqrt(hidden)
        self._add("lstm.w_input", rng.uniform(-bound, bound, size=(f, 4 * hidden)))
        self._add("lstm.w_hidden", rng.uniform(-bound, bound, size=(hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self._add("lstm.bias", b)
        self._add("head.weight", _uniform(rng, (hidden, self.spec.n_classes), hidden, gain=3.0))
        self._add("head.bias", np.zeros(self.spec.n_classes))

    def _forward(self, x, training, tape):
        p = self.params
        h = ad.lstm(x, p["lstm.w_input"], p["lstm.w_hidden"], p["lstm.bias"])
        return self._dense(h, "head")


_CLASSES = {"mlp": MLP, "mnist_cnn": MnistCNN, "tcn": TCN, "lstm": LSTMClassifier}


def build_model(spec=None, **kwargs):
    """Construct a model from a :class:`ModelSpec` (or its fields as keywords)."""
    if spec is None:
        spec = ModelSpec(**kwargs)
    elif isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    return _CLASSES[spec.kind](spec)


def expected_parameter_count(spec):
    """Closed-form parameter count from layer sizes, independent of construction."""
    c = spec.n_classes
    if spec.kind == "mlp":
        sizes = [int(np.prod(spec.input_shape)), *spec.widths, c]
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if spec.kind == "mnist_cnn":
        ch, h, w = spec.input_shape
        c1, c2, hid = spec.widths
        flat = c2 * ((h - 4) // 2) * ((w - 4) // 2)
        return (c1 * ch * 9 + c1) + (c2 * c1 * 9 + c2) + (flat * hid + hid) + (hid * c + c)
    if spec.kind == "tcn":
        f, _ = spec.input_shape
        k, total, prev = spec.kernel_size, 0, f
        for width in spec.widths:
            total += width * prev * k + width + width * width * k + width
            if width != prev:
                total += width * prev
            prev = width
        return total + prev * c + c
    f, _ = spec.input_shape
    hid = spec.widths[0]
    return 4 * hid * (f + hid + 1) + hid * c + c
