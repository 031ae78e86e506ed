"""Synthetic benchmark generation and real-data ingestion (MNIST IDX, CSV).

Synthetic samples are laid out ``[F, T]`` (features by time). Background
cells are i.i.d. standard normal; an informative block is shifted by ``+mu``
for label 1 and ``-mu`` for label 0, and the ground-truth mask marks the
block's cells.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError, ParseError

T_STEPS = 50
N_FEATURES = 50
N_TRAIN = 1000
N_TEST = 100

# (time steps, features, time start, feature start); None start = moving
_BLOCKS = {
    "middle": (30, 30, 10, 10),
    "small_middle": (15, 15, 17, 17),
    "moving_middle": (30, 30, None, None),
    "moving_small_middle": (15, 15, None, None),
    "rare_time": (6, 40, 22, 5),
    "moving_rare_time": (6, 40, None, None),
    "rare_features": (40, 6, 5, 22),
    "moving_rare_features": (40, 6, None, None),
}
# two 20 x 20 blocks; (t0, f0) of block A then block B
_POSITIONAL = {
    "positional_time": ((4, 15), (26, 15)),
    "positional_feature": ((15, 4), (15, 26)),
}
_VANISHING = {"box_early": 3, "box_middle": 20, "box_late": 37}
VANISHING_BLOCK = (10, 20, 15)  # time steps, features, feature start

BENCHMARK_KINDS = tuple(_BLOCKS) + tuple(_POSITIONAL)
VANISHING_KINDS = tuple(_VANISHING)
ALL_KINDS = BENCHMARK_KINDS + VANISHING_KINDS


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    name: str = "dataset"
    mask_train: np.ndarray = None
    mask_test: np.ndarray = None
    background: object = None
    """Replacement distribution for removed features: a constant, ``"standard_normal"`` or None."""

    def __post_init__(self):
        self.y_train = np.asarray(self.y_train, dtype=np.int64)
        self.y_test = np.asarray(self.y_test, dtype=np.int64)
        for y in (self.y_train, self.y_test):
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise DataError(f"labels must lie in [0, {self.n_classes})")
        if len(self.x_train) != len(self.y_train) or len(self.x_test) != len(self.y_test):
            raise DataError("sample and label counts differ")

    @property
    def input_shape(self):
        return tuple(self.x_train.shape[1:])

    @property
    def has_ground_truth(self):
        return self.mask_train is not None and self.mask_test is not None

    def feature_ranges(self):
        """Per-feature (min, max) over the training split, broadcastable to one sample.

        Multi-axis samples reduce over every axis except the first (features
        of ``F x T``, channels of ``C x H x W``); flat samples keep one range
        per coordinate.
        """
        if len(self.x_train) == 0:
            raise DataError("empty training split")
        x = self.x_train
        axes = (0,) + tuple(range(2, x.ndim)) if x.ndim > 2 else (0,)
        return x.min(axis=axes, keepdims=True)[0], x.max(axis=axes, keepdims=True)[0]

    def subset(self, n_train=None, n_test=None):
        def cut(a, n):
            return None if a is None else a[:n]
        return Dataset(self.x_train[:n_train], self.y_train[:n_train], self.x_test[:n_test],
                       self.y_test[:n_test], self.n_classes, self.name, cut(self.mask_train, n_train),
                       cut(self.mask_test, n_test), self.background)


def _labels(n, rng):
    y = np.repeat([0, 1], [n - n // 2, n // 2])
    return rng.permutation(y)


def _synth(n, rng, place, mu, F, T):
    y = _labels(n, rng)
    x = rng.standard_normal((n, F, T))
    mask = np.zeros((n, F, T), dtype=bool)
    for i in range(n):
        place(i, y[i], x, mask, rng)
    return x, y, mask


def _block_placer(kind, mu, F, T):
    if kind in _BLOCKS:
        bt, bf, t0, f0 = _BLOCKS[kind]

        def place(i, label, x, mask, rng):
            ts = t0 if t0 is not None else int(rng.integers(0, T - bt + 1))
            fs = f0 if f0 is not None else int(rng.integers(0, F - bf + 1))
            x[i, fs:fs + bf, ts:ts + bt] += mu if label == 1 else -mu
            mask[i, fs:fs + bf, ts:ts + bt] = True
        return place
    if kind in _POSITIONAL:
        (ta, fa), (tb, fb) = _POSITIONAL[kind]

        def place(i, label, x, mask, rng):
            sign = 1.0 if label == 1 else -1.0
            x[i, fa:fa + 20, ta:ta + 20] += sign * mu
            x[i, fb:fb + 20, tb:tb + 20] -= sign * mu
            mask[i, fa:fa + 20, ta:ta + 20] = True
            mask[i, fb:fb + 20, tb:tb + 20] = True
        return place
    if kind in _VANISHING:
        bt, bf, f0 = VANISHING_BLOCK
        t0 = _VANISHING[kind]

        def place(i, label, x, mask, rng):
            x[i, f0:f0 + bf, t0:t0 + bt] += mu if label == 1 else -mu
            mask[i, f0:f0 + bf, t0:t0 + bt] = True
        return place
    raise ParameterError(f"unknown dataset kind {kind!r}")


def _generate(kind, mu, seed, n_train, n_test):
    if not mu > 0:
        raise ParameterError(f"mu must be positive (got {mu}); classes would be indistinguishable")
    place = _block_placer(kind, mu, N_FEATURES, T_STEPS)
    rng = np.random.default_rng(seed)
    xtr, ytr, mtr = _synth(n_train, rng, place, mu, N_FEATURES, T_STEPS)
    xte, yte, mte = _synth(n_test, rng, place, mu, N_FEATURES, T_STEPS)
    return Dataset(xtr, ytr, xte, yte, 2, kind, mtr, mte, "standard_normal")


def gen_benchmark(kind, mu=1.0, seed=0, n_train=N_TRAIN, n_test=N_TEST):
    if kind not in BENCHMARK_KINDS:
        raise ParameterError(f"unknown benchmark kind {kind!r}; expected one of {BENCHMARK_KINDS}")
    return _generate(kind, mu, seed, n_train, n_test)


def gen_vanishing(kind, mu=1.0, seed=0, n_train=N_TRAIN, n_test=N_TEST):
    if kind not in VANISHING_KINDS:
        raise ParameterError(f"unknown vanishing-saliency kind {kind!r}; expected one of {VANISHING_KINDS}")
    return _generate(kind, mu, seed, n_train, n_test)


def generate(kind, mu=1.0, seed=0, **kwargs):
    return gen_vanishing(kind, mu, seed, **kwargs) if kind in VANISHING_KINDS else gen_benchmark(kind, mu, seed, **kwargs)


# -- IDX ----------------------------------------------------------------------

IDX_IMAGES = 2051
IDX_LABELS = 2049


def read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an IDX header", offset=len(blob))
    (magic,) = struct.unpack(">i", blob[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic number {magic}, expected {expected_magic}", offset=0)
    ndim = 3 if expected_magic == IDX_IMAGES else 1
    head = 4 + 4 * ndim
    if len(blob) < head:
        raise FormatError(f"{path}: truncated dimension header", offset=len(blob))
    dims = struct.unpack(">" + "i" * ndim, blob[4:head])
    count = int(np.prod(dims))
    if len(blob) - head < count:
        raise FormatError(f"{path}: payload holds {len(blob) - head} bytes, header declares {count}",
                          offset=len(blob))
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES if array.ndim == 3 else IDX_LABELS
    with open(path, "wb") as fh:
        fh.write(struct.pack(">i", magic))
        fh.write(struct.pack(">" + "i" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_idx(images_path, labels_path, test_images_path=None, test_labels_path=None,
             test_fraction=0.2, seed=0):
    """Load MNIST-style IDX files, scaling pixels to [0, 1].

    Without explicit test files the samples are shuffled with ``seed`` and
    ``test_fraction`` of them held out.
    """
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    x = (images.astype(np.float64) / 255.0)[:, None]
    y = labels.astype(np.int64)
    if test_images_path is not None:
        xt = (read_idx(test_images_path, IDX_IMAGES).astype(np.float64) / 255.0)[:, None]
        yt = read_idx(test_labels_path, IDX_LABELS).astype(np.int64)
        if len(xt) != len(yt):
            raise FormatError(f"{len(xt)} test images but {len(yt)} test labels")
        x_train, y_train, x_test, y_test = x, y, xt, yt
    else:
        order = np.random.default_rng(seed).permutation(len(x))
        n_test = int(round(test_fraction * len(x)))
        test, train = order[:n_test], order[n_test:]
        x_train, y_train, x_test, y_test = x[train], y[train], x[test], y[test]
    n_classes = max(10, int(max(y_train.max(initial=0), y_test.max(initial=0))) + 1)
    return Dataset(x_train, y_train, x_test, y_test, n_classes, "mnist", background=0.0)


# -- CSV ----------------------------------------------------------------------

def _parse_shape(shape_spec):
    if isinstance(shape_spec, str):
        shape_spec = [int(v) for v in shape_spec.lower().replace("x", ",").split(",") if v.strip()]
    return tuple(int(v) for v in np.atleast_1d(shape_spec))


def _read_rows(path, width, prefix):
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = prefix + [f"f{i}" for i in range(width)]
        if header != expected:
            raise ParseError(f"header must be {','.join(expected[:3])},... with {len(expected)} columns "
                             f"(got {len(header)})", line=1, path=path)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(expected):
                raise ParseError(f"expected {len(expected)} columns, found {len(cells)}", line=lineno, path=path)
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise ParseError(f"non-numeric cell {bad!r}", line=lineno, path=path) from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(expected))


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv_table(path, shape_spec):
    shape = _parse_shape(shape_spec)
    width = int(np.prod(shape))
    table = _read_rows(path, width, ["label"])
    labels = table[:, 0]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise ParseError("label column must hold non-negative class indices", path=path)
    return table[:, 1:].reshape((len(table),) + shape), labels.astype(np.int64)


def read_mask_csv(path, shape_spec):
    shape = _parse_shape(shape_spec)
    table = _read_rows(path, int(np.prod(shape)), [])
    return table.reshape((len(table),) + shape) != 0


def mask_path_for(path):
    root, ext = os.path.splitext(path)
    return root + ".mask" + ext


def load_csv(path, shape_spec, test_path=None, n_classes=None, background=None):
    """Load ``label,f0,f1,...`` rows; sibling ``*.mask.csv`` files become ground truth."""
    x, y = read_csv_table(path, shape_spec)
    if test_path is not None:
        xt, yt = read_csv_table(test_path, shape_spec)
    else:
        xt, yt = x[:0], y[:0]
    masks = [None, None]
    for i, p in enumerate((path, test_path)):
        if p is not None and os.path.exists(mask_path_for(p)):
            masks[i] = read_mask_csv(mask_path_for(p), shape_spec)
    if n_classes is None:
        n_classes = max(2, int(max(y.max(initial=0), yt.max(initial=0))) + 1)
    name = os.path.splitext(os.path.basename(path))[0]
    return Dataset(x, y, xt, yt, n_classes, name, masks[0], masks[1], background)


def _fmt(v):
    return repr(float(v))


def write_csv_table(path, x, y):
    x = np.asarray(x).reshape(len(x), -1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["label"] + [f"f{i}" for i in range(x.shape[1])]) + "\n")
        for label, row in zip(y, x):
            fh.write(str(int(label)) + "," + ",".join(map(_fmt, row.tolist())) + "\n")


def write_mask_csv(path, masks):
    masks = np.asarray(masks).reshape(len(masks), -1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"f{i}" for i in range(masks.shape[1])) + "\n")
        for row in masks:
            fh.write(",".join("1" if v else "0" for v in row) + "\n")


def export_csv(dataset, prefix):
    """Write ``prefix.train.csv`` / ``prefix.test.csv`` plus mask siblings; returns the paths."""
    paths = {"train": prefix + ".train.csv", "test": prefix + ".test.csv"}
    write_csv_table(paths["train"], dataset.x_train, dataset.y_train)
    write_csv_table(paths["test"], dataset.x_test, dataset.y_test)
    if dataset.mask_train is not None:
        write_mask_csv(mask_path_for(paths["train"]), dataset.mask_train)
    if dataset.mask_test is not None:
        write_mask_csv(mask_path_for(paths["test"]), dataset.mask_test)
    return paths
