import numpy as np
import pytest

from sgtrain import autodiff as ad
from sgtrain.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from sgtrain.errors import FormatError, ShapeError, SpecError
from sgtrain.models import DropoutTape, ModelSpec, build_model, expected_parameter_count
from sgtrain.training import TrainConfig, train
from sgtrain.datasets import Dataset

SPECS = [
    ModelSpec("mlp", (6,), 3, widths=(5, 4)),
    ModelSpec("mnist_cnn", (1, 12, 12), 10),
    ModelSpec("mnist_cnn", (1, 28, 28), 10),
    ModelSpec("tcn", (4, 10), 2, widths=(3, 5), dilations=(1, 2), kernel_size=3),
    ModelSpec("tcn", (50, 50), 2),
    ModelSpec("lstm", (3, 7), 2, widths=(6,)),
]


def hand_count(spec):
    """Parameter counts written out per architecture."""
    if spec.kind == "mlp":
        return (6 * 5 + 5) + (5 * 4 + 4) + (4 * 3 + 3)
    if spec.kind == "mnist_cnn":
        side = (spec.input_shape[1] - 4) // 2
        return (8 * 9 + 8) + (16 * 8 * 9 + 16) + (16 * side * side * 64 + 64) + (64 * 10 + 10)
    if spec.kind == "tcn" and spec.input_shape == (4, 10):
        block1 = 3 * 4 * 3 + 3 + 3 * 3 * 3 + 3 + 4 * 3
        block2 = 5 * 3 * 3 + 5 + 5 * 5 * 3 + 5 + 3 * 5
        return block1 + block2 + 5 * 2 + 2
    if spec.kind == "tcn":
        block1 = 16 * 50 * 5 + 16 + 16 * 16 * 5 + 16 + 50 * 16
        block = 2 * (16 * 16 * 5 + 16)
        return block1 + 2 * block + 16 * 2 + 2
    return 4 * 6 * 3 + 4 * 6 * 6 + 4 * 6 + 6 * 2 + 2


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.input_shape}")
def test_parameter_count_matches_closed_form(spec):
    model = build_model(spec)
    assert model.n_parameters() == expected_parameter_count(spec) == hand_count(spec)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.input_shape}")
def test_forward_shape_and_determinism(spec):
    model = build_model(spec)
    x = np.random.default_rng(0).normal(size=(3,) + spec.input_shape)
    a = model.forward(ad.Tensor(x)).data
    b = model.forward(ad.Tensor(x)).data
    assert a.shape == (3, spec.n_classes)
    assert np.array_equal(a, b)
    same = build_model(spec)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(model.parameters(), same.parameters()))


def test_mnist_cnn_single_sample_logits():
    model = build_model(ModelSpec("mnist_cnn", (1, 28, 28), 10))
    assert model.forward(np.zeros((1, 28, 28))).shape == (1, 10)


def test_mlp_zero_weights_uniform_softmax():
    model = build_model(ModelSpec("mlp", (4,), 3))
    for p in model.parameters():
        p.data[...] = 0
    logits = model.forward(np.ones((2, 4))).data
    assert np.all(logits == 0)
    assert np.allclose(ad.softmax(logits), 1 / 3)


def test_spec_validation():
    with pytest.raises(SpecError):
        ModelSpec("transformer", (4,), 2)
    with pytest.raises(SpecError):
        ModelSpec("lstm", (4,), 2)
    with pytest.raises(SpecError):
        ModelSpec("mnist_cnn", (28, 28), 10)
    with pytest.raises(SpecError):
        ModelSpec("mlp", (4,), 1)


def test_forward_shape_mismatch():
    model = build_model(ModelSpec("mlp", (4,), 2))
    with pytest.raises(ShapeError):
        model.forward(np.ones((2, 5)))


def test_tcn_causality_and_receptive_field():
    spec = ModelSpec("tcn", (3, 60), 2, widths=(4, 4, 4))
    model = build_model(spec)
    x = np.random.default_rng(1).normal(size=(1, 3, 60))
    feats = model.features(ad.Tensor(x)).data
    x2 = x.copy()
    x2[:, :, 40:] = 0.0
    feats2 = model.features(ad.Tensor(x2)).data
    assert np.array_equal(feats[..., :40], feats2[..., :40])
    assert model.receptive_field() == 1 + 2 * (5 - 1) * (1 + 2 + 4)
    # the head reads every one of the 50 steps of the benchmark sequences
    assert build_model(ModelSpec("tcn", (50, 50), 2)).receptive_field() >= 50


def test_lstm_head_reads_final_state():
    model = build_model(ModelSpec("lstm", (2, 5), 2, widths=(3,)))
    x = np.random.default_rng(2).normal(size=(1, 2, 5))
    h = ad.lstm(ad.Tensor(x), model.params["lstm.w_input"], model.params["lstm.w_hidden"],
                model.params["lstm.bias"]).data
    expected = h @ model.params["head.weight"].data + model.params["head.bias"].data
    assert np.allclose(model.forward(x).data, expected, atol=1e-14)


def test_lstm_forget_bias_is_one():
    model = build_model(ModelSpec("lstm", (2, 5), 2, widths=(3,)))
    b = model.params["lstm.bias"].data
    assert np.all(b[3:6] == 1.0)


@pytest.mark.parametrize("spec", [SPECS[0], SPECS[1], SPECS[3], SPECS[5]], ids=lambda s: s.kind)
def test_composed_loss_gradient(spec):
    model = build_model(spec)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2,) + spec.input_shape)
    y = rng.integers(0, spec.n_classes, size=2)
    # zero biases can put relu inputs exactly on the kink; move every parameter off it
    for p in model.params.values():
        p.data = p.data + rng.normal(0, 0.1, size=p.shape)
    for name, p in model.params.items():
        def f(t, name=name):
            saved = model.params[name]
            model.params[name] = t
            try:
                return ad.softmax_cross_entropy(model.forward(x), y)
            finally:
                model.params[name] = saved
        assert ad.finite_diff_check(f, p.data.copy()) < 1e-5, name


def test_dropout_tape_replays_masks():
    spec = ModelSpec("mnist_cnn", (1, 12, 12), 10)
    model = build_model(spec)
    x = np.random.default_rng(0).normal(size=(2, 1, 12, 12))
    tape = DropoutTape(np.random.default_rng(9))
    a = model.forward(x, training=True, dropout=tape).data
    b = model.forward(x, training=True, dropout=tape.replay()).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, model.forward(x).data)


def test_separable_toy_reaches_training_floor():
    """All four architectures fit a linearly separable 2-class toy set."""
    rng = np.random.default_rng(0)
    shapes = {"mlp": (8,), "mnist_cnn": (1, 8, 8), "tcn": (2, 8), "lstm": (2, 8)}
    for kind, shape in shapes.items():
        n = 64
        x = rng.normal(size=(n,) + shape)
        y = (x.reshape(n, -1).sum(axis=1) > 0).astype(int)
        x = x + (2 * y - 1).reshape((n,) + (1,) * len(shape)) * 0.5
        ds = Dataset(x, y, x[:8], y[:8], 2, "toy")
        spec = ModelSpec(kind, shape, 2, widths=(4, 8, 16) if kind == "mnist_cnn" else (),
                         dropout=(0.0, 0.0) if kind == "mnist_cnn" else ())
        report, _ = train(build_model(spec), ds, TrainConfig(epochs=200, batch_size=64, lr=0.01,
                                                             optimizer="adam", seed=0))
        best = max(report.train_acc)
        assert best >= 0.95, (kind, best)


# -- checkpoints


def test_checkpoint_round_trip(tmp_path):
    for i, spec in enumerate(SPECS):
        model = build_model(ModelSpec.from_dict(dict(spec.to_dict(), seed=5)))
        path = tmp_path / f"m{i}.ckpt"
        save_checkpoint(model, path, "saliency_guided", 3, {"state": 1})
        back = load_checkpoint(path)
        assert back.spec == model.spec
        for name in model.params:
            assert np.max(np.abs(back.params[name].data - model.params[name].data)) == 0
        x = np.random.default_rng(i).normal(size=(10,) + spec.input_shape)
        assert np.array_equal(back.predict(x), model.predict(x))
        assert back.meta == {"mode": "saliency_guided", "epochs": 3, "rng_state": {"state": 1}}


def test_checkpoint_file_layout(tmp_path):
    model = build_model(SPECS[0])
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    mlen = int.from_bytes(blob[8:16], "little")
    assert len(blob) == 16 + mlen + 8 * model.n_parameters()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_model(SPECS[0]), path)
    blob = path.read_bytes()
    cases = {
        "magic": b"XGTCKPT1" + blob[8:],
        "truncated": blob[:-9],
        "short": blob[:10],
        "version": blob.replace(b'"format_version": 1', b'"format_version": 9'),
        "shape": blob.replace(b'"shape": [6, 5]', b'"shape": [5, 6]'),
    }
    for name, data in cases.items():
        bad = tmp_path / f"{name}.ckpt"
        bad.write_bytes(data)
        with pytest.raises(FormatError) as info:
            load_checkpoint(bad)
        assert info.value.offset is not None
        assert "byte offset" in str(info.value)
    bad = tmp_path / "magic.ckpt"
    with pytest.raises(FormatError) as info:
        load_checkpoint(bad)
    assert info.value.offset == 0
