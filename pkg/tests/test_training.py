import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgtrain import autodiff as ad
from sgtrain.checkpoint import load_checkpoint, save_checkpoint
from sgtrain.datasets import Dataset, generate
from sgtrain.errors import DataError, NumericError, ParameterError
from sgtrain.models import ModelSpec, build_model
from sgtrain.training import (MaskStrategy, TrainConfig, TrainReport, fraction_count, make_optimizer,
                              mask_bottom_k, rank_features, sgt_step, train)

from oracles import kl_rows, selection_sort_order

ZERO = MaskStrategy("fixed_value", value=0.0)


def small_dataset(seed=0, n=64, shape=(4, 12)):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n,) + shape)
    y = np.arange(n) % 2
    x[y == 1, :2, 4:8] += 1.5
    x[y == 0, :2, 4:8] -= 1.5
    ds = Dataset(x, y, x[:16], y[:16], 2, "toy", background="standard_normal")
    return ds


def test_fraction_count():
    assert fraction_count(0.5, 784) == 392
    assert fraction_count(0.3, 10) == 3
    assert fraction_count(0.0, 10) == 0
    assert fraction_count(0.01, 2500) == 25
    assert fraction_count(0.101, 10) == 2


# -- ranking and masking


def test_rank_examples():
    assert rank_features(np.array([0.5, 0.1, 0.3])).tolist() == [1, 2, 0]
    assert rank_features(np.full(6, 2.0)).tolist() == list(range(6))
    assert rank_features(np.array([-3.0, 1.0, 2.0]), "absolute").tolist() == [1, 2, 0]


def test_rank_rejects_nan_and_bad_sort():
    with pytest.raises(DataError):
        rank_features(np.array([0.0, np.nan]))
    with pytest.raises(ParameterError):
        rank_features(np.zeros(3), "magnitude")


def test_rank_matches_selection_sort():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.integers(-5, 5, size=100).astype(float)
        assert rank_features(v).tolist() == selection_sort_order(v.tolist())


def test_rank_batch_rows_independent():
    s = np.random.default_rng(1).normal(size=(3, 2, 5))
    r = rank_features(s)
    for i in range(3):
        assert r[i].tolist() == rank_features(s[i].ravel()).tolist()


def test_mask_examples():
    x = np.array([5.0, 6.0, 7.0])
    assert np.array_equal(mask_bottom_k(x, np.array([1, 2, 0]), 0, ZERO), x)
    assert np.all(mask_bottom_k(x, np.array([1, 2, 0]), 3, ZERO) == 0)
    assert mask_bottom_k(x, np.array([1, 2, 0]), 2, ZERO).tolist() == [5.0, 0.0, 0.0]
    with pytest.raises(ParameterError):
        mask_bottom_k(x, np.array([1, 2, 0]), 4, ZERO)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 0.99), st.sampled_from(["fixed_value", "uniform_in_range"]))
def test_mask_touches_exactly_k(seed, k, kind):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 6))
    s = rng.normal(size=(3, 4, 6))
    count = fraction_count(k, 24)
    strat = ZERO if kind == "fixed_value" else MaskStrategy("uniform_in_range", np.full((4, 1), 10.0),
                                                            np.full((4, 1), 11.0))
    out = mask_bottom_k(x, rank_features(s), count, strat, rng)
    changed = (out != x).reshape(3, -1)
    order = rank_features(s)
    for i in range(3):
        chosen = np.zeros(24, bool)
        chosen[order[i, :count]] = True
        # unmasked coordinates are bit-identical; masked ones differ (fills never collide here)
        assert np.array_equal(out[i].ravel()[~chosen], x[i].ravel()[~chosen])
        if kind == "uniform_in_range":
            assert changed[i].sum() == count
            assert np.all((out[i].ravel()[chosen] >= 10) & (out[i].ravel()[chosen] <= 11))


def test_mask_grouped_pixels_redraw_every_channel():
    x = np.zeros((3, 2, 2))
    ranking = np.array([[3, 0, 1, 2]])
    lo = np.array([0.0, 10.0, 20.0]).reshape(3, 1, 1)
    strat = MaskStrategy("uniform_in_range", lo, lo + 1)
    out = mask_bottom_k(x[None], ranking, 1, strat, np.random.default_rng(0))[0]
    assert np.all(out[:, :1, :] == 0) and np.all(out[:, 1, 0] == 0)
    assert np.all((out[:, 1, 1] >= lo.ravel()) & (out[:, 1, 1] <= lo.ravel() + 1))
    assert len(set(out[:, 1, 1])) == 3


def test_carry_forward():
    strat = MaskStrategy("carry_forward_salient")
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    # mask positions 0, 2 and 3
    out = mask_bottom_k(x, np.array([0, 2, 3, 1, 4]), 3, strat)
    assert out.tolist() == [2.0, 2.0, 2.0, 2.0, 5.0]
    rows = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = mask_bottom_k(rows, np.array([2, 5, 0, 1, 3, 4]), 2, strat)
    assert out.tolist() == [[1.0, 2.0, 2.0], [4.0, 5.0, 5.0]]


def test_mask_strategy_validation():
    with pytest.raises(ParameterError):
        MaskStrategy("blur")
    with pytest.raises(ParameterError):
        MaskStrategy("uniform_in_range", np.ones(2), np.zeros(2))
    with pytest.raises(ParameterError):
        MaskStrategy("uniform_in_range")


# -- configuration


@pytest.mark.parametrize("kwargs", [dict(k=1.0), dict(k=-0.1), dict(lam=-1), dict(lr=0), dict(mode="x"),
                                    dict(mask="x"), dict(batch_size=0)])
def test_config_validation(kwargs):
    with pytest.raises(ParameterError):
        TrainConfig(**kwargs)


def test_optimizers():
    for name in ("sgd", "sgd_momentum", "adam"):
        p = ad.Parameter(np.array([1.0, -2.0]), "w")
        opt = make_optimizer(name, [p], 0.1)
        for _ in range(50):
            p.grad = 2 * p.data
            opt.step()
        assert np.all(np.abs(p.data) < 1.0), name
    with pytest.raises(ParameterError):
        make_optimizer("rmsprop", [], 0.1)


def test_sgd_step_is_plain_update():
    p = ad.Parameter(np.array([1.0]), "w")
    p.grad = np.array([0.5])
    make_optimizer("sgd", [p], 0.2).step()
    assert p.data.tolist() == [1.0 - 0.2 * 0.5]


# -- steps and training


def _rngs():
    return np.random.default_rng(1), np.random.default_rng(2)


def test_step_loss_equals_ce_plus_lambda_kl():
    ds = small_dataset()
    model = build_model(ModelSpec("mlp", ds.input_shape, 2, widths=(8,)))
    x, y = ds.x_train[:8], ds.y_train[:8]
    cfg = TrainConfig(k=0.5, lam=0.7, lr=1e-9, mode="saliency_guided")
    strat = MaskStrategy("fixed_value", value=0.0)
    before = model.predict(x)
    # recompute the masked batch independently from the same rule
    xt = ad.Tensor(x, requires_grad=True)
    logits = model.forward(xt)
    (g,) = ad.grad(ad.tsum(ad.getitem(logits, (np.arange(8), y))), [xt])
    masked = x.copy().reshape(8, -1)
    count = math.ceil(0.5 * masked.shape[1])
    for i in range(8):
        masked[i, np.argsort(g[i].ravel(), kind="stable")[:count]] = 0.0
    after = model.predict(masked.reshape(x.shape))
    ce = -np.mean([math.log(math.exp(r[c]) / np.exp(r).sum()) for r, c in zip(before, y)])
    expected = ce + 0.7 * kl_rows(before, after)
    r = sgt_step(model, x, y, cfg, make_optimizer("sgd", model.parameters(), 1e-9), *_rngs(), strat)
    assert abs(r.loss - expected) < 1e-12
    assert abs(r.ce - ce) < 1e-12 and r.kl >= 0


def _train(mode, **kw):
    ds = small_dataset()
    spec = ModelSpec("mnist_cnn", (1, 8, 8), 2, widths=(2, 3, 8)) if kw.pop("cnn", False) else \
        ModelSpec("tcn", ds.input_shape, 2, widths=(4,), dilations=(1,), kernel_size=3)
    if spec.kind == "mnist_cnn":
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 1, 8, 8))
        y = np.arange(64) % 2
        x[y == 1, :, 2:5, 2:5] += 1
        ds = Dataset(x, y, x[:8], y[:8], 2, "img", background=0.0)
    cfg = TrainConfig(mode=mode, epochs=2, batch_size=16, lr=1e-2, optimizer="adam", seed=5, **kw)
    report, model = train(build_model(spec), ds, cfg)
    return report, model


@pytest.mark.parametrize("cnn", [False, True], ids=["tcn", "cnn-with-dropout"])
def test_degenerate_runs_match_traditional(cnn):
    ref_report, ref = _train("traditional", cnn=cnn)
    for kw in (dict(lam=0.0, k=0.5), dict(k=0.0, lam=1.0)):
        report, model = _train("saliency_guided", cnn=cnn, **kw)
        for name in ref.params:
            assert np.array_equal(ref.params[name].data, model.params[name].data), (kw, name)
        assert report.ce == ref_report.ce
    _, k0 = _train("saliency_guided", cnn=cnn, k=0.0)
    assert _train("saliency_guided", cnn=cnn, k=0.0)[0].kl == [0.0, 0.0]


def test_guided_training_differs_and_is_reproducible():
    _, a = _train("saliency_guided")
    _, b = _train("saliency_guided")
    _, t = _train("traditional")
    assert a.fingerprint() == b.fingerprint() != t.fingerprint()


def test_report_series_and_csv(tmp_path):
    report, _ = _train("saliency_guided")
    assert all(len(s) == 2 for s in (report.loss, report.ce, report.kl, report.train_acc, report.test_acc))
    assert min(report.kl) >= -1e-12
    path = tmp_path / "r.csv"
    report.to_csv(path)
    assert path.read_text().splitlines()[0] == "epoch,loss,ce,kl,train_acc,test_acc"
    back = TrainReport.from_csv(path)
    assert back.loss == report.loss and back.kl == report.kl and back.test_acc == report.test_acc


def test_fine_tune_from_checkpoint(tmp_path):
    _, base = _train("traditional")
    path = tmp_path / "base.ckpt"
    save_checkpoint(base, path)
    ds = small_dataset()
    cfg = TrainConfig(mode="fine_tune", epochs=1, batch_size=16, lr=1e-3, optimizer="adam",
                      checkpoint_in=str(path))
    report, tuned = train(build_model(base.spec), ds, cfg, checkpoint_out=tmp_path / "tuned.ckpt")
    assert tuned.meta["mode"] == "fine_tuned" and tuned.meta["epochs"] == 3
    assert report.kl[0] > 0
    assert load_checkpoint(tmp_path / "tuned.ckpt").fingerprint() == tuned.fingerprint()


def test_empty_dataset_rejected():
    ds = small_dataset()
    empty = Dataset(ds.x_train[:0], ds.y_train[:0], ds.x_test, ds.y_test, 2)
    with pytest.raises(DataError):
        train(build_model(ModelSpec("mlp", ds.input_shape, 2)), empty, TrainConfig())


def test_numeric_failure_detected():
    ds = small_dataset()
    model = build_model(ModelSpec("mlp", ds.input_shape, 2))
    model.params["fc0.weight"].data[0, 0] = np.nan
    with pytest.raises(NumericError):
        train(model, ds, TrainConfig(mode="traditional", epochs=1))


def test_kl_decreases_on_middle():
    ds = generate("middle", 1.0, 0)
    model = build_model(ModelSpec("tcn", ds.input_shape, 2, seed=0))
    cfg = TrainConfig(k=0.5, epochs=3, batch_size=32, lr=1e-2, optimizer="adam", mode="saliency_guided")
    report, _ = train(model, ds, cfg)
    assert np.mean(report.kl_last_epoch_steps) < np.mean(report.kl_first_epoch_steps)
