import io
import os
import re

from sgtrain import evaluation as ev
from sgtrain.checkpoint import load_checkpoint
from sgtrain.cli import main, read_saliency_dump
from sgtrain.datasets import load_csv
from sgtrain.report import read_summary_csv, svg_line_plot
from sgtrain.training import TrainReport

SMALL = ["--data-n-train", "64", "--data-n-test", "16"]
TINY_TCN = ["--model-widths", "4", "--epochs", "1", "--train-batch-size", "16"]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def ok(*argv):
    code, out, err = run(*argv)
    assert code == 0, err
    return out


def files(directory):
    return {name: open(os.path.join(directory, name), "rb").read() for name in sorted(os.listdir(directory))}


def test_gen_data_byte_identical(tmp_path):
    for name in ("a", "b"):
        ok("gen-data", "--kind", "middle", "--seed", 7, "--out", tmp_path / name, *SMALL)
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert list(a) == ["middle_seed7.test.csv", "middle_seed7.test.mask.csv", "middle_seed7.train.csv",
                       "middle_seed7.train.mask.csv"]
    assert a == b
    ds = load_csv(tmp_path / "a" / "middle_seed7.train.csv", "50x50")
    assert ds.x_train.shape == (64, 50, 50) and ds.mask_train.sum() == 64 * 900


def test_train_k0_matches_traditional(tmp_path):
    common = ["--kind", "middle", "--seed", 3, *SMALL, *TINY_TCN]
    ok("train", "--mode", "traditional", "--out", tmp_path / "t", *common)
    ok("train", "--mode", "saliency_guided", "--k", 0, "--lambda", 1, "--out", tmp_path / "s", *common)
    t = load_checkpoint(tmp_path / "t" / "model.ckpt")
    s = load_checkpoint(tmp_path / "s" / "model.ckpt")
    for name in t.params:
        assert t.params[name].data.tobytes() == s.params[name].data.tobytes()
    # the payload after the metadata block is the same byte string
    tb = (tmp_path / "t" / "model.ckpt").read_bytes()
    sb = (tmp_path / "s" / "model.ckpt").read_bytes()
    n = 8 * t.n_parameters()
    assert tb[-n:] == sb[-n:]
    assert t.meta["mode"] == "traditional" and s.meta["mode"] == "saliency_guided"


def test_pipeline_is_reproducible_and_closed(tmp_path):
    for name in ("a", "b"):
        d = tmp_path / name
        common = ["--kind", "middle", "--seed", 1, "--out", d, *SMALL]
        ok("gen-data", *common)
        ok("train", "--mode", "saliency_guided", *common, *TINY_TCN)
        ok("saliency", "--checkpoint", d / "model.ckpt", "--methods", "gradient,smoothgrad", "--limit", 3,
           *common)
        ok("eval-drop", "--checkpoint", d / "model.ckpt", "--levels", "0,0.5,1", "--seeds", "0,1", *common)
        ok("report", "--out", d, d / "drop_metrics.csv", d / "drop_saliency_guided_gradient_seed0.csv",
           d / "drop_saliency_guided_gradient_seed1.csv", d / "train_report.csv")
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    d = tmp_path / "a"
    # every artifact is readable by the package's own loaders
    load_csv(d / "middle_seed1.train.csv", "50x50", test_path=d / "middle_seed1.test.csv")
    load_checkpoint(d / "model.ckpt")
    assert len(TrainReport.from_csv(d / "train_report.csv").loss) == 1
    dump = read_saliency_dump(d / "saliency.csv")
    assert set(dump) == {"gradient", "smoothgrad"} and dump["gradient"][1].shape == (3, 2500)
    assert len(ev.MetricReport.from_csv(d / "drop_metrics.csv").rows) == 2
    curve = ev.EvalCurve.from_csv(d / "drop_saliency_guided_gradient_seed0.csv")
    assert curve.levels == (0.0, 0.5, 1.0)
    assert read_summary_csv(d / "summary.csv")[0]["metric"] == "AUC"
    svg = (d / "curves.svg").read_text()
    assert svg.count("<polyline") == 2 and svg.count("<!-- series:") == 2
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_report_plot_has_one_polyline_per_method_and_mode(tmp_path):
    rep = ev.MetricReport()
    for mode in ("traditional", "saliency_guided"):
        for method in ("gradient", "integrated_gradients"):
            for kind in ("middle", "rare_time"):
                for seed in (0, 1):
                    rep.add("tcn", method, kind, mode, seed, "Diff(AUP)", 0.1 * seed + (mode == "traditional"))
    rep.to_csv(tmp_path / "m.csv")
    ok("report", "--out", tmp_path / "r", tmp_path / "m.csv")
    svg = (tmp_path / "r" / "plot_Diff_AUP.svg").read_text()
    names = re.findall(r"<!-- series: (.*?) -->", svg)
    assert len(names) == 4 == svg.count("<polyline")
    assert len(set(names)) == 4
    assert "<text" in svg and "Diff(AUP)" in svg
    table = (tmp_path / "r" / "summary.txt").read_text()
    assert "saliency_guided" in table and "traditional" in table
    summary = read_summary_csv(tmp_path / "r" / "summary.csv")
    row = next(r for r in summary if r["mode"] == "traditional" and r["method"] == "gradient"
               and r["kind"] == "middle")
    assert row["n"] == 2 and abs(row["mean"] - 1.05) < 1e-12


def test_svg_is_deterministic():
    series = {"b": ((0, 0.5, 1), (1, 0.4, 0.1)), "a": ((0, 1), (0.2, 0.3))}
    one = svg_line_plot(series, "t", "x", "y")
    assert one == svg_line_plot(dict(reversed(list(series.items()))), "t", "x", "y")
    assert one.index("series: a") < one.index("series: b")


def test_exit_codes(tmp_path):
    code, _, err = run("fly")
    assert code == 1 and err.startswith("sgtrain: error:") and err.count("\n") == 1
    code, _, err = run("train", "--epochs", "many")
    assert code == 2 and "train.epochs" in err
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[train]\nlambda = banana\n")
    code, _, err = run("train", "--config", cfg)
    assert code == 2 and "bad.cfg:2:" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("label,f0,f1\n0,1\n")
    code, _, err = run("train", "--data-kind", "csv", "--path", bad, "--data-shape", "2", "--model", "mlp")
    assert code == 3 and "bad.csv:2:" in err
    code, _, err = run("train", "--data-kind", "csv", "--path", tmp_path / "absent.csv", "--data-shape", "2")
    assert code == 2 and "absent.csv" in err
    code, _, err = run("eval-drop", "--checkpoint", tmp_path / "absent.ckpt", "--out", tmp_path)
    assert code == 3
    inf = tmp_path / "inf.csv"
    inf.write_text("label,f0,f1\n0,inf,1\n1,-inf,2\n")
    code, _, err = run("train", "--data-kind", "csv", "--path", inf, "--data-shape", "2", "--model", "mlp",
                       "--epochs", 1, "--out", tmp_path / "nan")
    assert code == 4 and "non-finite" in err
    code, out, _ = run("--help")
    assert code == 0


def test_train_from_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[data]\nkind = rare_time\nn_train = 32\nn_test = 8\n[model]\nkind = lstm\nwidths = 4\n"
                   "[train]\nmode = saliency_guided\nk = 0.3\nepochs = 2\n[out]\ndirectory = "
                   + str(tmp_path / "o") + "\n")
    ok("train", "--config", cfg, "--epochs", 1)
    rep = TrainReport.from_csv(tmp_path / "o" / "train_report.csv")
    assert len(rep.loss) == 1
    assert load_checkpoint(tmp_path / "o" / "model.ckpt").spec.kind == "lstm"


def test_benchmark_pipeline_direction(tmp_path):
    """gen-data, train, eval-benchmark, report on middle: guided Diff(AUP) beats traditional."""
    d = tmp_path / "p"
    ok("gen-data", "--kind", "middle", "--seed", 0, "--out", d)
    ok("train", "--kind", "middle", "--seed", 0, "--mode", "saliency_guided", "--optimizer", "adam",
       "--epochs", 1, "--out", d, *SMALL)
    ok("eval-benchmark", "--eval-kinds", "middle", "--eval-archs", "tcn", "--seeds", "0,1", "--out", d)
    ok("report", "--out", d, d / "benchmark.csv")
    summary = read_summary_csv(d / "summary.csv")
    means = {r["mode"]: r["mean"] for r in summary
             if r["arch"] == "tcn" and r["method"] == "gradient" and r["metric"] == "Diff(AUP)"}
    assert means["saliency_guided"] > means["traditional"], means
    assert os.path.exists(d / "plot_Diff_AUP.svg")
