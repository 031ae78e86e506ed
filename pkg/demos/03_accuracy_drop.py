"""
Accuracy drop when salient features are removed
===============================================

A trained model loses accuracy fastest when the features its saliency
ranks highest are replaced first. The curve is compared against random
rankings, and the plot is written as SVG.
"""

from sgtrain import evaluation as ev
from sgtrain.report import svg_line_plot

ds, model, _ = ev.run_cell("tcn", "rare_features", "saliency_guided", seed=0)
targets = ev.attribution_targets(model, ds.x_test)
series = {}
for method in ("gradient", "random"):
    scores = ev.saliency_scores(model, ds.x_test, targets, method)
    curve = ev.accuracy_drop_curve(model, ds, scores)
    series[method] = (curve.levels, curve.values)
    print(f"{method:9s} AUC {curve.summary:.3f}  ", " ".join(f"{v:.2f}" for v in curve.values))

with open("accuracy_drop.svg", "w", encoding="utf-8") as fh:
    fh.write(svg_line_plot(series, "accuracy drop, rare_features", "fraction removed", "test accuracy"))
print("wrote accuracy_drop.svg")
