"""
Traditional versus saliency-guided training
===========================================

Trains the same TCN on the ``middle`` benchmark twice, once plainly and
once with the bottom half of input-gradient features masked every step,
then compares how well gradient saliency finds the informative block,
averaged over three seeds. Single seeds vary a lot.
"""

from sgtrain import evaluation as ev

report = ev.benchmark_sweep(architectures=("tcn",), methods=("gradient",), kinds=("middle",), seeds=(0, 1, 2),
                            log=print)
for mode in ("traditional", "saliency_guided"):
    acc = report.mean(mode=mode, metric="test_acc")
    aup = report.mean(mode=mode, method="gradient", metric="Diff(AUP)")
    aur = report.mean(mode=mode, method="gradient", metric="Diff(AUR)")
    print(f"{mode:16s} test acc {acc:.3f}  Diff(AUP) {aup:.3f}  Diff(AUR) {aur:.3f}")
