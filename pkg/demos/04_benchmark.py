"""
Argmax vs ICM vs closed-form inference on a synthetic corpus
============================================================

A boundary readout is trained on held-out scenes. On each of 20 test scenes
we compare the raw unary argmax, ICM on a Potts model over the same graph,
and the closed-form solution, scored by pooled (PP) and per-image (PI) IOU.
"""

from bnf.bench import BenchConfig, run_bench

report = run_bench(BenchConfig(scenes=20))

print("%-8s %8s %8s" % ("method", "PP-IOU", "PI-IOU"))
for name in ("argmax", "icm", "bnf"):
    print("%-8s %8.3f %8.3f" % (name, report["pp_iou"][name], report["pi_iou"][name]))
print("boundary training loss %.4f -> %.4f" % tuple(report["boundary_train_loss"]))
print("%.1f s total" % report["seconds"])
