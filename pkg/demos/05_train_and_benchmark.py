"""
Train the four methods and compare them
=======================================

A deliberately small run (a couple of minutes). The default regimen used by
the acceptance tests is the same code with 2000 scenes and 20+20 epochs.

After only three epochs the entropy spread across patches is narrow, so the
entropy-only allocation puts every patch on the same length and its rows
match fixed_rate exactly. The k heatmaps show this.
"""
from collections import defaultdict

import numpy as np

from saoosc import pipeline as P
from saoosc.config import load_config
from saoosc.metrics import read_report_csv

cfg = load_config(None, ["data.n_train=300", "data.n_test=40", "train.pretrain_epochs=3",
                         "train.joint_epochs=3", "channel.snr_list=5,10,inf"])
train = P.load_dataset(cfg, "train")
for method in cfg.experiment.methods:
    system = P.train_method(cfg, method, train, "out/demo05")
    print(f"{method:20s} eta={system.rate.eta:.4g}")

csv_path = P.run_benchmark(cfg, "out/demo05")
rows = read_report_csv(csv_path)
table = defaultdict(list)
for r in rows:
    table[(r["method"], r["snr_db"])].append(r)

print(f"{'method':20s} {'snr':>5s} {'cbr':>7s} {'SAD':>6s} {'high':>6s} {'bg':>6s}")
for (method, snr), rs in sorted(table.items()):
    def mean(key):
        vals = [r[key] for r in rs if r[key] is not None]
        return np.mean(vals) if vals else float("nan")
    print(f"{method:20s} {snr:5.0f} {mean('cbr'):7.4f} {mean('sad_db'):6.2f} {mean('psnr_high'):6.2f} {mean('psnr_bg'):6.2f}")
print("heatmaps in out/demo05/heatmaps")
