"""
The command-line pipeline from Python
=====================================

``gen-data``, ``train`` (diverse and baseline) and ``eval`` write
content-addressed run directories under one output root.
"""
import os
import tempfile

from localind.cli import main

out = tempfile.mkdtemp()
common = ["--experiment", "case2", "--seed", "3", "--n", "1000", "--out", out]
net = ["--hidden", "32,32"]

main(["gen-data", *common])
main(["train", *common, *net, "--M", "2", "--lambda", "0.1", "--epochs", "40"])
main(["train", *common, *net, "--baseline", "--epochs", "20"])
# eval finds the matching train run and the baseline trained on the same data
main(["eval", *common, *net, "--M", "2", "--epochs", "40", "--grid-resolution", "20"])

for root, _, files in sorted(os.walk(out)):
    depth = root[len(out):].count(os.sep)
    print("  " * depth + os.path.basename(root) + "/", sorted(files)[:6])
