"""
Segment, describe, classify
===========================

The whole command-line workflow on a generated dataset: random UNet
weights, hybrid segmentation, a handcrafted-feature SVM and a held-out
evaluation.
"""

import sys
import tempfile
from pathlib import Path

from lesionforge.cli import main
from lesionforge.synthetic import write_blob_dataset

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="lesionforge-"))
print("working in", root)

train = write_blob_dataset(root / "train", 20, seed=1)
test = write_blob_dataset(root / "test", 10, seed=2)
net = root / "unet.udls"

main(["weights", "init-random", "--seed", "0", "--out", str(net)])
main(["segment", "--manifest", str(test), "--unet-weights", str(net), "--out", str(root / "seg")])

# no embedding networks here, so only the 200 handcrafted values are used
common = ["--unet-weights", str(net), "--handcrafted-only"]
main(["train-svm", "--manifest", str(train), "--model", str(root / "model.udls"),
      "--out", str(root / "train")] + common)
main(["evaluate", "--manifest", str(test), "--model", str(root / "model.udls"),
      "--out", str(root / "eval")] + common)
