"""Desk-scale training run: 300 fields of 256 px, 60 epochs, then AP on 100
held-out fields. Produces the weights evaluated by the acceptance suite.

    python demos/desk_training.py [work_dir]

Takes about two hours on one CPU core.
"""
import json
import shutil
import sys
from pathlib import Path

from deepway.cli import main

HERE = Path(__file__).resolve().parent
TRAIN_SEED, TEST_SEED = 1, 2


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        sys.exit(code)


if __name__ == "__main__":
    work = Path(sys.argv[1] if len(sys.argv) > 1 else "desk_run")
    run("gen", "--seed", TRAIN_SEED, "--count", 300, "--size", 256, "--out", work / "train")
    run("gen", "--seed", TEST_SEED, "--count", 100, "--size", 256, "--out", work / "test")
    run("-v", "train", "--data", work / "train", "--epochs", 60, "--batch", 16, "--lr", 3e-4,
        "--lambda-wp", 0.7, "--lambda-nowp", 0.3, "--seed", 0, "--out", work / "desk256.dway")
    run("eval", "--data", work / "test", "--weights", work / "desk256.dway", "--rc", 8, 4, 2,
        "--out", work / "eval.json", "--csv", work / "pr.csv")
    dest = HERE / "weights"
    dest.mkdir(exist_ok=True)
    shutil.copy(work / "desk256.dway", dest / "desk256.dway")
    shutil.copy(work / "desk256.loss.json", dest / "desk256.loss.json")
    report = json.loads((work / "eval.json").read_text())
    (dest / "desk256.eval.json").write_text(json.dumps(
        {"train_seed": TRAIN_SEED, "test_seed": TEST_SEED, "ap": report["ap"],
         "mean_coverage": report["coverage"]["mean"]}, indent=1) + "\n")
    print(json.dumps(report["ap"]))
