#!/usr/bin/env python3
"""Smoke test for the eenn_py extension module.

Builds nothing itself: expects the extension to exist already, e.g.

    cargo build -p eenn-python --release --features extension-module
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_extension():
    candidates = [
        REPO / "target" / "release" / "libeenn_py.so",
        REPO / "target" / "debug" / "libeenn_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "extension not built; run: "
            "cargo build -p eenn-python --release --features extension-module"
        )
    staging = Path(tempfile.mkdtemp(prefix="eenn_py_"))
    shutil.copy2(built, staging / "eenn_py.so")
    sys.path.insert(0, str(staging))
    import eenn_py

    return eenn_py


def main():
    eenn = import_extension()

    # Numeric helpers.
    probs = eenn.softmax([0.0, math.log(3.0)])
    assert abs(probs[0] - 0.25) < 1e-12 and abs(probs[1] - 0.75) < 1e-12
    assert abs(eenn.change([1.0, 0.0], [0.0, 1.0]) - math.sqrt(2.0)) < 1e-12

    # Oracle model with the benchmark cost table.
    model = eenn.Model.oracle(
        num_classes=8,
        input_dim=16,
        accuracies=[0.85, 0.92, 0.96, 0.96],
        cumulative_macs=[100, 300, 600, 1000],
        seed=7,
    )
    assert model.num_exits == 4
    assert model.single_exit_macs() == 1000
    assert model.full_macs() == 1000
    assert model.direct_macs(0) == 100

    # High-correlation synthetic stream.
    stream = eenn.Stream.scenes(
        num_scenes=20,
        samples_per_scene=20,
        input_dim=16,
        num_classes=8,
        prototype_spread=1.0,
        jitter=0.02,
        seed=11,
    )
    assert len(stream) == 400
    assert len(set(stream.labels())) > 1

    # Streams survive a JSONL round trip.
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "stream.jsonl")
        stream.save(path)
        reloaded = eenn.Stream.load(path)
        assert reloaded.labels() == stream.labels()
        assert reloaded.sample(0) == stream.sample(0)

    reference = eenn.final_classifier_accuracy(model, stream)
    assert 0.9 <= reference <= 1.0

    # Infinite threshold: one full evaluation, everything else at exit 0.
    record = eenn.evaluate(
        model, stream, "difference_detection", threshold=float("inf")
    )
    assert record["num_scenes"] == 1
    expected_mean = (1 * 1000 + 399 * 100) / 400
    assert abs(record["mean_macs"] - expected_mean) < 1e-9

    # Threshold sweep over suggested grid: Difference Detection finds a
    # configuration far below the single-exit cost at near-reference accuracy.
    grid = eenn.suggest_grid(model, stream, count=60)
    assert grid == sorted(grid)
    dd = eenn.sweep(model, stream, "difference_detection", grid)
    tp = eenn.sweep(model, stream, "temporal_patience", grid)
    assert len(dd) == len(grid) and len(tp) == len(grid)

    good = [
        r
        for r in dd
        if r["relative_macs"] <= 0.30 and r["accuracy"] >= reference - 0.05
    ]
    assert good, "no cheap high-accuracy Difference Detection point found"

    # Temporal Patience never collapses the way Difference Detection can.
    assert min(r["accuracy"] for r in tp) >= min(r["accuracy"] for r in dd)

    # Exit shares are distributions.
    for r in dd + tp:
        assert abs(sum(r["exit_shares"]) - 1.0) < 1e-9

    # Baselines run through the same surface.
    conf = eenn.evaluate(model, stream, "confidence", threshold=0.13)
    pat = eenn.evaluate(model, stream, "patience", patience_window=2)
    bud = eenn.evaluate(model, stream, "budget_a_priori", budget=600)
    for r in (conf, pat, bud):
        assert 0.0 <= r["accuracy"] <= 1.0
    assert bud["mean_macs"] <= 600

    best = min(good, key=lambda r: r["relative_macs"])
    print(
        "smoke test PASS: reference accuracy "
        f"{reference:.4f}; difference_detection reached "
        f"relative_macs={best['relative_macs']:.4f} at "
        f"accuracy={best['accuracy']:.4f}"
    )


if __name__ == "__main__":
    main()
