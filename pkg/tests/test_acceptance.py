"""Acceptance gate: nine criteria, one printed PASS/FAIL line each.

Each criterion records its verdict in ``VERDICTS``; the conftest terminal
summary hook prints those lines at the end of every pytest run, one per
criterion, regardless of capture mode. Tolerances and thresholds are pinned
in-line where each criterion asserts them.
"""

import csv
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from ct_classify.augment import AugmentationSpec, apply_augmentation
from ct_classify.cli import entrypoint
from ct_classify.dataset import load_manifest
from ct_classify.imaging import (ClaheParams, GrayImage, Histogram, clahe,
                                 clip_redistribute)
from ct_classify.metrics import aggregate, confusion_matrix
from ct_classify.nn import (Dense, MaxPool2x2, ReLU, Softmax, build_model,
                            count_params)
from ct_classify.synth import generate_synthetic_dataset
from ct_classify.train import (cross_entropy, load_checkpoint, save_checkpoint,
                               softmax_cross_entropy_grad)

from gradcheck import TOL, max_rel_err, projection_loss
from test_augment import probe_spec
from test_imaging import global_equalization_oracle
from test_nn import EXPECTED_LAYER_PARAMS, random_conv_instance


VERDICTS: list[str] = []


def _announce(line: str) -> None:
    VERDICTS.append(line)  # printed by the conftest terminal-summary hook


@contextmanager
def _criterion(num: int, title: str):
    try:
        yield
    except BaseException:
        _announce(f"[FAIL] criterion {num}: {title}")
        raise
    _announce(f"[PASS] criterion {num}: {title}")


# -------------------------------------------------------------------------


def test_criterion_1_architecture_fidelity():
    with _criterion(1, "model has 245,667 parameters and the exact shape chain"):
        start = time.perf_counter()
        model = build_model(seed=0)
        assert count_params(model) == 245667
        expected = [(1, 224, 224, 8), (1, 224, 224, 8), (1, 112, 112, 8),
                    (1, 110, 110, 16), (1, 110, 110, 16), (1, 55, 55, 16),
                    (1, 53, 53, 32), (1, 53, 53, 32), (1, 26, 26, 32),
                    (1, 24, 24, 64), (1, 24, 24, 64), (1, 12, 12, 64),
                    (1, 9216), (1, 24), (1, 3), (1, 3)]
        x = np.zeros((1, 224, 224, 1), dtype=np.float32)
        for layer, shape in zip(model.layers, expected):
            x = layer.forward(x)
            assert x.shape == shape, layer.name
        assert time.perf_counter() - start < 1.0


def test_criterion_2_parameter_count_reconciliation():
    with _criterion(2, "per-layer parameter counts sum to the 245,667 total"):
        # The fourth conv block is 64*(3*3*32) + 64 = 18,496. A sometimes
        # quoted 18,694 for that block contradicts the total and is a typo;
        # the model docstring records the same reconciliation.
        per_layer = [80, 1168, 4640, 18496, 221208, 75]
        assert sum(per_layer) == 245667
        model = build_model(seed=0)
        sizes = {}
        for name, arr in model.parameters():
            layer = name.split(".")[0]
            sizes[layer] = sizes.get(layer, 0) + arr.size
        assert sizes == EXPECTED_LAYER_PARAMS
        assert list(sizes.values()) == per_layer
        import ct_classify.nn as nn_module
        assert "18,496" in nn_module.__doc__ and "18,694" in nn_module.__doc__


def test_criterion_3_gradient_correctness():
    with _criterion(3, "analytic gradients match central differences < 1e-4"):
        start = time.perf_counter()
        rng = np.random.default_rng(1000)
        assert TOL == 1e-4

        for _ in range(20):  # conv2d
            layer, x = random_conv_instance(rng)
            proj = rng.normal(size=layer.forward(x).shape)
            loss_fn, dx, grads = projection_loss(layer, x, proj)
            assert max_rel_err(loss_fn, x, dx, rng) < TOL
            assert max_rel_err(loss_fn, layer.W, grads["W"], rng) < TOL
            assert max_rel_err(loss_fn, layer.b, grads["b"], rng) < TOL

        for _ in range(20):  # maxpool2x2 (distinct values keep argmax stable)
            shape = (int(rng.integers(1, 3)), int(rng.integers(2, 7)),
                     int(rng.integers(2, 7)), int(rng.integers(1, 3)))
            x = rng.permutation(np.linspace(0.0, 1.0, int(np.prod(shape))))
            x = x.reshape(shape)
            layer = MaxPool2x2()
            proj = rng.normal(size=layer.forward(x).shape)
            loss_fn, dx, _ = projection_loss(layer, x, proj)
            assert max_rel_err(loss_fn, x, dx, rng) < TOL

        for _ in range(20):  # dense
            layer = Dense(int(rng.integers(2, 9)), int(rng.integers(2, 6)),
                          rng=rng, dtype=np.float64)
            x = rng.normal(size=(int(rng.integers(1, 5)), layer.in_features))
            proj = rng.normal(size=(x.shape[0], layer.out_features))
            loss_fn, dx, grads = projection_loss(layer, x, proj)
            assert max_rel_err(loss_fn, x, dx, rng) < TOL
            assert max_rel_err(loss_fn, layer.W, grads["W"], rng) < TOL
            assert max_rel_err(loss_fn, layer.b, grads["b"], rng) < TOL

        for _ in range(20):  # relu (inputs bounded away from the kink)
            shape = (int(rng.integers(1, 3)), int(rng.integers(2, 6)),
                     int(rng.integers(2, 6)), int(rng.integers(1, 3)))
            x = rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], shape)
            layer = ReLU()
            proj = rng.normal(size=shape)
            loss_fn, dx, _ = projection_loss(layer, x, proj)
            assert max_rel_err(loss_fn, x, dx, rng) < TOL

        for _ in range(20):  # softmax + cross-entropy, fused gradient
            n = int(rng.integers(1, 5))
            k = int(rng.integers(2, 6))
            logits = rng.normal(size=(n, k))
            y = rng.integers(0, k, size=n)
            sm = Softmax()

            def loss_fn():
                return cross_entropy(sm.forward(logits), y)

            analytic = softmax_cross_entropy_grad(sm.forward(logits), y)
            assert max_rel_err(loss_fn, logits, analytic, rng) < TOL

        assert time.perf_counter() - start < 30.0


def test_criterion_4_clahe_oracle_equivalence():
    with _criterion(4, "single-tile CLAHE equals global equalization; "
                       "clipping preserves mass under the cap"):
        rng = np.random.default_rng(2000)
        for _ in range(100):
            px = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
            out = clahe(GrayImage(px), ClaheParams(tiles_m=1, tiles_n=1, clip=1.0))
            assert np.array_equal(out.pixels, global_equalization_oracle(px))

        checked = 0
        while checked < 1000:
            bins = int(rng.integers(2, 65))
            counts = rng.integers(0, 400, size=bins).astype(np.int64)
            total = int(counts.sum())
            if total == 0:
                continue
            clip = float(rng.uniform(0.01, 1.0))
            limit = max(1, int(math.floor(clip * total + 0.5)))
            if limit * bins < total:
                continue  # infeasible clip; rejected by contract, not counted
            out = clip_redistribute(Histogram(counts=counts, total=total), clip)
            assert int(out.counts.sum()) == total
            assert out.counts.max() <= limit
            checked += 1


def test_criterion_5_metrics_oracle_equivalence():
    with _criterion(5, "metrics equal a brute-force counting oracle on 1000 runs"):
        rng = np.random.default_rng(3000)
        names = ("benign", "malignant", "normal")
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            y_true = rng.integers(0, 3, size=n)
            y_pred = rng.integers(0, 3, size=n)
            report = aggregate(confusion_matrix(y_true, y_pred, names))

            per_class_oracle = []
            for c in range(3):
                tp = int(((y_true == c) & (y_pred == c)).sum())
                fp = int(((y_true != c) & (y_pred == c)).sum())
                fn = int(((y_true == c) & (y_pred != c)).sum())
                tn = n - tp - fp - fn
                precision = tp / (tp + fp) if tp + fp else 0.0
                sensitivity = tp / (tp + fn) if tp + fn else 0.0
                specificity = tn / (tn + fp) if tn + fp else 0.0
                f1 = (2 * precision * sensitivity / (precision + sensitivity)
                      if precision + sensitivity else 0.0)
                support = tp + fn
                per_class_oracle.append(dict(precision=precision,
                                             sensitivity=sensitivity,
                                             specificity=specificity, f1=f1,
                                             support=support))
                m = report.per_class[c]
                # integer-ratio comparison: identical int divisions, so exact
                assert m.precision == precision
                assert m.sensitivity == sensitivity
                assert m.specificity == specificity
                assert m.f1 == f1
                assert m.support == support

            assert report.accuracy == int((y_true == y_pred).sum()) / n
            for field in ("precision", "sensitivity", "specificity", "f1"):
                macro = sum(o[field] for o in per_class_oracle) / 3
                weighted = sum(o[field] * o["support"]
                               for o in per_class_oracle) / n
                assert report.macro[field] == macro
                assert report.weighted[field] == weighted


def test_criterion_6_augmentation_statistics():
    with _criterion(6, "10,000-sample transform rates in band; replay identical"):
        n = 10_000
        ramp = (np.arange(12)[:, None] * 13 + np.arange(12)[None, :]) % 251
        asym = GrayImage(ramp.astype(np.uint8))
        const = GrayImage(np.full((12, 12), 128, dtype=np.uint8))

        def rate(spec, probe, seed):
            rng = np.random.default_rng(seed)
            hits = sum(not np.array_equal(
                apply_augmentation(probe, spec, rng).pixels, probe.pixels)
                for _ in range(n))
            return hits / n

        tb = rate(probe_spec(p_flip_tb=0.40), asym, seed=60)
        lr = rate(probe_spec(p_flip_lr=0.30), asym, seed=61)
        br = rate(probe_spec(p_brightness=0.30, brightness_range=(0.5, 0.5)),
                  const, seed=62)
        assert 0.38 <= tb <= 0.42, tb
        assert 0.28 <= lr <= 0.32, lr
        assert 0.28 <= br <= 0.32, br

        spec = AugmentationSpec()
        a = apply_augmentation(asym, spec, np.random.default_rng(99))
        b = apply_augmentation(asym, spec, np.random.default_rng(99))
        assert np.array_equal(a.pixels, b.pixels)
        assert a.pixels.tobytes() == b.pixels.tobytes()


def test_criterion_7_end_to_end_smoke_training(tmp_path):
    with _criterion(7, "synthetic pipeline hits val accuracy >= 0.95 in < 5 min"):
        start = time.perf_counter()
        raw = tmp_path / "raw"
        clean = tmp_path / "clean"
        manifest = clean / "manifest.csv"
        generate_synthetic_dataset(raw, per_class=60, size=(224, 224), seed=0)

        assert entrypoint(["preprocess", "--input", str(raw),
                           "--output", str(clean)]) == 0
        assert entrypoint(["split", "--manifest", str(manifest), "--seed", "0",
                           "--train", "0.70", "--val", "0.15", "--test", "0.15"]) == 0
        split = load_manifest(manifest)
        assert len(split.filter_split("train")) == 126
        assert len(split.filter_split("val")) == 27
        assert len(split.filter_split("test")) == 27
        assert entrypoint(["train", "--manifest", str(manifest), "--seed", "0",
                           "--epochs", "10", "--batch-size", "8"]) == 0

        with open(clean / "curves.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 10  # exactly ten epochs
        losses = [float(r["train_loss"]) for r in rows]
        assert losses[-1] < losses[0]  # overall-decreasing training loss
        assert float(rows[-1]["val_acc"]) >= 0.95

        elapsed = time.perf_counter() - start
        assert elapsed < 300.0, f"smoke pipeline took {elapsed:.0f}s"


def test_criterion_8_checkpoint_round_trip(tmp_path):
    with _criterion(8, "checkpoint round-trip preserves outputs bitwise"):
        model = build_model(seed=123)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        batch = (np.random.default_rng(7)
                 .integers(0, 256, size=(4, 224, 224, 1))
                 .astype(np.float32) / 255.0)
        before = model.forward(batch)
        after = restored.forward(batch)
        assert before.tobytes() == after.tobytes()


def test_criterion_9_full_scale_protocol():
    """Full-dataset integration run; never an accuracy gate.

    Headline figures reported at full scale (99.45% accuracy, 99%
    sensitivity, 99.21% specificity) are not reproducible at desk scale
    without the real scans, so they are deliberately not asserted anywhere
    in this suite. When CT_CLASSIFY_REAL_DATA points at the raw dataset
    root, this test runs the complete protocol and prints the metrics table;
    it always completes without enforcing any accuracy threshold.
    """
    root = os.environ.get("CT_CLASSIFY_REAL_DATA")
    if not root or not Path(root).is_dir():
        _announce("[SKIP] criterion 9: full-scale metrics are excluded as a "
                  "gate; set CT_CLASSIFY_REAL_DATA to run the integration")
        pytest.skip("real dataset not present")
    with _criterion(9, "full-scale protocol completes and reports the table"):
        work = Path(root).parent / "ct_classify_integration"
        clean = work / "clean"
        manifest = clean / "manifest.csv"
        assert entrypoint(["preprocess", "--input", root,
                           "--output", str(clean)]) == 0
        assert entrypoint(["split", "--manifest", str(manifest),
                           "--seed", "0"]) == 0
        assert entrypoint(["augment", "--manifest", str(manifest),
                           "--seed", "0"]) == 0
        assert entrypoint(["train", "--manifest", str(manifest),
                           "--seed", "0", "--epochs", "10"]) == 0
        assert entrypoint(["evaluate", "--checkpoint", str(clean / "model.ckpt"),
                           "--manifest", str(manifest), "--split", "test",
                           "--csv", str(work / "report.csv")]) == 0
