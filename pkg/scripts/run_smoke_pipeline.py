#!/usr/bin/env python3
"""End-to-end smoke run: synthesize, preprocess, split, train, evaluate.

Drives the installed CLI exactly as a user would and prints each stage's
timing. The small batch size gives the 10-epoch run enough optimizer steps
to converge on the synthetic bands.

Example:
    python scripts/run_smoke_pipeline.py --workdir /tmp/smoke
"""

import argparse
import sys
import time

from ct_classify.cli import entrypoint
from ct_classify.synth import generate_synthetic_dataset


def run(argv: list[str]) -> None:
    t0 = time.time()
    code = entrypoint(argv)
    print(f"[{time.time() - t0:6.1f}s] ct-classify {' '.join(argv)}")
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--per-class", type=int, default=60)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    raw = f"{args.workdir}/raw"
    clean = f"{args.workdir}/clean"
    manifest = f"{clean}/manifest.csv"
    seed = str(args.seed)

    t0 = time.time()
    generate_synthetic_dataset(raw, per_class=args.per_class, seed=args.seed)
    print(f"[{time.time() - t0:6.1f}s] synthesized {3 * args.per_class} images")

    run(["preprocess", "--input", raw, "--output", clean, "--seed", seed])
    run(["split", "--manifest", manifest, "--seed", seed])
    run(["train", "--manifest", manifest, "--seed", seed,
         "--epochs", str(args.epochs), "--batch-size", str(args.batch_size)])
    run(["evaluate", "--checkpoint", f"{clean}/model.ckpt",
         "--manifest", manifest, "--split", "test"])


if __name__ == "__main__":
    main()
