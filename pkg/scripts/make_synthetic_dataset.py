#!/usr/bin/env python3
"""Generate the synthetic intensity-band dataset used for smoke runs.

Example:
    python scripts/make_synthetic_dataset.py --out /tmp/smoke/raw --per-class 60
"""

import argparse

from ct_classify.synth import generate_synthetic_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output dataset root")
    parser.add_argument("--per-class", type=int, default=60)
    parser.add_argument("--size", type=int, default=224, help="image side length")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    manifest = generate_synthetic_dataset(args.out, per_class=args.per_class,
                                          size=(args.size, args.size), seed=args.seed)
    print(f"wrote {3 * args.per_class} images; manifest: {manifest}")


if __name__ == "__main__":
    main()
