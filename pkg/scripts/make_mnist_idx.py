"""Write IDX files from a CSV of MNIST digits (784 pixel columns, label last).

By default the 5,000-digit sample bundled with mlxtend is used:

    python3 scripts/make_mnist_idx.py OUT_DIR [--csv PATH] [--test-per-class 100]

The output directory can then be passed as ``[env] mnist_dir`` or through
``HETSNN_MNIST_DIR``.
"""

from __future__ import annotations

import argparse
import sys

from hetsnn.envs.idx import csv_to_idx


def bundled_csv() -> str:
    try:
        from importlib.resources import files

        return str(files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz")
    except ModuleNotFoundError:
        sys.exit("mlxtend is not installed; pass --csv PATH")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--csv", help="CSV file (optionally .gz); default: mlxtend's bundled sample")
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args(argv)
    counts = csv_to_idx(args.csv or bundled_csv(), args.out_dir, args.test_per_class)
    print(f"wrote {counts[0]} training and {counts[1]} test digits to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
