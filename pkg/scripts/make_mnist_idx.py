"""Write MNIST IDX files from a CSV of flattened digits (label in the last column).

With no arguments the 5,000-digit CSV bundled with ``mlxtend`` is used.
Real MNIST IDX files can be passed to the CLI directly and need no conversion.

    python scripts/make_mnist_idx.py [--csv PATH] [--out data/]
"""

import argparse
import gzip
import importlib.util
from pathlib import Path

import numpy as np

from gsae.idx import write_idx


def bundled_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise SystemExit("mlxtend is not installed; pass --csv")
    return Path(spec.submodule_search_locations[0]) / "data" / "data" / "mnist_5k.csv.gz"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("data"))
    args = ap.parse_args()
    src = args.csv or bundled_csv()
    opener = gzip.open if src.suffix == ".gz" else open
    with opener(src, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    if pixels.shape[1] != 784:
        raise SystemExit(f"expected 784 pixel columns, found {pixels.shape[1]}")
    args.out.mkdir(parents=True, exist_ok=True)
    img = write_idx(args.out / "images-idx3-ubyte", pixels.reshape(-1, 28, 28).astype(np.uint8))
    lab = write_idx(args.out / "labels-idx1-ubyte", labels.astype(np.uint8))
    print(f"{len(labels)} digits -> {img}, {lab}")


if __name__ == "__main__":
    main()
