"""Clustering accuracy of raw pixels and of group / sparse codes on an MNIST subsample.

Rows: raw, sparse, sparse+ (nonneg simplex), group, group+. Results go to a
JSON file per seed plus a printed table.

    python scripts/run_clustering.py --seeds 0 1 --limit 2000 --epochs 50 [--spectral]
"""

import argparse
from pathlib import Path

from gsae import storage
from gsae.cluster import ClusterConfig
from gsae.experiments import clustering_table, load_mnist


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", default="data/images-idx3-ubyte")
    ap.add_argument("--labels", default="data/labels-idx1-ubyte")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--limit", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--init", choices=["gaussian", "samples"], default="gaussian")
    ap.add_argument("--spectral", action="store_true", help="also run kNN spectral clustering")
    ap.add_argument("--knn", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("runs/clustering"))
    args = ap.parse_args()

    for seed in args.seeds:
        X, y = load_mnist(args.images, args.labels, args.limit, seed)
        cc = ClusterConfig(k=10, knn=args.knn, seed=seed)
        table = clustering_table(X, y, args.epochs, seed, cc, args.spectral, args.init)
        summary = {row: {k: v for k, v in res.items() if not k.endswith("_labels")}
                   for row, res in table.items()}
        storage.write_json(args.out / f"seed{seed}.json", summary)
        for row, res in summary.items():
            extra = f"  spectral {res['spectral_accuracy']:.4f}" if args.spectral else ""
            print(f"seed {seed}  {row:8s} kmeans {res['kmeans_accuracy']:.4f}{extra}")


if __name__ == "__main__":
    main()
