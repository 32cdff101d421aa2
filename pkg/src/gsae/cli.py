"""Command line entry point: ``gsae <subcommand> --config FILE [--out DIR] [--seed N] [--threads N]``.

BLAS runs single-threaded: multithreaded kernels change floating-point
summation order, and outputs must not depend on the thread count.
``--threads`` instead sets the worker count for chunked work (per-sample
data generation, Monte Carlo batches), whose chunks are fixed and reduced
in order.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, experiments, storage
from .autoencoder import AutoencoderState, DivergenceError, encode_batch, train
from .cluster import codes_nonneg_simplex
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .idx import IdxFormatError
from .storage import FormatError
from .synth import InvalidConfigError, generate

log = logging.getLogger("gsae")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _manifest(cfg: ExperimentConfig, out: Path, files: dict[str, Path], extra: dict | None = None):
    storage.write_json(out / "manifest.json", {
        "version": __version__,
        "experiment": cfg.experiment,
        "config": cfg.echo(),
        "files": {name: {"path": p.name, "sha256": storage.sha256(p)} for name, p in sorted(files.items())},
        **(extra or {}),
    })


def _dataset(cfg: ExperimentConfig, workers: int):
    return experiments.dataset_for(cfg.data, cfg.dataset, workers)


def _start(cfg: ExperimentConfig, ds):
    if cfg.init.dictionary:
        return storage.load_dictionary(cfg.init.dictionary)
    return experiments.perturbed_start(ds, cfg.init.correlation, cfg.seed)


def cmd_synth(cfg: ExperimentConfig, out: Path, workers: int = 1) -> None:
    if cfg.data is None:
        raise ConfigError("data: the synth subcommand needs a `data` section")
    ds = generate(cfg.data, workers=workers)
    files = {"dataset": storage.save_dataset(out / "dataset.bin", ds),
             "supports": storage.write_supports_csv(out / "supports.csv", ds)}
    _manifest(cfg, out, files, {"shape": list(ds.observations.shape)})


def cmd_train(cfg: ExperimentConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(cfg, workers)
    start_epoch, adam = 0, None
    if cfg.init.checkpoint:
        ae, start_epoch, adam, _ = storage.load_checkpoint(cfg.init.checkpoint)
    else:
        m = cfg.model
        ae = AutoencoderState(_start(cfg, ds), m.lam, m.prox, m.unroll, m.step)
    hist = train(ae, ds.observations, cfg.train, truth=ds.dictionary,
                 supports=ds.support_matrix(), start_epoch=start_epoch, optimizer_state=adam)
    rows = list(hist.rows())
    if start_epoch:
        rows = rows[1:]  # the resumed state was already the last row of the previous run
    files = {
        "history": storage.write_csv(out / "history.csv", experiments.HISTORY_HEADER, rows),
        "checkpoint": storage.save_checkpoint(out / "checkpoint.bin", ae, hist.epochs[-1],
                                              hist.optimizer_state),
    }
    _manifest(cfg, out, files, {"final_epoch": hist.epochs[-1]})


def cmd_compare(cfg: ExperimentConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(cfg, workers)
    A0 = _start(cfg, ds)
    models = [(m.prox, m.lam, m.prox, m.unroll) for m in (cfg.model, cfg.baseline)]
    if models[0][0] == models[1][0]:
        models = [("model",) + models[0][1:], ("baseline",) + models[1][1:]]
    rows = experiments.compare_rows(ds, A0, models, cfg.train)
    path = storage.write_csv(out / "compare.csv", ["prox"] + experiments.HISTORY_HEADER, rows)
    _manifest(cfg, out, {"compare": path})


def cmd_theory_check(cfg: ExperimentConfig, out: Path, workers: int = 1) -> None:
    ds = _dataset(cfg, workers)
    if cfg.init.checkpoint:
        dictionary = storage.load_checkpoint(cfg.init.checkpoint)[0].dictionary
    else:
        dictionary = _start(cfg, ds)
    th = cfg.theory
    report = experiments.theory_report(ds, dictionary, th.lam, th.num_mc, th.eta, th.epochs,
                                       workers)
    files = {}
    al = report.pop("_alignment", None)
    ct = report.pop("_contraction", None)
    if al is not None:
        files["alignment"] = storage.write_csv(
            out / "alignment.csv",
            ["column", "inner_product", "standard_error", "alpha", "omega", "lhs", "rhs"],
            zip(range(al.alpha.size), al.inner_products, al.standard_errors, al.alpha,
                al.omega, al.lhs, al.rhs))
    if ct is not None:
        files["contraction"] = storage.write_csv(
            out / "contraction.csv", ["epoch", "median_ratio"],
            zip(range(ct.epoch_ratio.size), ct.epoch_ratio))
    files["report"] = storage.write_json(out / "theory.json", report)
    _manifest(cfg, out, files)


def cmd_cluster(cfg: ExperimentConfig, out: Path, workers: int = 1) -> None:
    cs = cfg.cluster
    if not cs.images or not cs.labels:
        raise ConfigError("cluster.images and cluster.labels are required")
    X, y = experiments.load_mnist(cs.images, cs.labels, cs.limit, cfg.seed)
    files = {}
    if cs.encoder == "raw":
        F = X
    else:
        if cs.encoder == "checkpoint":
            if not cs.checkpoint:
                raise ConfigError("cluster.checkpoint: required when encoder is 'checkpoint'")
            ae = storage.load_checkpoint(cs.checkpoint)[0]
        else:
            model = experiments.GROUP_MNIST if cs.encoder == "group" else experiments.SPARSE_MNIST
            ae = experiments.train_mnist(X, model, cfg.train.epochs, cfg.seed,
                                         cfg.train.learning_rate)
            files["checkpoint"] = storage.save_checkpoint(out / "checkpoint.bin", ae,
                                                          cfg.train.epochs)
        F = encode_batch(ae, X)
    if cs.nonneg:
        F = codes_nonneg_simplex(F)
    res = experiments.cluster_features(F, y, cs.cluster_config(cfg.seed), cs.spectral)
    cols = [range(y.size), y, res["kmeans_labels"]]
    header = ["sample", "label", "kmeans"]
    if cs.spectral:
        cols.append(res["spectral_labels"])
        header.append("spectral")
    files["labels"] = storage.write_csv(out / "labels.csv", header, zip(*cols))
    acc = {k: v for k, v in res.items() if not k.endswith("_labels")}
    acc.update(encoder=cs.encoder, nonneg=cs.nonneg, samples=int(y.size))
    files["accuracy"] = storage.write_json(out / "accuracy.json", acc)
    experiments.similarity_dump(F, y, out, "similarity")
    files["similarity"] = out / "similarity.bin"
    _manifest(cfg, out, files)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "compare": cmd_compare,
    "theory-check": cmd_theory_check,
    "cluster": cmd_cluster,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsae", description="Group-sparse autoencoder experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for data generation and Monte Carlo batches")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.command)
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        with threadpool_limits(limits=1):
            COMMANDS[args.command](cfg, out, args.threads)
    except (ConfigError, InvalidConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, FormatError, IdxFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
