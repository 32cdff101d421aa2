"""Experiment configuration: a YAML key-value tree mapped onto dataclasses.

Schema (every section optional unless the subcommand needs it)::

    experiment: synth | train | compare | theory-check | cluster
    seed: 0                     # overrides the seeds of nested sections
    out: runs/example
    dataset: path/to/data.bin   # container written by `synth`; else `data` is generated
    data:    {n, num_groups, group_size, active_groups, num_samples,
              scale_low, scale_high, snr_db}
    init:    {correlation: 0.15, dictionary: null, checkpoint: null}
    model:   {lam: 2.0, prox: group, unroll: 1, step: null}
    baseline: {lam: 2.0, prox: soft, unroll: 1}          # compare only
    train:   {optimizer: adam, learning_rate: 1e-3, epochs: 300,
              beta1, beta2, eps}
    theory:  {lam: null, num_mc: 2000, eta: 1e-3, epochs: 50}
    cluster: {k: 10, knn: 10, kmeans_restarts: 10, max_iters: 300,
              images: path, labels: path, limit: 2000,
              encoder: raw | checkpoint | group | sparse,
              checkpoint: path, nonneg: false}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .autoencoder import Optimizer, TrainConfig
from .cluster import ClusterConfig
from .prox import ProxKind
from .synth import SynthConfig

EXPERIMENTS = ("synth", "train", "compare", "theory-check", "cluster")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class InitConfig:
    correlation: float = 0.15
    dictionary: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class ModelConfig:
    lam: float = 2.0
    prox: str = "group"
    unroll: int = 1
    step: float | None = None

    def __post_init__(self):
        ProxKind.parse(self.prox)
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.unroll < 1:
            raise ValueError("unroll must be >= 1")


@dataclass(frozen=True)
class TheoryConfig:
    lam: float | None = None  # None -> midpoint of the measured range (or the model λ)
    num_mc: int = 2000
    eta: float = 1e-3
    epochs: int = 50


@dataclass(frozen=True)
class ClusterSection:
    k: int = 10
    knn: int = 10
    kmeans_restarts: int = 10
    max_iters: int = 300
    images: str | None = None
    labels: str | None = None
    limit: int | None = None
    encoder: str = "checkpoint"
    checkpoint: str | None = None
    nonneg: bool = False
    spectral: bool = True

    def __post_init__(self):
        if self.encoder not in ("raw", "checkpoint", "group", "sparse"):
            raise ValueError(f"encoder must be raw, checkpoint, group or sparse, got {self.encoder!r}")

    def cluster_config(self, seed: int) -> ClusterConfig:
        return ClusterConfig(self.k, self.knn, self.kmeans_restarts, self.max_iters, seed)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str = "runs/out"
    dataset: str | None = None
    data: SynthConfig | None = None
    init: InitConfig = field(default_factory=InitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: ModelConfig = field(default_factory=lambda: ModelConfig(prox="soft"))
    train: TrainConfig = field(default_factory=TrainConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    raw: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        """Normalized config tree, as written into manifests."""
        out = {"experiment": self.experiment, "seed": self.seed, "out": self.out,
               "dataset": self.dataset}
        for name in ("data", "init", "model", "baseline", "theory", "cluster"):
            val = getattr(self, name)
            out[name] = None if val is None else dataclasses.asdict(val)
        tr = dataclasses.asdict(self.train)
        tr["optimizer"] = self.train.optimizer.value
        out["train"] = tr
        return out


def _section(cls, tree: Any, name: str, **overrides):
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(tree).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in tree:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field")
    values = {**tree, **{k: v for k, v in overrides.items() if k in known}}
    values = {key: _check_type(f"{name}.{key}", known[key].type, val)
              for key, val in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


_SCALARS = {"int": int, "float": (int, float), "str": str, "bool": bool}


def _check_type(path: str, annotation, value):
    """Validate ``value`` against a string annotation; returns it (floats coerced)."""
    ann = str(annotation).replace(" ", "")
    options = ann.split("|")
    if value is None:
        if "None" in options:
            return None
        raise ConfigError(f"{path}: must not be null")
    for opt in options:
        if opt in _SCALARS:
            if isinstance(value, bool) and opt in ("int", "float"):
                continue
            if isinstance(value, _SCALARS[opt]):
                return float(value) if opt == "float" else value
            if opt == "float" and isinstance(value, str):
                # YAML 1.1 reads 1e-3 (no dot) as a string
                try:
                    return float(value)
                except ValueError:
                    pass
        elif opt in ("Optimizer", "ProxKind") and isinstance(value, str):
            return value
    raise ConfigError(f"{path}: expected {ann}, got {type(value).__name__} {value!r}")


def parse_config(tree: dict, seed: int | None = None,
                 experiment: str | None = None) -> ExperimentConfig:
    """Validate a raw tree; ``experiment`` (the subcommand) fills or must match the field."""
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    if experiment is not None:
        if tree.get("experiment", experiment) != experiment:
            raise ConfigError(f"experiment: config says {tree['experiment']!r}, "
                              f"subcommand is {experiment!r}")
        tree = {**tree, "experiment": experiment}
    allowed = {"experiment", "seed", "out", "dataset", "data", "init", "model", "baseline",
               "train", "theory", "cluster"}
    for key in tree:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown top-level field")
    exp = tree.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    seed = tree.get("seed", 0) if seed is None else seed
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    data = None
    if tree.get("data") is not None:
        data = _section(SynthConfig, tree["data"], "data", seed=seed)
    train_tree = dict(tree.get("train") or {})
    if "optimizer" in train_tree:
        try:
            Optimizer.parse(train_tree["optimizer"])
        except ValueError:
            raise ConfigError(f"train.optimizer: unknown optimizer {train_tree['optimizer']!r}") from None
    for key in ("out", "dataset"):
        if tree.get(key) is not None and not isinstance(tree[key], str):
            raise ConfigError(f"{key}: expected a path string")
    baseline_tree = tree.get("baseline")
    if baseline_tree is None:
        baseline_tree = {"prox": "soft", "lam": (tree.get("model") or {}).get("lam", 2.0)}
    try:
        model = _section(ModelConfig, tree.get("model"), "model")
        baseline = _section(ModelConfig, baseline_tree, "baseline")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig(
        experiment=exp,
        seed=seed,
        out=tree.get("out") or "runs/out",
        dataset=tree.get("dataset"),
        data=data,
        init=_section(InitConfig, tree.get("init"), "init"),
        model=model,
        baseline=baseline,
        train=_section(TrainConfig, train_tree, "train", seed=seed),
        theory=_section(TheoryConfig, tree.get("theory"), "theory"),
        cluster=_section(ClusterSection, tree.get("cluster"), "cluster"),
        raw=tree,
    )
    if exp != "cluster" and cfg.dataset is None and cfg.data is None:
        raise ConfigError("dataset: either `dataset` (a path) or a `data` section is required")
    return cfg


def load_config(path, seed: int | None = None, experiment: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(tree, seed, experiment)
