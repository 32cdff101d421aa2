import json
import struct

import numpy as np
import pytest
import yaml

from gsae import storage
from gsae.autoencoder import AutoencoderState, Optimizer, TrainConfig, train
from gsae.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, main
from gsae.config import ConfigError, load_config, parse_config
from gsae.idx import IdxFormatError, load_idx, load_idx_raw, write_idx
from gsae.storage import FormatError
from gsae.synth import SynthConfig, generate

DATA = {"n": 20, "num_groups": 6, "group_size": 2, "active_groups": 2,
        "num_samples": 60, "snr_db": 15}


# ---------------------------------------------------------------- container


def test_container_round_trip(tmp_path, rng):
    arrays = {"a": rng.standard_normal((3, 4)), "b": np.arange(5.0), "c": np.zeros((0, 2))}
    p = storage.save_arrays(tmp_path / "x.bin", arrays, {"k": [1, 2]})
    back, meta = storage.load_arrays(p)
    assert meta == {"k": [1, 2]}
    for k, v in arrays.items():
        np.testing.assert_array_equal(back[k], v)
        assert back[k].shape == v.shape


def test_container_layout(tmp_path):
    p = storage.save_arrays(tmp_path / "x.bin", {"a": np.array([1.5])})
    raw = p.read_bytes()
    assert raw[:8] == b"GSAEBIN1"
    (h,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16:16 + h])
    assert header["arrays"] == [{"name": "a", "offset": 0, "shape": [1]}]
    assert struct.unpack_from("<d", raw, 16 + h) == (1.5,)


@pytest.mark.parametrize("cut", [4, 12, 20, -3])
def test_truncated_container_reports_offset(tmp_path, rng, cut):
    p = storage.save_arrays(tmp_path / "x.bin", {"a": rng.standard_normal(10)})
    raw = p.read_bytes()
    p.write_bytes(raw[:cut])
    with pytest.raises(FormatError, match="offset"):
        storage.load_arrays(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        storage.load_arrays(p)


def test_dataset_round_trip_is_bit_exact(tmp_path):
    ds = generate(SynthConfig(**DATA, seed=4))
    back = storage.load_dataset(storage.save_dataset(tmp_path / "d.bin", ds))
    for a, b in [(ds.observations, back.observations), (ds.codes, back.codes),
                 (ds.noise, back.noise), (ds.dictionary.matrix, back.dictionary.matrix)]:
        np.testing.assert_array_equal(a, b)
    assert back.supports == ds.supports and back.config == ds.config
    assert back.noise_snr_db == ds.noise_snr_db
    with pytest.raises(FormatError):
        storage.load_checkpoint(tmp_path / "d.bin")


def test_checkpoint_round_trip(tmp_path):
    ds = generate(SynthConfig(**DATA, seed=4))
    ae = AutoencoderState(ds.dictionary, 1.5, "group", 3)
    h = train(ae, ds.observations, TrainConfig(Optimizer.ADAM, 1e-2, 3))
    p = storage.save_checkpoint(tmp_path / "c.bin", ae, 3, h.optimizer_state, {"note": "x"})
    ae2, epoch, adam, extra = storage.load_checkpoint(p)
    np.testing.assert_array_equal(ae2.weights, ae.weights)
    assert (ae2.lam, ae2.prox, ae2.unroll, ae2.step) == (ae.lam, ae.prox, ae.unroll, ae.step)
    assert epoch == 3 and extra == {"note": "x"} and adam.t == 3
    np.testing.assert_array_equal(adam.v, h.optimizer_state.v)


def test_csv_floats_round_trip(tmp_path, rng):
    vals = rng.standard_normal(20) * 10.0 ** rng.integers(-300, 300, 20)
    p = storage.write_csv(tmp_path / "t.csv", ["i", "v"], enumerate(vals))
    header, rows = storage.read_csv(p)
    assert header == ["i", "v"]
    assert [float(r[1]) for r in rows] == list(vals)


def test_pgm_header(tmp_path):
    p = storage.write_pgm(tmp_path / "m.pgm", np.arange(6.0).reshape(2, 3))
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n") and raw[-6:] == bytes([0, 51, 102, 153, 204, 255])


# ---------------------------------------------------------------- IDX


def test_idx_two_image_fixture(tmp_path):
    imgs = np.zeros((2, 28, 28), dtype=np.uint8)
    imgs[0, 0, 0], imgs[1, 27, 27] = 255, 51
    labels = np.array([7, 3], dtype=np.uint8)
    X = load_idx(write_idx(tmp_path / "i", imgs))
    y = load_idx(write_idx(tmp_path / "l", labels))
    assert X.shape == (784, 2) and y.tolist() == [7, 3]
    assert X[0, 0] == 1.0 and X[783, 1] == pytest.approx(0.2)
    assert X.sum() == pytest.approx(1.2)
    np.testing.assert_array_equal(load_idx_raw(tmp_path / "i"), imgs)


def test_idx_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(IdxFormatError) as exc:
        load_idx(empty)
    assert exc.value.offset == 0
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">I", 0x0802) + bytes(8))
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(bad)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">IIII", 0x0803, 2, 2, 2) + bytes(5))
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(short)
    with pytest.raises(TypeError):
        write_idx(tmp_path / "f", np.zeros(3))


# ---------------------------------------------------------------- config


def test_config_parsing_and_errors():
    cfg = parse_config({"data": DATA, "train": {"learning_rate": "1e-2", "epochs": 2}},
                       seed=9, experiment="train")
    assert cfg.experiment == "train" and cfg.seed == 9 and cfg.data.seed == 9
    assert cfg.train.learning_rate == 0.01 and cfg.baseline.prox == "soft"
    bad = [
        ({"data": DATA, "bogus": 1}, "bogus"),
        ({"data": {**DATA, "n": "x"}}, "data.n"),
        ({"data": DATA, "model": {"prox": "nope"}}, "model"),
        ({"data": DATA, "train": {"optimizer": "rmsprop"}}, "train.optimizer"),
        ({"data": DATA, "seed": -1}, "seed"),
        ({}, "dataset"),
        ({"experiment": "compare", "data": DATA}, "experiment"),
        ({"data": {**DATA, "active_groups": 9}}, "data"),
    ]
    for tree, field in bad:
        with pytest.raises((ConfigError, ValueError), match=field):
            parse_config(tree, experiment="train")


def test_shipped_configs_parse():
    from pathlib import Path
    for p in sorted(Path(__file__).parents[1].joinpath("configs").glob("*.yaml")):
        cfg = load_config(p)
        assert cfg.experiment in p.read_text()


# ---------------------------------------------------------------- CLI


def write_cfg(tmp_path, name, tree):
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(tree))
    return p


def train_tree(epochs=4, **extra):
    return {"experiment": "train", "data": DATA, "init": {"correlation": 0.9},
            "train": {"epochs": epochs, "learning_rate": 1e-2}, **extra}


def test_cli_train_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, "t", train_tree())
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"),
                 "--threads", "1"]) == EXIT_OK
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"]
    header, rows = storage.read_csv(tmp_path / "a" / "history.csv")
    assert header == ["epoch", "loss", "dict_error", "support_rate"] and len(rows) == 5


def test_cli_resume_matches_uninterrupted_run(tmp_path):
    full = write_cfg(tmp_path, "full", train_tree(6))
    assert main(["train", "--config", str(full), "--out", str(tmp_path / "full")]) == EXIT_OK
    first = write_cfg(tmp_path, "first", train_tree(2))
    assert main(["train", "--config", str(first), "--out", str(tmp_path / "r1")]) == EXIT_OK
    rest = write_cfg(tmp_path, "rest", {
        **train_tree(4), "init": {"checkpoint": str(tmp_path / "r1" / "checkpoint.bin")}})
    assert main(["train", "--config", str(rest), "--out", str(tmp_path / "r2")]) == EXIT_OK
    a = storage.load_checkpoint(tmp_path / "full" / "checkpoint.bin")
    b = storage.load_checkpoint(tmp_path / "r2" / "checkpoint.bin")
    np.testing.assert_array_equal(a[0].weights, b[0].weights)
    assert a[1] == b[1] == 6
    _, rows_full = storage.read_csv(tmp_path / "full" / "history.csv")
    _, r1 = storage.read_csv(tmp_path / "r1" / "history.csv")
    _, r2 = storage.read_csv(tmp_path / "r2" / "history.csv")
    assert r1 + r2 == rows_full


def test_cli_compare_rows(tmp_path):
    cfg = write_cfg(tmp_path, "c", {**train_tree(3), "experiment": "compare"})
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    header, rows = storage.read_csv(tmp_path / "o" / "compare.csv")
    assert header[0] == "prox" and len(rows) == 2 * 4
    assert {r[0] for r in rows} == {"group", "soft"}


def test_cli_synth_then_theory_check(tmp_path):
    s = write_cfg(tmp_path, "s", {"experiment": "synth", "data": DATA})
    assert main(["synth", "--config", str(s), "--out", str(tmp_path / "s")]) == EXIT_OK
    ds_path = tmp_path / "s" / "dataset.bin"
    assert storage.load_dataset(ds_path).observations.shape == (20, 60)
    t = write_cfg(tmp_path, "t", {"experiment": "theory-check", "dataset": str(ds_path),
                                  "init": {"correlation": 0.95},
                                  "theory": {"num_mc": 200, "epochs": 3}})
    assert main(["theory-check", "--config", str(t), "--out", str(tmp_path / "t")]) == EXIT_OK
    rep = json.loads((tmp_path / "t" / "theory.json").read_text())
    assert {"bounds", "support_bounds", "alignment", "contraction"} <= set(rep)
    _, rows = storage.read_csv(tmp_path / "t" / "contraction.csv")
    assert len(rows) == 3


def test_cli_cluster_raw(tmp_path, rng):
    imgs = (rng.random((30, 28, 28)) * 255).astype(np.uint8)
    write_idx(tmp_path / "img", imgs)
    write_idx(tmp_path / "lab", np.repeat(np.arange(3), 10).astype(np.uint8))
    cfg = write_cfg(tmp_path, "k", {"experiment": "cluster", "cluster": {
        "k": 3, "knn": 5, "images": str(tmp_path / "img"), "labels": str(tmp_path / "lab"),
        "encoder": "raw", "kmeans_restarts": 2}})
    assert main(["cluster", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    acc = json.loads((tmp_path / "o" / "accuracy.json").read_text())
    assert 0 < acc["kmeans_accuracy"] <= 1 and acc["samples"] == 30
    assert (tmp_path / "o" / "similarity.pgm").read_bytes().startswith(b"P5\n30 30\n")


def test_cli_exit_codes(tmp_path):
    bad = write_cfg(tmp_path, "bad", {"experiment": "train", "data": {**DATA, "n": -1}})
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == EXIT_IO
    corrupt = tmp_path / "corrupt.bin"
    corrupt.write_bytes(b"junk")
    ds = write_cfg(tmp_path, "ds", {"experiment": "train", "dataset": str(corrupt)})
    assert main(["train", "--config", str(ds), "--out", str(tmp_path / "y")]) == EXIT_IO
    div = write_cfg(tmp_path, "div", train_tree(
        20, train={"epochs": 20, "learning_rate": 1e4, "optimizer": "gd"}))
    assert main(["train", "--config", str(div), "--out", str(tmp_path / "z")]) == EXIT_DIVERGENCE
