import json

import pytest

from star_zsl.cli import EXIT_COMPAT, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from star_zsl.config import resolve
from star_zsl.errors import ConfigError
from star_zsl.skeleton import load_manifest

TINY = ["--frames", "8", "--stride", "2", "--channels", "8", "--d-va", "8", "--d-ff", "16", "--d-lat", "8",
        "--d-hidden-sem", "16", "--heads", "2", "--m", "4", "--batch-size", "8", "--encoder-epochs", "1",
        "--lr", "0.05", "--lr-decay-epochs", "5"]


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--out", str(root), "--categories", "5", "--known", "3", "--train-per-category", "6",
                 "--test-per-category", "4", "--frames", "8", "--seed", "5"]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def tiny_run(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--dataset", str(tiny_data), "--out", str(out), "--epochs", "2", *TINY]) == EXIT_OK
    return out


def test_gen_data_defaults(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d")]) == EXIT_OK
    m = load_manifest(tmp_path / "d")
    assert len(m.categories) == 12
    assert (len(m.split["known"]), len(m.split["unknown"])) == (9, 3)
    assert "categories=12 known=9 unknown=3 train=360 test=240" in capsys.readouterr().out


def test_gen_data_seed_from_environment(tmp_path, monkeypatch):
    args = ["--categories", "3", "--known", "2", "--train-per-category", "1", "--test-per-category", "1",
            "--frames", "4"]
    monkeypatch.setenv("STAR_SEED", "9")
    assert main(["gen-data", "--out", str(tmp_path / "a"), *args]) == EXIT_OK
    monkeypatch.delenv("STAR_SEED")
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "9", *args]) == EXIT_OK
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_gen_data_invalid_split(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--known", "12"]) == EXIT_USAGE
    assert "unknown set empty" in capsys.readouterr().err


def test_bad_flag_is_usage_error(capsys):
    assert main(["train", "--no-such-flag"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_train_requires_dataset(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "'dataset'" in capsys.readouterr().err


def test_train_missing_dataset_dir_is_io_error(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), *TINY]) == EXIT_IO


def test_config_resolution(tmp_path):
    cfg = resolve({"epochs": 7, "lr": 0.2}, {"lr": "0.3"}, env={"STAR_SEED": "4"})
    assert (cfg.train.epochs, cfg.train.lr, cfg.train.seed) == (7, 0.3, 4)
    assert resolve({"seed": 1}, {}, env={"STAR_SEED": "4"}).train.seed == 1
    assert resolve({}, {"lr_decay_epochs": "3,6", "use_mpce": "false"}, env={}).train.lr_decay_epochs == (3, 6)
    with pytest.raises(ConfigError, match="unknown"):
        resolve({"learning_rate": 1.0}, {}, env={})
    with pytest.raises(ConfigError):
        resolve({}, {"epochs": "two"}, env={})


def test_config_file_and_echo(tiny_data, tmp_path):
    doc = {"dataset": str(tiny_data), "out": str(tmp_path / "run"), "epochs": 1}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    assert main(["train", "--config", str(tmp_path / "c.json"), *TINY]) == EXIT_OK
    echoed = json.loads((tmp_path / "run" / "config.json").read_text())
    assert echoed["epochs"] == 1 and echoed["heads"] == 2 and echoed["dataset"] == str(tiny_data)
    assert sorted(p.name for p in (tmp_path / "run" / "checkpoints").iterdir()) == ["epoch_001"]
    (tmp_path / "bad.json").write_text(json.dumps({**doc, "surprise": 1}))
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == EXIT_USAGE


def test_train_outputs(tiny_run):
    assert (tiny_run / "losses.png").stat().st_size > 0
    assert len((tiny_run / "losses.jsonl").read_text().splitlines()) == 2
    assert sorted(p.name for p in (tiny_run / "checkpoints").iterdir()) == ["epoch_001", "epoch_002"]


def test_resume_matches_uninterrupted(tiny_data, tiny_run, tmp_path):
    out = tmp_path / "resumed"
    assert main(["train", "--dataset", str(tiny_data), "--out", str(out), "--epochs", "2", *TINY,
                 "--resume", str(tiny_run / "checkpoints" / "epoch_001")]) == EXIT_OK
    a, b = tiny_run / "checkpoints" / "epoch_002", out / "checkpoints" / "epoch_002"
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_eval_zsl_warns_on_gamma(tiny_run, capsys):
    ckpt = str(tiny_run / "checkpoints" / "epoch_002")
    assert main(["eval", "--checkpoint", ckpt, "--mode", "zsl", "--gamma", "0.3"]) == EXIT_OK
    cap = capsys.readouterr()
    assert "--gamma is ignored" in cap.err
    report = json.loads((tiny_run / "eval_zsl" / "report.json").read_text())
    assert cap.out.strip() == f"mode=zsl Acc={report['acc']!r}"
    assert (tiny_run / "eval_zsl" / "confusion.png").stat().st_size > 0


def test_eval_summary_matches_report(tiny_run, tmp_path, capsys):
    ckpt = str(tiny_run / "checkpoints" / "epoch_002")
    assert main(["eval", "--checkpoint", ckpt, "--gamma", "0.25", "--out", str(tmp_path / "e")]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    r = json.loads((tmp_path / "e" / "report.json").read_text())
    assert line == f"mode=gzsl gamma={r['gamma']!r} S={r['S']!r} U={r['U']!r} H={r['H']!r}"
    rows = (tmp_path / "e" / "confusion.csv").read_text().splitlines()
    assert len(rows) == 6


def test_single_gamma_sweep_equals_eval(tiny_run, tmp_path, capsys):
    ckpt = str(tiny_run / "checkpoints" / "epoch_002")
    main(["eval", "--checkpoint", ckpt, "--gamma", "0.5", "--out", str(tmp_path / "e")])
    assert main(["sweep", "--checkpoint", ckpt, "--gamma-list", "0.5", "--out", str(tmp_path / "s")]) == EXIT_OK
    r = json.loads((tmp_path / "e" / "report.json").read_text())
    sweep = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert sweep["rows"] == [[0.5, r["S"], r["U"], r["H"]]]
    assert (tmp_path / "s" / "sweep.csv").read_text().splitlines()[0] == "gamma,S,U,H"
    assert (tmp_path / "s" / "sweep.png").stat().st_size > 0


def test_default_sweep_and_dump(tiny_run, capsys):
    ckpt = str(tiny_run / "checkpoints" / "epoch_002")
    assert main(["sweep", "--checkpoint", ckpt, "--gamma-steps", "9"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("points=9 ")
    assert len((tiny_run / "sweep" / "sweep.csv").read_text().splitlines()) == 10
    assert main(["sweep", "--checkpoint", ckpt, "--gamma-list", "0.5,0.1"]) == EXIT_USAGE
    assert main(["dump", "--checkpoint", ckpt]) == EXIT_OK
    index = json.loads((tiny_run / "embeddings" / "index.json").read_text())
    assert len(index["samples"]) == 20


def test_mismatched_dataset_is_compatibility_error(tiny_run, tmp_path):
    other = tmp_path / "other"
    assert main(["gen-data", "--out", str(other), "--categories", "6", "--known", "3", "--train-per-category", "1",
                 "--test-per-category", "1", "--frames", "8"]) == EXIT_OK
    ckpt = str(tiny_run / "checkpoints" / "epoch_002")
    assert main(["eval", "--checkpoint", ckpt, "--dataset", str(other)]) == EXIT_COMPAT


def test_missing_checkpoint_is_io_error(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none")]) == EXIT_IO
