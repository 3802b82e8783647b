import hashlib
import json
import subprocess
import sys

import pytest

from voltpolicy.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main, parse_mask


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def config(tmp_path):
    cfg = {"replicas": 1, "train_fraction": 0.95, "train": {"epochs": 1}, "seed": 4}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def _strip_timing(doc):
    for rep in doc["strategies"].values():
        rep.pop("wall_clock_s", None)
    return doc


def test_gen_is_reproducible(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", str(config), "--out", str(a)]) == EXIT_OK
    assert main(["gen", "--config", str(config), "--out", str(b)]) == EXIT_OK
    for name in ("scenarios.csv", "train.csv", "test.csv"):
        assert _digest(a / name) == _digest(b / name)
    manifest = json.loads((a / "manifest.json").read_text())
    assert (manifest["n_train"], manifest["n_test"]) == (228, 12)
    assert manifest["config"]["seed"] == 4


def test_default_gen_sizes(tmp_path):
    assert main(["gen", "--out", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert (manifest["n_scenarios"], manifest["n_train"], manifest["n_test"]) == (1200, 960, 240)


def test_train_eval_pipeline_is_deterministic(tmp_path, config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        outs.append(out)
        assert main(["gen", "--config", str(config), "--out", str(out)]) == EXIT_OK
        assert main(["train", "--config", str(config), "--out", str(out), "--formulation", "cc", "--alpha", "0.5"]) == EXIT_OK
        assert main(["eval", "--config", str(config), "--out", str(out), "--baseline", "none,opf"]) == EXIT_OK
    a, b = outs
    assert (a / "train_log.csv").read_text() == (b / "train_log.csv").read_text()
    ca, cb = (json.loads((d / "checkpoint.json").read_text()) for d in (a, b))
    assert ca["metadata"]["run_config"].pop("out") != cb["metadata"]["run_config"].pop("out")
    assert ca == cb
    ra = _strip_timing(json.loads((a / "eval_report.json").read_text()))
    rb = _strip_timing(json.loads((b / "eval_report.json").read_text()))
    ra["config"].pop("out"), rb["config"].pop("out")
    assert ra == rb
    assert set(ra["strategies"]) == {"policy", "no_compensation", "deterministic_opf"}
    resolved = json.loads((a / "config.resolved.json").read_text())
    assert resolved["train"]["formulation"] == "cc" and resolved["seed"] == 4
    for name in ("losses_timeline.csv", "deviation_quantiles.csv", "radar.csv"):
        assert (a / "plots" / name).is_file()
    (a / "plots" / "radar.csv").unlink()
    assert main(["export-plots", "--out", str(a)]) == EXIT_OK
    assert (a / "plots" / "radar.csv").read_text() == (b / "plots" / "radar.csv").read_text()


def test_zeroth_order_and_mask_flags(tmp_path, config):
    out = tmp_path / "o"
    main(["gen", "--config", str(config), "--out", str(out)])
    argv = ["train", "--config", str(config), "--out", str(out), "--gradient-mode", "zeroth-order",
            "--epsilon", "0.1", "--mask", "solar,2-11"]
    assert main(argv) == EXIT_OK
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["metadata"]["train_config"]["gradient_mode"] == "zeroth_order"
    assert len(ckpt["metadata"]["metered_buses"]) == 24
    # a different mask at eval time is refused, naming both masks
    assert main(["eval", "--config", str(config), "--out", str(out), "--mask", "full"]) == EXIT_OK
    assert main(["eval", "--config", str(config), "--out", str(out), "--mask", "solar"]) == EXIT_DATA


def test_baseline_command(tmp_path, config):
    out = tmp_path / "o"
    main(["gen", "--config", str(config), "--out", str(out)])
    assert main(["baseline", "--config", str(config), "--out", str(out), "--split", "test"]) == EXIT_OK
    doc = json.loads((out / "baseline_report.json").read_text())
    assert list(doc["strategies"]) == ["no_compensation"]


def test_exit_codes(tmp_path, config, capsys):
    out = str(tmp_path / "o")
    assert main(["train", "--out", out]) == EXIT_DATA
    assert main(["eval", "--out", out]) == EXIT_DATA
    assert main(["export-plots", "--out", out]) == EXIT_DATA
    assert main(["gen", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["gen", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text(json.dumps({"profiles": "nowhere.csv"}))
    assert main(["gen", "--config", str(bad), "--out", out]) == EXIT_DATA
    assert not (tmp_path / "o").exists()
    assert main(["train", "--alpha", "1.5", "--formulation", "cc", "--out", out]) == EXIT_CONFIG
    assert main(["eval", "--baseline", "magic", "--out", out]) == EXIT_CONFIG
    assert main(["gen", "--mask", "1-x"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_numeric_abort_exit_code(tmp_path, config, monkeypatch):
    out = tmp_path / "o"
    main(["gen", "--config", str(config), "--out", str(out)])
    from voltpolicy import training

    def boom(*args, **kwargs):
        raise training.TrainingAborted("diverged")

    monkeypatch.setattr("voltpolicy.estimator.train", boom)
    assert main(["train", "--config", str(config), "--out", str(out)]) == EXIT_NUMERIC


def test_parse_mask():
    assert parse_mask("full") is None
    assert parse_mask("solar,2-4,9", solar_buses=[5, 9]) == [2, 3, 4, 5, 9]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "voltpolicy.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen", "train", "eval", "baseline", "export-plots"):
        assert sub in proc.stdout


def test_config_file_mask(tmp_path):
    from voltpolicy.cli import ConfigError, _parser, _resolve

    path = tmp_path / "m.json"
    for mask, expected in (("full", None), ("solar,2-11", 24), ([5, 3, 5], [3, 5])):
        path.write_text(json.dumps({"mask": mask}))
        cfg = _resolve(_parser().parse_args(["train", "--config", str(path)]))
        assert cfg.mask == expected or len(cfg.mask) == expected
    path.write_text(json.dumps({"mask": ["x"]}))
    with pytest.raises(ConfigError):
        _resolve(_parser().parse_args(["train", "--config", str(path)]))
