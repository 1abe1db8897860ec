import json

import numpy as np
import pytest

from shf import ConfigError, NetworkSpec, WeightVec, data
from shf.cli import METRIC_KEYS, emit_report, load_dataset, main, resolve_split
from shf.config import PRESETS, build_config, parse_config
from shf.driver import TrainReport
from shf.network import loss_at


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "dataset = synthetic\nencoder_dims = 256, 64, 16\n"))
    assert cfg.train.sigma == 1.5 and cfg.train.alpha == 1e-4
    assert cfg.train.lambda1 == 10.0 and cfg.train.drop == 0.99
    assert cfg.layer_dims() == [256, 64, 16, 64, 256]
    assert cfg.dataset.format == "synthetic" and cfg.split is None


def test_drop_out_of_range_names_line(tmp_path):
    path = write(tmp_path, "# comment\ndataset = synthetic\ndrop = 1.5\nencoder_dims = 16, 4\n")
    with pytest.raises(ConfigError, match=r"run.cfg:3: .*drop"):
        parse_config(path)


@pytest.mark.parametrize("text, pattern", [
    ("dataset = synthetic\nencoder_dims = 4, 2\nbogus = 1\n", r":3: unknown key 'bogus'"),
    ("dataset = synthetic\nencoder_dims = 4, 2\nn1 = many\n", r":3: n1: cannot read"),
    ("dataset = synthetic\nencoder_dims = 4, 2\nlambda1\n", r":3: expected 'key = value'"),
    ("dataset = synthetic\ndataset = synthetic\n", r":2: duplicate key"),
    ("dataset = synthetic\n", r"missing required key 'encoder_dims'"),
    ("dataset = synthetic\nencoder_dims = 4, 2\nn_train = 5\n", r"all of n_train"),
])
def test_config_diagnostics(tmp_path, text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(write(tmp_path, text))


def test_curves_preset_expansion(tmp_path):
    cfg = parse_config(write(tmp_path, "dataset = curves.rawmat\n"), preset="curves")
    t = cfg.train
    assert (t.lambda1, t.drop, t.gamma1, t.maxiter1) == (5.0, 0.99, 0.7, 200)
    assert (t.atol, t.ftol, t.theta, t.m0, t.n1, t.n_max) == (1e-8, 1e-7, 0.5, 20, 250, 2500)
    assert cfg.encoder_dims == [784, 400, 200, 100, 50, 25, 6]
    assert (cfg.split.n_train, cfg.split.n_test, cfg.split.n_val) == (20000, 8000, 2000)
    assert cfg.dataset.format == "rawmat"


def test_explicit_key_overrides_preset(tmp_path):
    cfg = parse_config(write(tmp_path, "preset = mnist\ndataset = x.idx\nlambda1 = 3\n"))
    assert cfg.train.lambda1 == 3.0 and cfg.train.drop == 0.98 and cfg.preset == "mnist"


def test_fraction_values():
    cfg = build_config({"dataset": ("synthetic", 1), "encoder_dims": ("4,2", 2), "drop": ("49/50", 3)})
    assert cfg.train.drop == 0.98


def smoke(tmp_path, extra="", args=()):
    path = write(tmp_path, "preset = smoke\noutput_dir = " + str(tmp_path / "out") + "\n" + extra)
    code = main(["train", "--config", str(path), "--threads", "1", *args])
    return code, tmp_path / "out"


def test_smoke_run(tmp_path):
    code, out = smoke(tmp_path)
    assert code == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 10
    for line in lines:
        assert set(METRIC_KEYS) <= set(json.loads(line))
    report = json.loads((out / "report.json").read_text())
    assert report["iterations"] == 10 and report["stopped_by"] == "max_iters"
    assert report["test_error"] == pytest.approx(2 * report["test_loss"], rel=1e-15)


def test_report_round_trip(tmp_path):
    code, out = smoke(tmp_path)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    cfg = parse_config(tmp_path / "run.cfg")
    ds = load_dataset(cfg)
    train_x, test_x, val_x = data.split(ds, resolve_split(cfg, ds.N))
    w = data.load_weights(out / report["weights"])
    for key, X in (("train_loss", train_x), ("val_loss", val_x), ("test_loss", test_x)):
        assert loss_at(w, X) == pytest.approx(report[key], rel=1e-12)


def test_wall_clock_flag(tmp_path):
    code, out = smoke(tmp_path, "max_wall_seconds = 0\n")
    assert code == 0
    assert json.loads((out / "report.json").read_text())["stopped_by"] == "wall_clock"


def test_same_seed_same_metrics(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _, out_a = smoke(a, args=("--deterministic",))
    _, out_b = smoke(b, args=("--deterministic",))
    assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()


def test_seed_flag_changes_run(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    smoke(a, args=("--deterministic", "--seed", "1"))
    smoke(b, args=("--deterministic", "--seed", "2"))
    assert (a / "out" / "metrics.jsonl").read_bytes() != (b / "out" / "metrics.jsonl").read_bytes()
    assert json.loads((a / "out" / "report.json").read_text())["seed"] == 1


def test_output_dir_env_override(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("SHF_OUTPUT_DIR", str(target))
    code, out = smoke(tmp_path)
    assert code == 0
    assert (target / "report.json").exists() and not out.exists()


def test_io_failure_exit_code(tmp_path):
    blocker = tmp_path / "out"
    blocker.write_text("not a directory")
    code, _ = smoke(tmp_path)
    assert code == 3


def test_missing_dataset_file(tmp_path, capsys):
    path = write(tmp_path, "dataset = nowhere.rawmat\nencoder_dims = 4, 2\n")
    assert main(["train", "--config", str(path)]) == 3
    assert "nowhere.rawmat" in capsys.readouterr().err


def test_dims_must_match_data(tmp_path):
    path = write(tmp_path, "preset = smoke\nencoder_dims = 65, 4\noutput_dir = " + str(tmp_path) + "\n")
    assert main(["train", "--config", str(path)]) == 2


def test_bad_config_exit_code(tmp_path):
    assert main(["train", "--config", str(write(tmp_path, "drop = 2\n"))]) == 2


def test_gen_curves_and_convert(tmp_path):
    out = tmp_path / "c.rawmat"
    assert main(["gen-curves", "--count", "5", "--side", "8", "--seed", "3", "--out", str(out)]) == 0
    X = data.load_rawmat(out).X
    np.testing.assert_array_equal(X, data.gen_curves(5, 8, np.random.default_rng(3)).X)

    idx = tmp_path / "imgs.idx"
    idx.write_bytes(data.idx_bytes(np.arange(16, dtype=np.uint8).reshape(4, 2, 2)))
    conv = tmp_path / "imgs.rawmat"
    assert main(["convert-idx", "--in", str(idx), "--out", str(conv)]) == 0
    np.testing.assert_array_equal(data.load_rawmat(conv).X, data.load_idx(idx).X)
    (tmp_path / "bad.idx").write_bytes(b"\x00\x00\x08\x01")
    assert main(["convert-idx", "--in", str(tmp_path / "bad.idx"), "--out", str(conv)]) == 2


def test_perfect_reconstruction_reports_zero(tmp_path):
    spec = NetworkSpec((3, 2, 3))
    w = WeightVec.zeros(spec)
    X = np.full((4, 3), 0.5)
    f = loss_at(w, X)
    rep = TrainReport(best_w=w, best_iter=1, train_loss=f, val_loss=f, test_loss=f,
                      initial_train_loss=f, stopped_by="converged", wall_time=0.0)
    cfg = build_config({"dataset": ("synthetic", 1), "encoder_dims": ("3, 2", 2)})
    body = emit_report(rep, cfg, str(tmp_path))
    assert body["train_error"] == body["val_error"] == body["test_error"] == 0.0


def test_presets_are_valid():
    for name in PRESETS:
        cfg = build_config({"dataset": ("synthetic", 1)}, preset=name)
        assert cfg.train.n1 <= cfg.train.n_max
