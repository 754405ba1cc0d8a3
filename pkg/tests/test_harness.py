import gzip
import io
import json
import math
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcrnn import net
from dcrnn.errors import ConfigError, ExperimentError, FormatError, UnsupportedVersionError
from dcrnn.harness import checkpoint as ck
from dcrnn.harness import cli, config, experiment, presets, report
from dcrnn.harness.config import ExperimentSpec, ModelSpec

SMALL_CFG = """\
# tiny forecasting run
[experiment]
name = lorenz-forecast
trials = 2
seed = 5

[train]
hidden = 4
epochs = 2
batch_size = 5

[data]
n_ic = 4
traj_len = 20

[model]
cell = dcrnn
k = 2

[model]
cell = rnn
"""


# ---------------------------------------------------------------- config

def test_parse_small_config():
    spec = config.parse_config_text(SMALL_CFG)
    assert spec.name == "lorenz-forecast" and spec.trials == 2 and spec.seed == 5
    assert [m.label for m in spec.models] == ["dcrnn-k2", "rnn"]
    assert spec.train["hidden"] == 4 and spec.train["learning_rate"] == 0.001
    assert spec.data["window"] == 10 and spec.data["n_ic"] == 4
    cfg = spec.train_config(spec.models[0], 11)
    assert cfg.k == 2 and cfg.seed == 11 and cfg.batch_size == 5


def test_defaults_per_experiment():
    spec = config.parse_config_text("[experiment]\nname = lorenz-classify\n")
    assert spec.train["epochs"] == 1000 and spec.data["T"] == [10]
    assert [m.label for m in spec.models][:2] == ["dcrnn-k1", "dcrnn-k2"]
    spec = config.parse_config_text("[experiment]\nname = copy\n[data]\nT = 50\n")
    assert spec.task == "copy" and spec.data["T"] == 50


@pytest.mark.parametrize("text,line", [
    ("[experiment]\nname = copy\n[training]\n", 3),
    ("[experiment]\nname = copy\nbogus = 1\n", 3),
    ("[experiment]\nname = copy\n[train]\nhidden = many\n", 4),
    ("[experiment]\nname = copy\n[train]\nhidden = 3\nhidden = 4\n", 5),
    ("[experiment]\nname = copy\n[experiment]\n", 3),
    ("[experiment\nname = copy\n", 1),
    ("x = 1\n", 1),
    ("[experiment]\nname = copy\njust words\n", 3),
    ("[experiment]\ntrials = 2\n", 1),
    ("# c\n[experiment]\nname = nothing\n", 3),
    ("[experiment]\nname = copy\n\n[model]\nk = 2\n", 4),
    ("[experiment]\nname = copy\n[model]\ncell = gru\n", 3),
    ("[experiment]\nname = copy\n[data]\nn_ic = 3\n", 4),
    ("[experiment]\nname = copy\ntrials = 0\n", 1),
    ("[experiment]\nname = lorenz-classify\n[data]\nT = 10, x\n", 4),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        config.parse_config_text(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}: ")


def test_emit_roundtrip():
    spec = config.parse_config_text(SMALL_CFG)
    again = config.parse_config_text(config.emit(spec))
    assert again == spec
    assert config.emit(again) == config.emit(spec)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(config.EXPERIMENTS), st.integers(1, 50), st.integers(0, 2 ** 31),
       st.floats(1e-5, 1.0), st.integers(1, 256), st.sampled_from(["dcrnn", "rnn", "lstm"]), st.integers(0, 4))
def test_emit_parse_property(name, trials, seed, lr, hidden, cell, k):
    spec = ExperimentSpec(name, trials, seed, "out/x", [ModelSpec(cell, k, beta_reg=0.5)],
                          train={"learning_rate": lr, "hidden": hidden})
    assert config.parse_config_text(config.emit(spec)) == spec


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("copy", models=[ModelSpec("rnn"), ModelSpec("rnn")])
    with pytest.raises(ValueError):
        ModelSpec("dcrnn", 1, eig_scope="bad")
    assert ModelSpec("lstm", 3).k == 0


# ---------------------------------------------------------------- checkpoints

def _ckpt(cell="dcrnn", k=2, seed=0):
    p = net.init_params(cell, 3, 2, 2, k, seed=seed)
    return ck.Checkpoint(p, 17, {"state": [1, 2]}, {"note": "x"})


@pytest.mark.parametrize("cell,k", [("dcrnn", 0), ("dcrnn", 3), ("rnn", 0), ("lstm", 0)])
def test_checkpoint_roundtrip_bitwise(tmp_path, cell, k):
    c = _ckpt(cell, k)
    path = tmp_path / "c.dcrn"
    ck.save_checkpoint(path, c)
    back = ck.load_checkpoint(path)
    assert back == c
    for name, arr in c.params.tensors().items():
        assert getattr(back.params, name).tobytes() == arr.tobytes()
    assert ck.dumps_checkpoint(back) == path.read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(net.CELLS), st.integers(1, 5), st.integers(1, 4), st.integers(1, 3),
       st.integers(0, 4), st.integers(0, 2 ** 31))
def test_checkpoint_roundtrip_property(cell, n, d, o, k, seed):
    p = net.init_params(cell, n, d, o, k, seed=seed)
    # exercise awkward float values too
    p.W_in.flat[0] = -0.0
    p.b_out[0] = 5e-324
    raw = ck.dumps_checkpoint(ck.Checkpoint(p, seed))
    assert ck.dumps_checkpoint(ck.loads_checkpoint(raw)) == raw


def test_checkpoint_truncation_everywhere():
    raw = ck.dumps_checkpoint(_ckpt())
    for cut in range(0, len(raw), 7):
        with pytest.raises(FormatError) as info:
            ck.loads_checkpoint(raw[:cut])
        assert info.value.offset is not None and info.value.offset <= len(raw)


def test_checkpoint_corruptions():
    raw = ck.dumps_checkpoint(_ckpt())
    with pytest.raises(FormatError) as info:
        ck.loads_checkpoint(b"NOPE" + raw[4:])
    assert info.value.offset == 0
    with pytest.raises(UnsupportedVersionError) as info:
        ck.loads_checkpoint(raw[:4] + struct.pack("<I", 2) + raw[8:])
    assert info.value.offset == 4
    with pytest.raises(FormatError):
        ck.loads_checkpoint(raw + b"\x00")
    meta_len = struct.unpack("<I", raw[8:12])[0]
    meta = json.loads(raw[12:12 + meta_len])
    for key, val in (("cell", "lstm"), ("cell", "gru"), ("n", 4)):
        bad = json.dumps(dict(meta, **{key: val}), sort_keys=True).encode()
        with pytest.raises(FormatError):
            ck.loads_checkpoint(raw[:8] + struct.pack("<I", len(bad)) + bad + raw[12 + meta_len:])
    with pytest.raises(FormatError):
        ck.loads_checkpoint(raw[:12] + b"\xff" * meta_len + raw[12 + meta_len:])


# ---------------------------------------------------------------- experiments and reports

@pytest.fixture(scope="module")
def small_result():
    return experiment.run_experiment(config.parse_config_text(SMALL_CFG))


def test_run_experiment_records(small_result):
    recs = small_result.records
    assert [(r.trial, r.model, r.seed) for r in recs] == [
        (0, "dcrnn-k2", 5), (0, "rnn", 5), (1, "dcrnn-k2", 6), (1, "rnn", 6)]
    assert all(r.ok and len(r.metrics) == 2 for r in recs)
    rows = small_result.summary()
    vals = small_result.values("rnn")
    assert math.isclose(rows[1]["mean"], np.mean(vals))
    assert math.isclose(rows[1]["std"], np.std(vals, ddof=1))


def test_report_is_reproducible(tmp_path, small_result):
    again = experiment.run_experiment(config.parse_config_text(SMALL_CFG))
    a, b = report.render_report(small_result), report.render_report(again)
    assert a["summary.csv"] == b["summary.csv"] and a["curves.csv"] == b["curves.csv"]
    assert a["trials.jsonl"] == b["trials.jsonl"]
    written = report.emit_report(small_result, tmp_path)
    names = {p.relative_to(tmp_path).as_posix() for p in written}
    assert {"summary.csv", "ranks.csv", "reductions.csv", "curves.csv", "trials.jsonl", "experiment.cfg",
            "metrics/dcrnn-k2-trial1.jsonl", "checkpoints/rnn-trial0.dcrn"} <= names
    c = ck.load_checkpoint(tmp_path / "checkpoints/rnn-trial0.dcrn")
    assert c.params == small_result.records[1].params and c.step == 2  # one batch per epoch
    assert config.parse_config(tmp_path / "experiment.cfg") == small_result.spec


def _fake_result(values, higher=False, name="lorenz-forecast"):
    spec = ExperimentSpec(name, trials=len(values[0]), models=[ModelSpec("dcrnn", 1), ModelSpec("lstm")])
    metric = "accuracy" if higher else "mse"
    res = experiment.ExperimentResult(spec)
    for label, vals in zip(["dcrnn-k1", "lstm"], values):
        for t, v in enumerate(vals):
            rec = experiment.TrialRecord(None, t, t, label, "ok" if v is not None else "failed",
                                         [{"test_metric": v, "train_metric": v, "metric": metric}])
            res.records.append(rec)
    return res


def test_ranks_and_reductions():
    res = _fake_result([[1.0, 4.0, 2.0], [2.0, 2.0, 8.0]])
    ranks = {r["model"]: r["ranks"] for r in res.rank_counts()}
    assert ranks == {"dcrnn-k1": [2, 1], "lstm": [1, 2]}
    red = [r for r in res.reductions() if r["model"] == "dcrnn-k1"][0]
    assert red["wins"] == 2 and red["n"] == 3
    assert math.isclose(red["mean_reduction"], np.mean([0.5, -1.0, 0.75]))


def test_reductions_on_accuracy_use_error_rate():
    res = _fake_result([[0.9], [0.8]], higher=True, name="lorenz-classify")
    for r in res.records:
        r.variant = 10
    red = [r for r in res.reductions() if r["model"] == "dcrnn-k1"][0]
    assert math.isclose(red["mean_reduction"], 0.5)
    assert res.length_trend()[0]["T"] == 10


def test_failed_trials_are_recorded_not_fatal():
    res = _fake_result([[1.0, None], [2.0, 3.0]])
    row = [r for r in res.summary() if r["model"] == "dcrnn-k1"][0]
    assert row["n_ok"] == 1 and row["n_failed"] == 1


def test_diverging_model_is_recorded(monkeypatch):
    spec = config.parse_config_text(SMALL_CFG)
    real = experiment.train_model

    def flaky(cfg, train, test):
        if cfg.cell == "rnn":
            from dcrnn.train import TrainingDiverged
            raise TrainingDiverged("boom", 3)
        return real(cfg, train, test)

    monkeypatch.setattr(experiment, "train_model", flaky)
    with pytest.warns(RuntimeWarning):
        res = experiment.run_experiment(spec)
    assert [r.status for r in res.records] == ["ok", "failed", "ok", "failed"]
    assert "TrainingDiverged" in res.records[1].error

    def broken(cfg, train, test):
        from dcrnn.train import TrainingDiverged
        raise TrainingDiverged("boom", 1)

    monkeypatch.setattr(experiment, "train_model", broken)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ExperimentError):
            experiment.run_experiment(spec)


def _write_idx(path, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    raw = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()
    path.write_bytes(gzip.compress(raw) if path.suffix == ".gz" else raw)


def test_mnist_rows_from_user_files(tmp_path, monkeypatch):
    rng = np.random.default_rng(0)
    for key, name in presets.MNIST_FILES.items():
        shape = (12, 28, 28) if "images" in key else (12,)
        data = rng.integers(0, 256, size=shape) if "images" in key else np.arange(12) % 10
        _write_idx(tmp_path / name, data)
    monkeypatch.setenv("DCRNN_MNIST_DIR", str(tmp_path))
    spec = presets.preset("mnist-rows")
    spec.data.update(n_train=10, n_test=5)
    tr, te = experiment.build_datasets(spec, 0)
    assert tr.inputs.shape == (10, 28, 28) and len(te) == 5 and tr.task == "image_rows"
    monkeypatch.delenv("DCRNN_MNIST_DIR")
    with pytest.raises(ExperimentError):
        experiment.build_datasets(presets.preset("mnist-rows"), 0)


def test_classify_and_copy_datasets():
    spec = ExperimentSpec("lorenz-classify", data={"T": [5, 8], "n_per_class": 10, "traj_steps": 100})
    assert experiment.variants_of(spec) == [5, 8]
    tr, te = experiment.build_datasets(spec, 0, 8)
    assert tr.seq_len == 8 and len(tr) + len(te) == 20
    spec = ExperimentSpec("copy", data={"T": 4, "n_train": 6, "n_test": 2})
    tr, te = experiment.build_datasets(spec, 1)
    assert len(tr) == 6 and len(te) == 2 and tr.seq_len == 24


@pytest.mark.parametrize("name", config.EXPERIMENTS)
@pytest.mark.parametrize("scale", sorted(presets.PRESETS))
def test_presets_are_valid(name, scale):
    spec = presets.preset(name, scale)
    assert config.parse_config_text(config.emit(spec)) == spec
    with pytest.raises(ConfigError):
        presets.preset(name, "huge")


# ---------------------------------------------------------------- CLI

def _run(argv):
    out = io.StringIO()
    code = cli.main(argv, out)
    return code, out.getvalue()


def test_cli_pipeline(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL_CFG)
    runs = tmp_path / "runs"
    code, text = _run(["reproduce", "lorenz-forecast", "--config", str(cfg), "--out", str(runs), "--trials", "1"])
    assert code == 0 and "dcrnn-k2\tmse" in text
    assert (runs / "summary.csv").exists()
    code, text = _run(["inspect", str(runs / "checkpoints/dcrnn-k2-trial0.dcrn")])
    info = json.loads(text)
    assert code == 0 and info["cell"] == "dcrnn" and info["k"] == 2 and "spectral_radius" in info["stability"]
    code, _ = _run(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data"), "--seed", "5"])
    assert code == 0
    code, text = _run(["eval", str(runs / "checkpoints/rnn-trial0.dcrn"),
                       str(tmp_path / "data/lorenz-forecast-test.dcds")])
    assert code == 0 and "mse" in json.loads(text)
    code, text = _run(["train", "--config", str(cfg), "--out", str(tmp_path / "t"), "--model", "rnn"])
    assert code == 0 and (tmp_path / "t/rnn.dcrn").exists() and (tmp_path / "t/rnn-metrics.jsonl").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("[experiment]\nname = copy\nwhat = 1\n")
    assert _run(["train", "--config", str(bad_cfg)])[0] == cli.EXIT_USAGE
    assert "line 3" in capsys.readouterr().err
    junk = tmp_path / "junk.dcrn"
    junk.write_bytes(b"garbage")
    assert _run(["inspect", str(junk)])[0] == cli.EXIT_FORMAT
    assert _run(["inspect", str(tmp_path / "missing.dcrn")])[0] == cli.EXIT_IO
    assert _run(["train"])[0] == cli.EXIT_USAGE
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL_CFG)
    assert _run(["train", "--config", str(cfg), "--model", "gru"])[0] == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2


def test_cli_exit_code_mapping():
    from dcrnn.errors import ConvergenceError, DegeneracyError, DivergenceError, StructuralError
    assert cli.exit_code_for(DivergenceError("x", 1)) == cli.EXIT_NUMERIC
    assert cli.exit_code_for(ConvergenceError("x")) == cli.EXIT_NUMERIC
    assert cli.exit_code_for(DegeneracyError("x")) == cli.EXIT_NUMERIC
    assert cli.exit_code_for(ExperimentError("x")) == cli.EXIT_EXPERIMENT
    assert cli.exit_code_for(StructuralError("x")) == cli.EXIT_INTERNAL
