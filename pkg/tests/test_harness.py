import json
import math

import numpy as np
import pytest

from ftnlab import cli
from ftnlab.channel import noise_variance
from ftnlab.cnn import CnnHyper, init_params
from ftnlab.harness import (CSV_COLUMNS, ConfigError, ExperimentConfig, ModelError, block_rng, load_model,
                            parse_flat, parse_train_config, run_ber_sweep, save_model, sweep_csv)
from ftnlab.analysis import qfunc
from ftnlab.spda import FgConfig, detect
from ftnlab.channel import PulseSpec, isi_taps
from ftnlab.trainer import TrainingDiverged

TINY_TRAIN = """
K = 10
L_E = 2
m_max = 2
batches_per_snr = 2
V = 2
n_batches = 2
window = 1
"""


def csv_rows(text):
    return [line.split(",") for line in text.splitlines() if line and not line.startswith("#")]


# ------------------------------------------------------------------ config


def test_parse_flat_rules():
    assert parse_flat("a = 1\n# note\n\nb=x y  # trailing\n") == {"a": "1", "b": "x y"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_flat("a = 1\na = 2")
    with pytest.raises(ConfigError):
        parse_flat("just words")


def test_experiment_config_parse_and_dump():
    cfg = ExperimentConfig.parse("tau = 0.7\nsnr_db = 3, 4.5\ndetector = bcjr\nL_E = 4\nN = 250")
    assert (cfg.tau, cfg.snr_db, cfg.detector, cfg.L_E, cfg.N) == (0.7, (3.0, 4.5), "bcjr", 4, 250)
    assert ExperimentConfig.parse(cfg.dump()) == cfg
    assert ExperimentConfig.parse("tau = 0.7", tau=0.8).tau == 0.8
    assert ExperimentConfig.parse("coded = false\nK = 40").N == 40


@pytest.mark.parametrize("text", [
    "colour = red", "tau = 1.5", "tau = abc", "detector = viterbi", "L_E = 12", "N = 100",
    "min_block_errors = 10", "rho_max = 0", "snr_db = ",
])
def test_experiment_config_rejects(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.parse(text)


def test_train_config_parse():
    cfg = parse_train_config("L = 9\nL_E = 3\nn1 = 4\nomega = .5, 1\nsnr_range = 5, 7")
    assert (cfg.span, cfg.L_E, cfg.hyper.n1, cfg.omega, cfg.snr_range) == (9, 3, 4, (0.5, 1.0), (5.0, 7.0))
    for bad in ("lr = -1", "snr_range = 5", "shape = 3", "gamma = 2"):
        with pytest.raises(ConfigError):
            parse_train_config(bad)


def test_block_streams_independent():
    a = block_rng(1, 0, 5).standard_normal(4)
    np.testing.assert_array_equal(a, block_rng(1, 0, 5).standard_normal(4))
    assert not np.array_equal(a, block_rng(1, 0, 6).standard_normal(4))
    assert not np.array_equal(a, block_rng(1, 1, 5).standard_normal(4))


# ------------------------------------------------------------------ BER sweep


def test_nyquist_threshold_matches_q_function():
    cfg = ExperimentConfig(tau=1.0, coded=False, detector="threshold", K=1000, snr_db=(4.0,),
                           max_blocks=100, seed=3)
    rec = run_ber_sweep(cfg)[0]
    p = qfunc(math.sqrt(2 * 10 ** 0.4))
    assert rec.bits == 100_000 and not rec.censored
    assert abs(rec.ber - p) < 3 * math.sqrt(p * (1 - p) / rec.bits)


def test_noiseless_point_is_censored():
    cfg = ExperimentConfig.parse("snr_db = inf\nmax_blocks = 120\nrho_max = 2")
    text = sweep_csv(cfg)
    assert "# censored snr_db = inf" in text
    rows = csv_rows(text)
    assert rows[0] == list(CSV_COLUMNS)
    assert rows[1] == ["inf", str(120 * 123), "0", "120", "0", "0.0"]


def test_sweep_reproducible_and_batch_independent():
    base = dict(tau=0.6, L_E=2, K=40, rho_max=2, snr_db=(1.0, 2.0), max_blocks=300, seed=5)
    a = sweep_csv(ExperimentConfig(**base, batch_blocks=50))
    b = sweep_csv(ExperimentConfig(**base, batch_blocks=50))
    c = sweep_csv(ExperimentConfig(**base, batch_blocks=7))
    assert a == b
    assert csv_rows(a) == csv_rows(c)
    first = csv_rows(a)[1]
    assert int(first[4]) == 100  # stopped exactly at the error target


def test_sweep_needs_model_for_dlspda():
    with pytest.raises(ModelError, match="trained model"):
        run_ber_sweep(ExperimentConfig(detector="dlspda"))


# ------------------------------------------------------------------ persistence


@pytest.fixture
def model():
    m = init_params(CnnHyper(), 24, 2, 3, np.random.default_rng(0))
    m.coupling[:] = np.random.default_rng(1).uniform(0.5, 1.5, m.coupling.shape)
    m.metadata["lr"] = 1e-3
    return m


def test_model_roundtrip(tmp_path, model, rng):
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path, N=24, L_E=2, m_max=3)
    for (na, a), (nb, b) in zip(model.named_arrays(), back.named_arrays()):
        assert na == nb
        np.testing.assert_array_equal(a, b)
    assert back.metadata == {"lr": 1e-3}
    prof = isi_taps(PulseSpec(0.6, 0.3, 11))
    y = rng.normal(size=(1000, 24))
    s2 = float(noise_variance(6.0, 0.5))
    fg = FgConfig(24, 2, 3, use_nn=True)
    np.testing.assert_array_equal(detect(y, None, prof, s2, fg, model), detect(y, None, prof, s2, fg, back))


def test_model_errors(tmp_path, model):
    path = tmp_path / "m.json"
    save_model(model, path)
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelError, match="truncated"):
        load_model(tmp_path / "cut.json")
    with pytest.raises(ModelError, match="dense layer"):
        load_model(path, N=200)
    with pytest.raises(ModelError, match="coupling"):
        load_model(path, L_E=3)
    with pytest.raises(ModelError, match="m_max"):
        load_model(path, m_max=6)
    with pytest.raises(ModelError, match="cannot read"):
        load_model(tmp_path / "missing.json")
    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="version"):
        load_model(tmp_path / "v.json")
    doc["version"] = 1
    doc["arrays"][0]["shape"] = [1, 1, 1]
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ModelError):
        load_model(tmp_path / "s.json")
    (tmp_path / "f.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ModelError, match="not a DL-SPDA"):
        load_model(tmp_path / "f.json")


# ------------------------------------------------------------------ command line


def test_cli_taps(capsys):
    assert cli.main(["taps", "--tau", "0.6"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,value" and len(lines) == 24
    assert lines[12] == "0,1"


def test_cli_complexity(capsys):
    assert cli.main(["complexity"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "DL-SPDA x6,241500,103200" in out
    assert any(line.startswith("log-MAP") and line.endswith("32250,19000") for line in out)


def test_cli_verify_quick(capsys):
    assert cli.main(["verify", "--quick"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert cli.main(["simulate", "--config", str(bad)]) == 3
    assert cli.main(["simulate", "--detector", "dlspda"]) == 4
    assert "model" in capsys.readouterr().err

    def boom(*a, **k):
        raise TrainingDiverged("non-finite loss")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--out", str(tmp_path / "x.json")]) == 5


def test_cli_train_then_simulate(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TINY_TRAIN)
    model_path = tmp_path / "tiny.json"
    loss_csv = tmp_path / "loss.csv"
    assert cli.main(["train", "--config", str(cfg), "--out", str(model_path), "--loss-csv", str(loss_csv),
                     "--quiet"]) == 0
    assert loss_csv.read_text().splitlines()[0] == "batch_index,avg_loss,xi_avg,xi_cg"
    m = load_model(model_path, N=24, L_E=2, m_max=2)
    assert len(m.metadata["losses"]) == 2
    sim = tmp_path / "sim.cfg"
    sim.write_text("K = 10\nL_E = 2\nm_max = 2\ndetector = dlspda\nrho_max = 2\nsnr_db = 2\nmax_blocks = 20\n")
    out = tmp_path / "ber.csv"
    capsys.readouterr()
    assert cli.main(["simulate", "--config", str(sim), "--model", str(model_path), "--out", str(out)]) == 0
    rows = csv_rows(out.read_text())
    assert rows[0] == list(CSV_COLUMNS) and len(rows) == 2
    assert cli.main(["simulate", "--config", str(sim), "--model", str(model_path), "--taps", "3"]) == 4
