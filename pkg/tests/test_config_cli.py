import json

import pytest

from unified_asr import cli
from unified_asr.config import FIELDS, RunConfig, describe
from unified_asr.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    back = RunConfig.from_text(cfg.to_text())
    assert back.values == cfg.values
    assert cfg.model_config().sc_flstm.output_len == 1296
    assert cfg.training_config().learning_rate == 1e-3
    suite = cfg.suite_config()
    assert suite.training.epochs == 10 and suite.training.learning_rate == 3e-3 and suite.seeds == (0, 1, 2)


def test_parsing_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nmodel.mode = sc_only\nsim.test_snr_db = -5, 0, 20\ntraining.derive_sc_from_mc = false\n")
    cfg = RunConfig.load(p, ["training.epochs=3"])
    assert cfg["model.mode"] == "sc_only" and cfg["sim.test_snr_db"] == [-5.0, 0.0, 20.0]
    assert cfg["training.derive_sc_from_mc"] is False and cfg["training.epochs"] == 3


@pytest.mark.parametrize("text", ["bogus.key = 1", "training.epochs = many", "model.mode = sideways",
                                  "training.derive_sc_from_mc = maybe", "no equals sign here",
                                  "model.view_hops = 4, 8, 15"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_describe_lists_every_key():
    text = describe()
    assert all(k in text for k in FIELDS)


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_inspect_full_scale(capsys):
    code, out, _ = _run(["inspect", "--full-scale"], capsys)
    assert code == 0
    fields = dict(line.split("\t") for line in out.strip().splitlines())
    assert fields["sc_flstm_output"] == fields["mc_flstm_output"] == "7424"


def test_inspect_desk(capsys):
    code, out, _ = _run(["inspect"], capsys)
    fields = dict(line.split("\t") for line in out.strip().splitlines())
    assert (fields["sc_fe"], fields["mc_fe"], fields["backend"]) == ("5312", "52928", "547144")


def test_exit_codes(capsys, tmp_path):
    assert _run(["inspect", "--set", "nope.key=1"], capsys)[0] == 2
    assert _run(["inspect", "--checkpoint", str(tmp_path / "missing.ckpt")], capsys)[0] == 5
    (tmp_path / "junk.ckpt").write_bytes(b"garbage")
    code, _, err = _run(["inspect", "--checkpoint", str(tmp_path / "junk.ckpt")], capsys)
    assert code == 3 and "CheckpointError" in err
    with pytest.raises(SystemExit):
        cli.main(["train"])


def test_gradcheck_verb(capsys):
    code, out, _ = _run(["gradcheck", "--ops", "softmax_ce", "tlstm"], capsys)
    assert code == 0 and "gradcheck PASSED" in out


def test_end_to_end(tmp_path, capsys):
    small = ["--set", "sim.num_train_sc=4", "--set", "sim.num_train_mc=4", "--set", "sim.num_test=9",
             "--set", "sim.frames_per_utt=6"]
    data, run, ev = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    assert _run(["gen-data", "--out-dir", str(data)] + small, capsys)[0] == 0
    assert (data / "resolved_config.txt").exists()
    code, out, _ = _run(["train", "--data-dir", str(data), "--out-dir", str(run), "--epochs", "1",
                         "--mode", "unified"] + small, capsys)
    assert code == 0 and "partitions\tbackend,mc_fe,sc_fe" in out
    code, out, _ = _run(["eval", "--checkpoint", str(run / "model.ckpt"), "--manifest", str(data / "test.tsv"),
                         "--path", "mc", "--experiment-id", "E6", "--out-dir", str(ev / "mc")], capsys)
    assert code == 0 and out.splitlines()[1].startswith("experiment_id")
    code, out, _ = _run(["eval", "--checkpoint", str(run / "model.ckpt"), "--manifest", str(data / "test.tsv"),
                         "--path", "sc", "--experiment-id", "E5", "--baseline-table", str(ev / "mc" / "metrics.tsv"),
                         "--out-dir", str(ev / "sc")], capsys)
    assert code == 0
    table = json.loads((ev / "sc" / "metrics.json").read_text())
    assert table["baseline_id"] == "E6"
    assert {r["experiment_id"] for r in table["rows"]} == {"E5", "E6"}
    code, out, _ = _run(["inspect", "--checkpoint", str(run / "model.ckpt")], capsys)
    assert code == 0 and "mode\tunified" in out
