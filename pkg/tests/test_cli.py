import filecmp
import os

import pandas as pd
import pytest
import ujson

from vamce.cli import build_parser, main, resolve_config
from vamce.models import save_model

ENHANCE_FAST = ["--mh-iters", "4", "--burn-in", "2", "--rec-mh-iters", "4", "--rec-burn-in", "2", "--max-iters", "3", "--kb", "3"]


def _write_config(tmp_path, values, name="config.json"):
    path = str(tmp_path / name)
    with open(path, "w") as f:
        ujson.dump(values, f)
    return path


def test_help_lists_defaults(capsys):
    assert main(["enhance", "--help"]) == 0
    out = capsys.readouterr().out
    assert "--eps2" in out and "(default: 0.01)" in out
    assert "--freeze-gains" in out


def test_usage_errors_exit_2(capsys):
    assert main(["no-such-command"]) == 2
    assert main(["enhance", "--no-such-flag", "1"]) == 2
    assert main(["enhance"]) == 2
    assert "--model" in capsys.readouterr().err


def test_missing_model_exits_3(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    code = main(["enhance", "--model", missing, "--in", "x.wav", "--out", str(tmp_path / "y.wav")])
    assert code == 3
    assert missing in capsys.readouterr().err


def test_config_file_and_flags_merge(tmp_path):
    path = _write_config(tmp_path, {"eps2": 0.05, "kb": 4, "mh_iters": 60})
    args = build_parser().parse_args(["enhance", "--config", path, "--kb", "6"])
    cfg = resolve_config(args)
    assert cfg.eps2 == 0.05      # file over default
    assert cfg.kb == 6           # flag over file
    assert cfg.burn_in == 30     # default
    assert cfg.mh_iters == 60
    assert cfg.command == "enhance"

    enhancer = cfg.enhancer()
    assert enhancer.proposal_var == 0.05
    assert enhancer.n_noise_components == 6


def test_unknown_config_key_exits_2(tmp_path):
    path = _write_config(tmp_path, {"no_such_knob": 1})
    assert main(["enhance", "--config", path]) == 2


def test_malformed_config_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"kb\": 4,")
    assert main(["enhance", "--config", str(path)]) == 2
    assert main(["enhance", "--config", str(tmp_path / "missing.json")]) == 3


def test_burn_in_not_below_iterations_exits_2(tmp_path):
    code = main(["enhance", "--model", "m.json", "--in", "x.wav", "--out", str(tmp_path / "y.wav"),
                 "--mh-iters", "10", "--burn-in", "10"])
    assert code == 2


def test_frequency_mismatch_exits_2(tmp_path, tiny_vae, capsys):
    model = str(tmp_path / "vae.json")
    save_model(tiny_vae, model)
    # default 64 ms window gives F = 513, the model has F = 33
    code = main(["enhance", "--model", model, "--in", "x.wav", "--out", str(tmp_path / "y.wav")])
    assert code == 2
    assert "F=33" in capsys.readouterr().err


def _run(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, argv
    return code


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path, small_corpus, monkeypatch):
    common = ["--seed", "0", "--win-ms", "16"]
    model, dictionary = tmp_path / "vae.json", tmp_path / "dict.json"

    _run("train-vae", *common, "--corpus", small_corpus, "--out", model,
         "--latent-dim", "4", "--hidden", "16", "--max-epochs", "3", "--checkpoint-dir", tmp_path / "ckpt")
    assert os.path.exists(tmp_path / "vae_training_log.json")
    assert os.listdir(tmp_path / "ckpt")
    _run("train-dict", *common, "--corpus", small_corpus, "--out", dictionary, "--rank", "4", "--nmf-max-iters", "20")

    monkeypatch.setenv("VAMCE_THREADS", "1")
    _run("enhance", *common, *ENHANCE_FAST, "--model", model, "--corpus", small_corpus,
         "--out-dir", tmp_path / "mcem", "--dump-trace", tmp_path / "traces", "--full-trace")
    monkeypatch.setenv("VAMCE_THREADS", "4")
    _run("enhance", *common, *ENHANCE_FAST, "--model", model, "--corpus", small_corpus, "--out-dir", tmp_path / "mcem_again")
    for name in ["test_000.wav", "test_001.wav"]:
        assert filecmp.cmp(tmp_path / "mcem" / name, tmp_path / "mcem_again" / name, shallow=False)

    trace = pd.read_csv(tmp_path / "traces" / "test_000_trace.csv")
    assert list(trace.columns) == ["iter", "q_tilde", "q_estep", "q_after_h", "q_after_w", "mean_accept", "mean_gain", "seconds"]
    assert (trace["seconds"] >= 0).all()
    assert 1 <= len(trace) <= 3

    _run("enhance-nmf", *common, "--dict", dictionary, "--kb", "3", "--nmf-max-iters", "20",
         "--corpus", small_corpus, "--out-dir", tmp_path / "nmf")
    for method, enhanced in [("mcem", "mcem"), ("isnmf", "nmf")]:
        _run("evaluate", *common, "--corpus", small_corpus, "--enhanced-dir", tmp_path / enhanced,
             "--method", method, "--out", tmp_path / f"report_{method}.csv")
        report = pd.read_csv(tmp_path / f"report_{method}.csv")
        assert list(report["id"]) == ["test_000", "test_001"]
        assert set(report["method"]) == {method}

    _run("gain-robustness", *common, *ENHANCE_FAST, "--model", model,
         "--in", os.path.join(small_corpus, "mixture", "test_000.wav"),
         "--reference", os.path.join(small_corpus, "clean", "test_000.wav"),
         "--scalings-db", "0", "12", "--out", tmp_path / "gains.csv")
    gains = pd.read_csv(tmp_path / "gains.csv")
    assert list(gains.columns) == ["scaling_db", "sdr_free_db", "sdr_frozen_db"]
    assert list(gains["scaling_db"]) == [0.0, 12.0]


@pytest.mark.slow
def test_single_file_mode_is_reproducible(tmp_path, small_corpus, tiny_vae):
    model = str(tmp_path / "vae.json")
    # 4 ms window: F = 33 matches the fixture model
    save_model(tiny_vae, model)
    mixture = os.path.join(small_corpus, "mixture", "test_001.wav")
    for name in ["a.wav", "b.wav"]:
        _run("enhance", "--win-ms", "4", *ENHANCE_FAST, "--model", model, "--in", mixture, "--out", tmp_path / name)
    assert filecmp.cmp(tmp_path / "a.wav", tmp_path / "b.wav", shallow=False)
