import csv
import math

import numpy as np
import pytest

from transae_asd import pipeline
from transae_asd.cli import main
from transae_asd.config import RunConfig, parse_kv_lines
from transae_asd.dsp import ConfigError
from transae_asd.scorer import read_scores

SMALL = [
    "n_fft=256", "hop=128", "n_mels=16", "ff_dim=16", "classifier_hidden=8",
    "epochs=3", "classifier_period=2", "batch_size=32", "samples_per_epoch=64", "lr=0.001",
    "synth.num_ids=2", "synth.clips_per_id=3", "synth.test_normal_per_id=2",
    "synth.test_anomaly_per_id=2", "synth.duration_s=1.0", "synth.anomaly_duration_s=0.2",
]


def sets(*pairs):
    return [a for kv in pairs for a in ("--set", kv)]


# ---------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    cfg = RunConfig().with_overrides({"epochs": "7", "beta": "0.5", "standardize": "false", "synth.num_ids": "2"})
    cfg.save(tmp_path / "run.txt")
    back = RunConfig.load(tmp_path / "run.txt")
    assert back == cfg
    assert back.r is None and back.beta == 0.5 and back.standardize is False


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig().with_overrides({"bogus": "1"})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"epochs": "many"})


def test_kv_parsing():
    assert parse_kv_lines(["# comment", "a = 1", "", "b=x # trailing"]) == {"a": "1", "b": "x"}
    with pytest.raises(ConfigError):
        parse_kv_lines(["novalue"])


def test_score_config_defaults():
    cfg = RunConfig()
    assert cfg.score_config("Valve").r == 0.92
    assert cfg.with_overrides({"r": "0.5"}).score_config("Valve").r == 0.5


# ---------------------------------------------------------------- exit codes


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 2
    assert main(["nonsense"]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--set", "nope=1"]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_missing_corpus_exit_code(tmp_path):
    assert main(["featurize", "--corpus", str(tmp_path / "missing")]) == 2


def test_missing_machine_type(tmp_path):
    assert main(["synth", "--out", str(tmp_path), *sets(*SMALL)]) == 0
    assert main(["train", "--corpus", str(tmp_path), "--machine-type", "Fan", "--out", str(tmp_path / "m"),
                 *sets(*SMALL)]) == 2


# ---------------------------------------------------------------- full pipeline


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus, model = root / "corpus", root / "model"
    assert main(["synth", "--out", str(corpus), *sets(*SMALL)]) == 0
    assert main(["featurize", "--corpus", str(corpus), *sets(*SMALL)]) == 0
    assert main(["train", "--corpus", str(corpus), "--machine-type", "synth", "--out", str(model),
                 *sets(*SMALL)]) == 0
    return root


def test_train_outputs(trained):
    model = trained / "model"
    for name in ("model.asdp", "model.json", "train_log.csv", "config.txt"):
        assert (model / name).exists(), name
    with open(model / "train_log.csv") as fh:
        assert [r["mode"] for r in csv.DictReader(fh)] == ["recon-only", "joint", "recon-only"]
    _, _, vocab = pipeline.load_model(model / "model.asdp")
    assert vocab == {"id_00": 0, "id_01": 1}


def score(trained, name, *extra):
    out = trained / name
    rc = main(["score", "--checkpoint", str(trained / "model" / "model.asdp"), "--corpus", str(trained / "corpus"),
               "--machine-type", "synth", "--out", str(out), *sets(*SMALL, *extra)])
    assert rc == 0
    return read_scores(out)


def test_score_endpoints(trained):
    mean_like = score(trained, "mean.csv", "r=1", "beta=0")
    max_like = score(trained, "max.csv", "r=0", "beta=0")
    assert len(mean_like) == 8
    for a, b in zip(mean_like, max_like):
        assert a.score_weighted == pytest.approx(a.score_mean, rel=1e-12)
        assert b.score_weighted == b.score_max
        assert a.I == b.I == 120  # (16000 - 256) // 128 + 1 = 124 frames, minus 4


def test_score_weighting(trained):
    recs = score(trained, "w.csv", "r=0.5", "beta=0.25")
    for r in recs:
        assert r.score_weighted == pytest.approx(0.75 * r.score_gwrp + 0.25 * r.loss_c, rel=1e-12)
        assert r.score_max >= r.score_gwrp >= r.score_mean * (1 - 1e-12)


def test_score_is_deterministic(trained):
    score(trained, "d1.csv")
    score(trained, "d2.csv")
    assert (trained / "d1.csv").read_bytes() == (trained / "d2.csv").read_bytes()


def test_eval_outputs(trained):
    score(trained, "e.csv")
    out = trained / "eval"
    assert main(["eval", "--scores", str(trained / "e.csv"), "--out", str(out), *sets(*SMALL)]) == 0
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    metrics = {(r["machine_id"], r["metric"]): float(r["value"]) for r in rows}
    assert set(metrics) == {("id_00", "AUC"), ("id_00", "pAUC"), ("id_01", "AUC"), ("id_01", "pAUC"),
                            ("ALL", "AUC"), ("ALL", "pAUC"), ("ALL", "mAUC")}
    assert metrics[("ALL", "mAUC")] == min(metrics[("id_00", "AUC")], metrics[("id_01", "AUC")])
    assert all(math.isfinite(v) for v in metrics.values())
    assert (out / "roc_synth.csv").exists() and (out / "histogram_synth.csv").exists()
    pytest.importorskip("matplotlib")
    assert (out / "roc_synth.png").exists()


def test_eval_bad_column(trained):
    score(trained, "c.csv")
    assert main(["eval", "--scores", str(trained / "c.csv"), "--out", str(trained / "ec"),
                 "--no-plots", "--set", "score_column=nope"]) == 2


def test_featurize_reuses_cache(trained, capsys):
    assert main(["featurize", "--corpus", str(trained / "corpus"), *sets(*SMALL)]) == 0
    assert "0 computed" in capsys.readouterr().out


def test_unknown_id_at_score_time(trained, tmp_path):
    corpus = trained / "corpus"
    extra = tmp_path / "c2" / "synth" / "test"
    extra.mkdir(parents=True)
    src = next((corpus / "synth" / "test").glob("normal_id_00_*.wav"))
    (extra / "normal_id_07_00000000.wav").write_bytes(src.read_bytes())
    rc = main(["score", "--checkpoint", str(trained / "model" / "model.asdp"), "--corpus", str(tmp_path / "c2"),
               "--machine-type", "synth", "--out", str(tmp_path / "s.csv"), *sets(*SMALL)])
    assert rc == 2


def test_seed_flag_sets_both_seeds():
    import argparse

    from transae_asd.cli import resolve_config

    args = argparse.Namespace(config=None, overrides=[], seed=9)
    cfg = resolve_config(args)
    assert cfg.seed == 9 and cfg.synth.seed == 9
    assert np.isinf(cfg.theta)
