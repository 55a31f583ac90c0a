import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transae_asd import scorer
from transae_asd.dsp import FeatureClip
from transae_asd.model import IDCTransAE, ModelConfig
from transae_asd.trainer import Normalizer

errors = arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1e4, allow_nan=False))
R_GRID = np.round(np.arange(21) * 0.05, 2)


def test_gwrp_hand_value():
    assert scorer.score_gwrp([3, 1, 2], 0.5) == pytest.approx(4.25 / 1.75, abs=1e-12)


def test_gwrp_endpoints_hand():
    e = [3.0, 1.0, 2.0]
    assert scorer.score_gwrp(e, 0.0) == 3.0
    assert scorer.score_gwrp(e, 1.0) == pytest.approx(2.0, abs=1e-15)


def test_gwrp_single_element():
    for r in (0.0, 0.3, 1.0):
        assert scorer.score_gwrp([7.5], r) == 7.5


def test_gwrp_constant_sequence():
    assert scorer.score_gwrp([2.0] * 50, 0.37) == pytest.approx(2.0, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(e=errors)
def test_gwrp_laws(e):
    assert scorer.score_gwrp(e, 0.0) == e.max()
    assert abs(scorer.score_gwrp(e, 1.0) - e.mean()) <= 1e-12 * max(1.0, e.max())
    values = [scorer.score_gwrp(e, r) for r in R_GRID]
    slack = 1e-12 * max(1.0, e.max())
    assert all(e.min() - slack <= v <= e.max() + slack for v in values)
    assert all(b <= a + slack for a, b in zip(values, values[1:]))


@settings(max_examples=50, deadline=None)
@given(e=errors, r=st.floats(0, 1))
def test_gwrp_ignores_order(e, r):
    perm = np.random.default_rng(len(e)).permutation(e)
    assert scorer.score_gwrp(perm, r) == scorer.score_gwrp(e, r)


@pytest.mark.parametrize("r", [-0.1, 1.5])
def test_gwrp_rejects_bad_r(r):
    with pytest.raises(ValueError):
        scorer.score_gwrp([1.0], r)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        scorer.score_gwrp([], 0.5)
    with pytest.raises(ValueError):
        scorer.ErrorSequence([])


def test_weighted_score_hand_value():
    assert scorer.score_weighted(2.0, 1.3, 0.4) == pytest.approx(1.72, abs=1e-15)
    assert scorer.score_weighted(2.0, 1.3, 0.0) == 2.0
    assert scorer.score_weighted(2.0, 1.3, 1.0) == 1.3
    with pytest.raises(ValueError):
        scorer.score_weighted(2.0, 1.3, 1.2)


def test_decide_tie_is_normal():
    assert scorer.decide(1.0, 1.0) == 0
    assert scorer.decide(1.0 + 1e-12, 1.0) == 1
    assert scorer.decide(0.5, 1.0) == 0


def test_score_config_bounds():
    with pytest.raises(ValueError):
        scorer.ScoreConfig(r=2.0)
    with pytest.raises(ValueError):
        scorer.ScoreConfig(beta=-0.1)


def test_machine_defaults():
    assert scorer.default_r_beta("Slider") == (0.96, 0.80)
    assert scorer.default_r_beta("ToyConveyor") == (1.00, 0.98)
    assert scorer.default_r_beta("synth") == scorer.SYNTH_R_BETA


# ---------------------------------------------------------------- clip scoring


@pytest.fixture(scope="module")
def tiny_model():
    cfg = ModelConfig(num_ids=3, d_model=8, n_heads=2, ff_dim=16, enc_layers=1, dec_layers=1,
                      n_mels=8, phase_dim=9, classifier_hidden=6)
    return IDCTransAE(cfg, seed=5).eval()


@pytest.fixture
def clip():
    rng = np.random.default_rng(6)
    return FeatureClip(rng.normal(size=(12, 8)), rng.uniform(-3, 3, size=(12, 9)))


def test_run_clip_windows_and_errors(tiny_model, clip):
    norm = Normalizer.identity(8)
    out = scorer.run_clip(tiny_model, clip, norm, true_id=1)
    assert out.errors.e.shape == (8,)
    assert out.predicted_ids.shape == (8,)
    assert math.isfinite(out.loss_c)
    # per-window error is the mean over mel bins of the squared centre error
    x = clip.logmel[[0, 1, 3, 4]][None]
    pred, _ = tiny_model.forward(x, clip.phase[[0, 1, 3, 4]][None])
    assert out.errors.e[0] == pytest.approx(np.mean((clip.logmel[2] - pred.values[0]) ** 2), rel=1e-12)


def test_run_clip_requires_eval_mode(tiny_model, clip):
    tiny_model.train()
    try:
        with pytest.raises(RuntimeError):
            scorer.run_clip(tiny_model, clip, Normalizer.identity(8))
    finally:
        tiny_model.eval()


def test_run_clip_unknown_id(tiny_model, clip):
    with pytest.raises(KeyError):
        scorer.run_clip(tiny_model, clip, Normalizer.identity(8), true_id=3)


def test_record_endpoints(tiny_model, clip):
    out = scorer.run_clip(tiny_model, clip, Normalizer.identity(8), true_id=0)
    rec_mean = scorer.make_record(out, scorer.ScoreConfig(r=1.0, beta=0.0), "a.wav", "synth", "id_00", "normal")
    rec_max = scorer.make_record(out, scorer.ScoreConfig(r=0.0, beta=0.0), "a.wav", "synth", "id_00", "normal")
    assert rec_mean.score_weighted == pytest.approx(rec_mean.score_mean, rel=1e-12)
    assert rec_max.score_weighted == rec_max.score_max
    assert rec_mean.I == 8


def test_scores_csv_round_trip(tmp_path):
    recs = [
        scorer.ScoreRecord("x/normal_id_00_00000001.wav", "synth", "id_00", "normal", 10, 0.1, 0.9, 0.3, 1 / 3, 0.2),
        scorer.ScoreRecord("x/anomaly_id_01_00000002.wav", "synth", "id_01", "anomaly", 9, 1.1, 2.9, 1.3, 0.5, 1.2),
    ]
    scorer.write_scores(tmp_path / "s.csv", recs)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(scorer.SCORE_COLUMNS)
    assert scorer.read_scores(tmp_path / "s.csv") == recs
