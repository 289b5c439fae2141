import numpy as np
import pytest

from cpcx.data import DataError, Utterance, load_checkpoint, synth_dataset
from cpcx.data import deserialize_checkpoint as deserialize, serialize_checkpoint as serialize
from cpcx.encoder import EncoderConfig
from cpcx.model import ModelConfig
from cpcx.predictor import PredictorConfig
from cpcx.recurrent import RecurrenceConfig
from cpcx.trainer import (
    AdamState,
    NumericalError,
    TrainConfig,
    adam_step,
    clip_global_norm,
    frame_cross_entropy,
    model_from_checkpoint,
    pretrain,
    supervised_pretrain,
    train_config_from_checkpoint,
)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_dataset(n_speakers=2, utterances_per_speaker=3, utterance_seconds=1.0, seed=5)


def tiny_model(kind="linear", K=2):
    return ModelConfig(EncoderConfig(channels=8), RecurrenceConfig("lstm", hidden=8), PredictorConfig(kind=kind, K=K, heads=2))


def tiny_train(**kw):
    base = dict(window_samples=2560, batch_size=2, n_negatives=4, max_steps=6, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_adam_single_step_closed_form():
    p = {"w": np.array([0.5, -1.0])}
    g = {"w": np.ones(2)}
    state = AdamState()
    lr, eps = 0.01, 1e-8
    adam_step(p, g, state, lr, eps=eps)
    # bias-corrected moments are exactly g and g^2 after the first step
    np.testing.assert_allclose(p["w"], np.array([0.5, -1.0]) - lr / (1 + eps), rtol=0, atol=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    adam_step(p, {"w": np.array([1.0, -1.0])}, state, 0.1)
    before = p["w"].copy()
    m, v = state.m["w"].copy(), state.v["w"].copy()
    state.m["w"][...] = 0  # with m = 0 the update vanishes exactly
    adam_step(p, {"w": np.zeros(2)}, state, 0.1)
    np.testing.assert_array_equal(p["w"], before)
    np.testing.assert_allclose(state.v["w"], 0.999 * v)
    assert np.all(np.abs(m) > 0)


def test_adam_constant_gradient_step_is_lr():
    p = {"w": np.zeros(3)}
    state = AdamState()
    g = np.array([3.0, -0.01, 200.0])
    for _ in range(500):
        prev = p["w"].copy()
        adam_step(p, {"w": g.copy()}, state, 1e-3)
    np.testing.assert_allclose(p["w"] - prev, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_rejects_non_finite_gradient():
    p = {"w": np.zeros(2)}
    with pytest.raises(NumericalError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], 0)


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.3])}
    clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(window_samples=1000)
    with pytest.raises(ValueError):
        TrainConfig(mode="other")
    assert TrainConfig().window_frames == 128


def test_zero_learning_rate_is_a_null_update(tiny_data):
    res = pretrain(tiny_data.utterances, tiny_model(), tiny_train(lr=0.0, max_steps=3))
    init = pretrain(tiny_data.utterances, tiny_model(), tiny_train(max_steps=0))
    for k, v in init.model.arrays().items():
        np.testing.assert_array_equal(res.model.arrays()[k], v)


def test_runs_are_bit_identical(tiny_data, tmp_path):
    a = pretrain(tiny_data.utterances, tiny_model("transformer"), tiny_train(), trace_path=tmp_path / "a.tsv")
    b = pretrain(tiny_data.utterances, tiny_model("transformer"), tiny_train(), trace_path=tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert serialize(a.checkpoint) == serialize(b.checkpoint)


def test_trace_format(tiny_data, tmp_path):
    pretrain(tiny_data.utterances, tiny_model(K=3), tiny_train(max_steps=2), trace_path=tmp_path / "t.tsv")
    rows = [line.split("\t") for line in (tmp_path / "t.tsv").read_text().splitlines()]
    assert [r[0] for r in rows] == ["1", "2"]
    assert all(len(r) == 2 + 3 for r in rows)
    assert all(0 <= float(x) <= 1 for r in rows for x in r[2:])


def test_resume_matches_uninterrupted_run(tiny_data, tmp_path):
    full = pretrain(tiny_data.utterances, tiny_model("transformer"), tiny_train(max_steps=5))
    part = pretrain(tiny_data.utterances, tiny_model("transformer"), tiny_train(max_steps=3), checkpoint_path=tmp_path / "p.ckpt")
    ckpt = load_checkpoint(tmp_path / "p.ckpt")
    assert train_config_from_checkpoint(ckpt) == tiny_train(max_steps=3)
    rest = pretrain(tiny_data.utterances, tiny_model("transformer"), tiny_train(max_steps=5), resume=ckpt)
    assert [r.loss for r in part.trace + rest.trace] == [r.loss for r in full.trace]
    assert serialize(rest.checkpoint) == serialize(full.checkpoint)


def test_checkpoint_rebuilds_model(tiny_data):
    res = pretrain(tiny_data.utterances, tiny_model(), tiny_train(max_steps=1))
    model = model_from_checkpoint(deserialize(serialize(res.checkpoint)))
    assert model.config == res.model.config
    for k, v in res.model.arrays().items():
        np.testing.assert_array_equal(model.arrays()[k], v)


def test_short_utterances_rejected(tiny_data):
    with pytest.raises(DataError, match="64000"):
        pretrain(tiny_data.utterances, tiny_model(), tiny_train(window_samples=160 * 400))


def test_horizon_must_fit_window(tiny_data):
    with pytest.raises(ValueError):
        pretrain(tiny_data.utterances, tiny_model(K=16), tiny_train())


def test_non_finite_loss_dumps_batch(tmp_path):
    bad = [Utterance("bad", np.full(3200, np.nan, np.float32), "s", ["p0"])]
    with pytest.raises(NumericalError, match="dumped"):
        pretrain(bad, tiny_model(), tiny_train(batch_size=1), dump_dir=tmp_path)
    dump = np.load(tmp_path / "nonfinite_step1.npz")
    assert dump["batch"].shape == (1, 2560)
    assert list(dump["utterances"]) == ["bad"]


def test_loss_goes_down(tiny_data):
    res = pretrain(tiny_data.utterances, tiny_model(), tiny_train(max_steps=300, lr=3e-3))
    losses = [r.loss for r in res.trace]
    assert np.mean(losses[-100:]) < np.mean(losses[:100])


def test_frame_cross_entropy_value():
    from cpcx import tensor as T

    logits = T.Node(np.log(np.array([[[0.25, 0.75], [0.5, 0.5]]])))
    loss = frame_cross_entropy(logits, np.array([[1, 0]]))
    assert float(loss.data) == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2, abs=1e-12)


def test_supervised_single_class_converges():
    rng = np.random.default_rng(0)
    utts = [Utterance(f"u{i}", rng.uniform(-1, 1, 3200).astype(np.float32), "s", ["a"], ["a"] * 20) for i in range(2)]
    res = supervised_pretrain(utts, ["a"], tiny_model(), tiny_train(max_steps=60, lr=1e-2))
    assert res.trace[-1].loss < 1e-6
    assert res.model.config.n_classes == 1
    assert res.checkpoint.config["meta.inventory"] == "a"


def test_supervised_label_count_mismatch_names_utterance():
    with pytest.raises(DataError, match="short_labels"):
        utts = [Utterance("short_labels", np.zeros(3200, np.float32), "s", ["a"], ["a"] * 19)]
        supervised_pretrain(utts, ["a"], tiny_model(), tiny_train())
    utts = [Utterance("odd_label", np.zeros(3200, np.float32), "s", ["a"], ["b"] * 20)]
    with pytest.raises(DataError, match="odd_label"):
        supervised_pretrain(utts, ["a"], tiny_model(), tiny_train())


def test_supervised_freezes_predictor(tiny_data):
    res = supervised_pretrain(tiny_data.utterances, tiny_data.inventory, tiny_model(), tiny_train(max_steps=3))
    init = supervised_pretrain(tiny_data.utterances, tiny_data.inventory, tiny_model(), tiny_train(max_steps=0))
    after, before = res.model.arrays(), init.model.arrays()
    for k in before:
        same = np.array_equal(after[k], before[k])
        assert same == k.startswith("predictor."), k
