import numpy as np
import pytest

from cpcx import tensor as T
from cpcx.gradsuite import recurrence_checks
from cpcx.recurrent import RecurrenceConfig, context, gru_step, init_params, lstm_step


def params_for(kind, c=3, h=4, seed=0, dtype=np.float64):
    cfg = RecurrenceConfig(kind, hidden=h)
    return cfg, init_params(cfg, c, np.random.default_rng(seed), dtype)


def test_lstm_zero_everything_gives_zero():
    _, p = params_for("lstm")
    for v in p.values():
        v.data[...] = 0
    h, c = lstm_step(T.Node(np.zeros((1, 3))), T.Node(np.zeros((1, 4))), T.Node(np.zeros((1, 4))), p)
    np.testing.assert_array_equal(h.data, 0)
    np.testing.assert_array_equal(c.data, 0)


def test_gru_saturated_update_gate_copies_state():
    _, p = params_for("gru")
    p["rnn.b_x"].data[4:8] = 50.0
    h = T.Node(np.random.default_rng(1).uniform(-1, 1, (2, 4)))
    out = gru_step(T.Node(np.random.default_rng(2).normal(size=(2, 3))), h, p)
    np.testing.assert_allclose(out.data, h.data, atol=1e-12)


def test_single_step_context_matches_step_function():
    for kind in ("lstm", "gru"):
        cfg, p = params_for(kind)
        x = np.random.default_rng(3).normal(size=(1, 3))
        z = context(T.Node(x), cfg, p).data
        zero = T.Node(np.zeros((1, 4)))
        step = lstm_step(T.Node(x), zero, zero, p)[0] if kind == "lstm" else gru_step(T.Node(x), zero, p)
        np.testing.assert_array_equal(z, step.data)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_causality(kind):
    cfg, p = params_for(kind, c=5, h=6)
    rng = np.random.default_rng(4)
    frames = rng.normal(size=(20, 5))
    base = context(T.Node(frames), cfg, p).data
    moved = frames.copy()
    moved[9:] += rng.normal(size=(11, 5))
    out = context(T.Node(moved), cfg, p).data
    np.testing.assert_array_equal(out[:9], base[:9])
    assert not np.array_equal(out[9], base[9])


def test_lstm_output_bounded():
    cfg, p = params_for("lstm", c=5, h=6)
    z = context(T.Node(np.random.default_rng(5).normal(size=(30, 5)) * 20), cfg, p).data
    assert np.all(np.abs(z) < 1)


def test_batch_matches_single_and_is_deterministic():
    cfg, p = params_for("lstm", c=5, h=6, dtype=np.float32)
    x = np.random.default_rng(6).normal(size=(3, 11, 5)).astype(np.float32)
    batch = context(T.Node(x), cfg, p).data
    np.testing.assert_array_equal(batch, context(T.Node(x), cfg, p).data)
    for i in range(3):
        np.testing.assert_allclose(context(T.Node(x[i]), cfg, p).data, batch[i], rtol=0, atol=1e-6)


def test_hidden_mismatch_rejected():
    _, p = params_for("lstm", h=4)
    with pytest.raises(T.ShapeError):
        context(T.Node(np.zeros((3, 3))), RecurrenceConfig("lstm", hidden=5), p)


def test_init_scheme():
    cfg = RecurrenceConfig("lstm", hidden=6)
    p = init_params(cfg, 5, np.random.default_rng(0), np.float64)
    w_h = p["rnn.w_h"].data
    for g in range(4):
        block = w_h[:, 6 * g : 6 * (g + 1)]
        np.testing.assert_allclose(block.T @ block, np.eye(6), atol=1e-12)
    assert np.abs(p["rnn.w_x"].data).max() <= 1 / np.sqrt(5)
    np.testing.assert_array_equal(p["rnn.b"].data[6:12], cfg.forget_bias)
    p1 = init_params(RecurrenceConfig("lstm", hidden=6, forget_bias=1.0), 5, np.random.default_rng(0))
    np.testing.assert_array_equal(p1["rnn.b"].data[6:12], 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        RecurrenceConfig("rnn")
    with pytest.raises(ValueError):
        RecurrenceConfig(layers=2)


def test_recurrence_gradients():
    results = recurrence_checks(np.random.default_rng(0))
    assert {r.name for r in results} == {"lstm_step", "gru_step", "lstm context sum(z)", "gru context sum(z)"}
    for r in results:
        assert r.passed, r.line()
