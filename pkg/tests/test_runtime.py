import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from celestine import runtime as rt
from celestine.engine import BatchNormState, ShapeError
from celestine.metrics import ConfusionMatrix
from celestine.netspec import LayerSpec, NetSpec, init_params, tiny_spec

SMALL = NetSpec((1, 8, 12), (
    LayerSpec("conv", 3, 1, 3), LayerSpec("relu"), LayerSpec("batchnorm"),
    LayerSpec("maxpool", 2, 2), LayerSpec("flatten"), LayerSpec("linear", units=5),
    LayerSpec("relu"), LayerSpec("linear", units=2), LayerSpec("softmax"),
))


def _data(n, spec=SMALL, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n,) + spec.input_shape).astype(np.float32)
    y = np.arange(n) % 2
    return x, y


def _snapshot(states):
    return [p.copy() for s in states if s is not None for p in rt._tensors(s)]


def test_forward_rows_sum_to_one():
    states = init_params(SMALL, 1)
    x, _ = _data(6)
    p = rt.forward_pass(states, SMALL, x)
    assert p.shape == (6, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_array_equal(p, rt.forward_pass(states, SMALL, x))


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        rt.forward_pass(init_params(SMALL, 1), SMALL, np.zeros((1, 1, 9, 12), np.float32))


def test_forward_requires_running_stats():
    states = init_params(SMALL, 1)
    bn = states[2]
    bn.running_mean = None
    with pytest.raises(Exception, match="running"):
        rt.forward_pass(states, SMALL, _data(1)[0])


def test_forward_does_not_mutate_input():
    states = init_params(SMALL, 1)
    x, _ = _data(2)
    before = x.copy()
    rt.forward_pass(states, SMALL, x)
    np.testing.assert_array_equal(x, before)


def test_log_header_echoes_config():
    cfg = rt.TrainConfig(batch_size=4, lr=1e-4, epochs=20)
    x, y = _data(5)
    log = rt.train(SMALL, init_params(SMALL, 0), x, y, rt.TrainConfig(batch_size=4, lr=1e-4, epochs=2))
    text = log.to_text().splitlines()
    assert "batch_size=4" in text[0] and "lr=0.0001" in text[0] and "epochs=2" in text[0]
    assert text[1] == "epoch,loss,train_acc"
    assert len(text) == 4
    assert (cfg.batch_size, cfg.lr, cfg.epochs) == (4, 1e-4, 20)
    assert rt.TrainConfig() == cfg


def test_zero_lr_leaves_parameters():
    states = init_params(SMALL, 0)
    trainable = [p.copy() for s in states if s is not None for p in s.params()]
    x, y = _data(6)
    rt.train(SMALL, states, x, y, rt.TrainConfig(batch_size=4, lr=0.0, epochs=1))
    after = [p for s in states if s is not None for p in s.params()]
    for a, b in zip(trainable, after):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic():
    x, y = _data(7)
    runs = []
    for _ in range(2):
        states = init_params(SMALL, 3)
        log = rt.train(SMALL, states, x, y, rt.TrainConfig(batch_size=3, lr=1e-2, epochs=3, seed=9))
        runs.append((_snapshot(states), [e.loss for e in log.epochs]))
    for a, b in zip(runs[0][0], runs[1][0]):
        np.testing.assert_array_equal(a, b)
    assert runs[0][1] == runs[1][1]


def test_training_reduces_loss_and_stays_finite():
    x, y = _data(8)
    x[y == 1] += 0.5
    states = init_params(SMALL, 0)
    log = rt.train(SMALL, states, x, y, rt.TrainConfig(batch_size=4, lr=5e-2, epochs=30))
    losses = [e.loss for e in log.epochs]
    assert all(np.isfinite(losses))
    assert losses[-1] < losses[0]


def test_short_last_batch_is_used():
    seen = []
    x, y = _data(5)
    orig = rt.forward_logits

    def spy(states, spec, xb, keep_cache=False):
        if keep_cache:
            seen.append(len(xb))
        return orig(states, spec, xb, keep_cache)

    rt.forward_logits = spy
    try:
        rt.train(SMALL, init_params(SMALL, 0), x, y, rt.TrainConfig(batch_size=2, lr=1e-3, epochs=1))
    finally:
        rt.forward_logits = orig
    assert seen == [2, 2, 1]


def test_non_finite_loss_aborts():
    states = init_params(SMALL, 0)
    x, y = _data(4)
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(rt.TrainingError, match="epoch 1"):
        rt.train(SMALL, states, x, y, rt.TrainConfig(batch_size=4, lr=1e-3, epochs=1, shuffle=False))


def test_train_input_errors():
    states = init_params(SMALL, 0)
    with pytest.raises(ValueError):
        rt.train(SMALL, states, np.zeros((0, 1, 8, 12), np.float32), np.zeros(0), rt.TrainConfig())
    with pytest.raises(ValueError):
        rt.train(SMALL, states, *_data(2)[:1], np.array([0, 2]), rt.TrainConfig())
    with pytest.raises(ShapeError):
        rt.train(SMALL, states, np.zeros((2, 1, 9, 12), np.float32), np.array([0, 1]), rt.TrainConfig())
    with pytest.raises(ValueError):
        rt.TrainConfig(batch_size=0)


def test_always_galaxy_classifier():
    states = init_params(SMALL, 0)
    last = states[7]
    last.weights[...] = 0
    last.bias[...] = [1.0, 0.0]
    labels = np.array([0] * 73 + [1] * 43)
    x = np.random.default_rng(0).uniform(0, 1, (116,) + SMALL.input_shape).astype(np.float32)
    ev = rt.evaluate(states, SMALL, x, labels, batch_size=16)
    assert ev.confusion == ConfusionMatrix(tp=73, fp=43, fn=0, tn=0)


def test_evaluate_bookkeeping():
    states = init_params(SMALL, 4)
    x, y = _data(11, seed=2)
    ev = rt.evaluate(states, SMALL, x, y, batch_size=4)
    assert ev.confusion.total == 11
    assert ev.predictions.shape == (11,)


def test_ties_go_to_galaxy():
    assert list(rt.predict_from_scores(np.array([[0.5, 0.5], [0.2, 0.8]]))) == [0, 1]


# ---------------------------------------------------------------- checkpoints


def _randomize(states, seed):
    rng = np.random.default_rng(seed)
    for s in states:
        if s is None:
            continue
        for t in rt._tensors(s):
            t[...] = rng.standard_normal(t.shape).astype(t.dtype)
        if isinstance(s, BatchNormState):
            s.running_var[...] = np.abs(s.running_var) + 0.1


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_checkpoint_round_trip(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("ck") / "m.ckpt"
    states = init_params(SMALL, 0)
    _randomize(states, seed)
    rt.save_checkpoint(states, SMALL, path)
    back = rt.load_checkpoint(path, SMALL)
    for a, b in zip(_snapshot(states), _snapshot(back)):
        assert a.dtype == b.dtype == np.float32
        np.testing.assert_array_equal(a, b)


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    rt.save_checkpoint(init_params(SMALL, 0), SMALL, path)
    raw = path.read_bytes()
    assert raw[:4] == b"HRCN"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[40:44], "little") == 0  # first layer index
    assert int.from_bytes(raw[44:48], "little") == 2  # conv: weights, bias
    assert int.from_bytes(raw[48:52], "little") == 4  # weight rank
    n_floats = sum(p.size for s in init_params(SMALL, 0) if s is not None for p in rt._tensors(s))
    n_tensors = sum(len(rt._tensors(s)) for s in init_params(SMALL, 0) if s is not None)
    n_layers = sum(s is not None for s in init_params(SMALL, 0))
    ranks = sum(t.ndim for s in init_params(SMALL, 0) if s is not None for t in rt._tensors(s))
    assert len(raw) == 40 + 8 * n_layers + 4 * (n_tensors + ranks) + 4 * n_floats


def test_checkpoint_spec_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    rt.save_checkpoint(init_params(SMALL, 0), SMALL, path)
    other = SMALL.with_input(1, 10, 12)
    with pytest.raises(rt.CheckpointError, match="different network spec"):
        rt.load_checkpoint(path, other)


def test_checkpoint_bad_magic_and_version(tmp_path):
    path = tmp_path / "m.ckpt"
    rt.save_checkpoint(init_params(SMALL, 0), SMALL, path)
    raw = bytearray(path.read_bytes())
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(rt.CheckpointError, match="magic"):
        rt.load_checkpoint(path, SMALL)
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(rt.CheckpointError, match="version"):
        rt.load_checkpoint(path, SMALL)


def test_checkpoint_truncated_names_layer(tmp_path):
    path = tmp_path / "m.ckpt"
    rt.save_checkpoint(init_params(SMALL, 0), SMALL, path)
    raw = path.read_bytes()
    # the first linear layer (index 5) holds 5 x 60 weights; cut inside them
    marker = (5).to_bytes(4, "little") + (2).to_bytes(4, "little")
    start = raw.index(marker, 40)
    path.write_bytes(raw[:start + 8 + 12 + 40])
    with pytest.raises(rt.CheckpointError, match=r"layer 5 \(linear\)"):
        rt.load_checkpoint(path, SMALL)


def test_checkpoint_missing_trailing_layer(tmp_path):
    path = tmp_path / "m.ckpt"
    rt.save_checkpoint(init_params(SMALL, 0), SMALL, path)
    raw = path.read_bytes()
    start = raw.index((7).to_bytes(4, "little") + (2).to_bytes(4, "little"), 40)
    path.write_bytes(raw[:start])
    with pytest.raises(rt.CheckpointError, match=r"layer 7 \(linear\)"):
        rt.load_checkpoint(path, SMALL)


def test_tiny_checkpoint_predictions_survive(tmp_path):
    spec = tiny_spec()
    states = init_params(spec, 2)
    x = np.random.default_rng(0).uniform(0, 1, (2,) + spec.input_shape).astype(np.float32)
    rt.save_checkpoint(states, spec, tmp_path / "t.ckpt")
    back = rt.load_checkpoint(tmp_path / "t.ckpt", spec)
    np.testing.assert_array_equal(rt.forward_pass(states, spec, x), rt.forward_pass(back, spec, x))


# ---------------------------------------------------------------- timing


def test_sleep_oracle():
    rep = rt.bench_timing(lambda s: time.sleep(0.005) or s, lambda s: time.sleep(0.010),
                          samples=list(range(10)), repetitions=2, warmup=1)
    assert rep.preprocessing_ms_per_sample == pytest.approx(5, rel=0.2)
    assert rep.classification_ms_per_sample == pytest.approx(10, rel=0.2)
    assert rep.total_ms_per_sample == pytest.approx(15, rel=0.2)
    assert rep.total_ms_per_sample == rep.preprocessing_ms_per_sample + rep.classification_ms_per_sample


def test_warmup_excluded():
    calls = []
    rt.bench_timing(lambda s: calls.append(s) or s, lambda s: None, samples=[1, 2], repetitions=3, warmup=1)
    assert len(calls) == 7


def test_timing_render_labels_reference():
    rep = rt.TimingReport(1.0, 2.0, 3, 1)
    text = rep.render()
    assert "Preprocessing" in text and "Classification" in text and "Total" in text
    assert "60.6" in text and "hardware-dependent" in text
    assert rep.as_dict()["reference"]["preprocessing_ms_lcid"] == 60.6


def test_bench_errors():
    with pytest.raises(ValueError):
        rt.bench_timing(lambda s: s, lambda s: s, samples=[])
    with pytest.raises(ValueError):
        rt.bench_timing(lambda s: s, lambda s: s, samples=[1], repetitions=0)
