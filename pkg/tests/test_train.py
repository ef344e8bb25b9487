import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcl.contrastive import LossConfig
from mpcl.encoders import EncoderConfig, ModalityId, MultimodalModel, ProjectionConfig
from mpcl.exceptions import ConfigError, DataError
from mpcl.numcore import ParamStore, make_rng
from mpcl.train import (
    OptimizerState,
    PatienceMonitor,
    TrainConfig,
    batch_loss,
    load_checkpoint,
    lr_at,
    pretrain,
    read_log,
    save_checkpoint,
    sgd_step,
    validation_split,
    should_stop,
    write_log,
)


def _scalar_store(w, g):
    store = ParamStore()
    store.add("w", np.array([[w]]))
    store.accumulate("w", np.array([[g]]))
    return store


def test_sgd_single_step_arithmetic():
    store = _scalar_store(1.0, 1.0)
    state = OptimizerState.for_store(store)
    sgd_step(store, state, lr=0.001, momentum=0.9, weight_decay=0.001)
    # g' = 1 + 0.001*1; v = 0.9*0 + g'; w = 1 - 0.001*v
    assert state.velocity["w"][0, 0] == pytest.approx(1.001, abs=1e-15)
    assert store.value("w")[0, 0] == pytest.approx(0.998999, abs=1e-15)


def test_sgd_without_momentum_is_gradient_descent():
    r = make_rng(0)
    w, g = r.standard_normal((3, 2)), r.standard_normal((3, 2))
    store = ParamStore()
    store.add("w", w.copy())
    store.accumulate("w", g)
    sgd_step(store, OptimizerState.for_store(store), lr=0.1, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(store.value("w"), w - 0.1 * g, atol=1e-15)


def test_sgd_coasts_on_velocity():
    store = _scalar_store(2.0, 0.0)
    state = OptimizerState.for_store(store)
    state.velocity["w"][:] = 0.5
    for _ in range(2):
        sgd_step(store, state, lr=0.1, momentum=0.9, weight_decay=0.0)
    # w - lr*(mu*v) - lr*(mu^2*v) = w - lr*v*mu*(1+mu)
    assert store.value("w")[0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 0.9 * 1.9, abs=1e-15)


def test_sgd_zero_gradient_without_decay_is_a_no_op():
    store = _scalar_store(3.0, 0.0)
    before = store.checksum()
    sgd_step(store, OptimizerState.for_store(store), lr=0.5, momentum=0.9, weight_decay=0.0)
    assert store.checksum() == before


def test_lr_schedule_values():
    cfg = TrainConfig(lr=0.001, lr_decay_every=5)
    assert lr_at(0, cfg) == 0.001
    assert lr_at(5, cfg) == pytest.approx(0.0009, abs=1e-18)
    assert lr_at(15, cfg) == pytest.approx(0.000729, abs=1e-18)
    assert lr_at(4, cfg) == 0.001


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.floats(0.1, 1.0), st.integers(0, 1000))
def test_lr_is_non_increasing(every, decay, epoch):
    cfg = TrainConfig(lr=0.01, lr_decay=decay, lr_decay_every=every)
    assert lr_at(epoch + 1, cfg) <= lr_at(epoch, cfg)


def test_patience_monotone_improvement_never_stops():
    m = PatienceMonitor(patience=3)
    for v in np.linspace(1.0, 0.0, 50):
        stop, m = should_stop(m, v)
        assert not stop


def test_patience_constant_stops_after_exact_count():
    m = PatienceMonitor(patience=3)
    results = []
    for _ in range(5):
        stop, m = should_stop(m, 1.0)
        results.append(stop)
    # the first value sets the baseline; then three non-improving updates
    assert results == [False, False, False, True, True]


def test_patience_reset_on_step_99_of_100():
    m = PatienceMonitor(patience=100)
    stop, m = should_stop(m, 1.0)
    script = [1.0 + 0.01 * ((-1) ** i) for i in range(98)] + [0.5] + [0.9] * 99
    stops = []
    for v in script:
        stop, m = should_stop(m, v)
        stops.append(stop)
    assert not any(stops)
    assert m.since == 99


def test_patience_tolerance():
    m = PatienceMonitor(patience=1, tolerance=1e-6)
    should_stop(m, 1.0)
    stop, m = should_stop(m, 1.0 - 5e-7)
    assert stop and not m.improved
    m2 = PatienceMonitor(patience=5, mode="max")
    should_stop(m2, 0.5)
    _, m2 = should_stop(m2, 0.6)
    assert m2.improved


# ---------------------------------------------------------------------------
# pretraining


ENC = EncoderConfig("mlp", input_dim=6, embed_dim=16, hidden_dim=16)


def _encoders(names=("text", "audio", "faces")):
    return {n: ENC for n in names}


def _cfg(**kw):
    base = dict(batch_size=8, lr=0.01, max_epochs=3, patience=3, seed=5, window_len=4)
    base.update(kw)
    return TrainConfig(**base)


PROJ = ProjectionConfig(16, 16, 8)


def test_zero_lr_keeps_parameters(tiny_dataset):
    res = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(lr=0.0), PROJ, timing=False)
    fresh = MultimodalModel.build([ModalityId(i, n) for i, n in enumerate(_encoders())], _encoders(), PROJ,
                                  make_rng(5, "init"))
    assert res.model.store.checksum() == fresh.store.checksum()


def test_same_seed_same_log_and_parameters(tiny_dataset):
    a = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(), PROJ, timing=False)
    b = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(), PROJ, timing=False)
    assert a.log == b.log
    assert a.model.store.checksum() == b.model.store.checksum()
    c = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(seed=6), PROJ, timing=False)
    assert c.model.store.checksum() != a.model.store.checksum()


def test_labels_never_influence_pretraining(tiny_dataset):
    a = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(), PROJ, timing=False)
    b = pretrain(tiny_dataset.strip_labels(), _encoders(), LossConfig(), _cfg(), PROJ, timing=False)
    assert a.model.store.checksum() == b.model.store.checksum()
    assert a.log == b.log


def test_log_records_and_best_state(tiny_dataset):
    res = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(max_epochs=4, patience=4), PROJ)
    assert len(res.log) == res.epochs_run == 4
    assert set(res.log[0]) == {"epoch", "lr", "train_loss", "val_loss", "seconds"}
    vals = [r["val_loss"] for r in res.log]
    assert res.best_epoch == int(np.argmin(vals))


def test_loss_decreases_on_a_fixed_batch(tiny_dataset):
    samples = tiny_dataset.load_samples()[:8]
    names = list(_encoders())
    model = MultimodalModel.build(names, _encoders(), PROJ, make_rng(0))
    state = OptimizerState.for_store(model.store)
    streams = {n: [s.streams[n] for s in samples] for n in names}
    losses = []
    for _ in range(10):
        tape, loss = batch_loss(model, streams, LossConfig())
        losses.append(float(loss.value))
        tape.backward(loss)
        sgd_step(model.store, state, 0.01, 0.9, 0.0)
        model.store.zero_grad()
    assert losses[-1] < losses[0]
    assert np.mean(np.diff(losses) < 0) >= 0.8


def test_pretrain_errors(tiny_dataset):
    with pytest.raises(ConfigError):
        pretrain(tiny_dataset, {"text": ENC}, LossConfig(), _cfg(), PROJ)
    with pytest.raises(DataError):
        pretrain(tiny_dataset, _encoders(("text", "missing")), LossConfig(), _cfg(), PROJ)
    with pytest.raises(ConfigError):
        TrainConfig(patience=5, max_epochs=2)


def test_checkpoint_and_log_round_trip(tiny_dataset, tmp_path):
    res = pretrain(tiny_dataset, _encoders(), LossConfig(), _cfg(), PROJ, timing=False)
    save_checkpoint(tmp_path / "c.mpck", res.model, res.train_config, res.loss_config, {"note": 1})
    model, header = load_checkpoint(tmp_path / "c.mpck")
    assert model.store.checksum() == res.model.store.checksum()
    assert header["seed"] == 5 and header["extra"] == {"note": 1}
    assert (tmp_path / "c.mpck").read_bytes()[:4] == b"MPCK"
    write_log(res.log, tmp_path / "log.jsonl")
    assert read_log(tmp_path / "log.jsonl") == res.log
    (tmp_path / "bad.mpck").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.mpck")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nothing.mpck")


def test_short_final_batch_is_dropped(tiny_dataset):
    samples = tiny_dataset.load_samples()[:9]
    res = pretrain(samples, _encoders(), LossConfig(), _cfg(batch_size=8, val_fraction=0.0), PROJ, timing=False)
    assert all(np.isfinite(r["train_loss"]) for r in res.log)
    assert all(r["val_loss"] is None for r in res.log)


def test_group_validation_split_holds_out_whole_groups(tiny_dataset):
    samples = tiny_dataset.load_samples()
    train, val = validation_split(samples, 0.2, seed=3, by_group=True)
    assert val and sorted(train + val) == list(range(len(samples)))
    held = {samples[i].group_id for i in val}
    assert held.isdisjoint({samples[i].group_id for i in train})


def test_plain_validation_split_size_and_determinism():
    samples = list(range(50))
    train, val = validation_split(samples, 0.1, seed=1)
    assert len(val) == 5 and len(train) == 45
    assert validation_split(samples, 0.1, seed=1) == (train, val)


def test_tiny_set_skips_validation():
    assert validation_split([0, 1, 2], 0.1, seed=0) == ([0, 1, 2], [])
