import math

import numpy as np
import pytest

from unified_asr import corpus
from unified_asr.checkpoint import checkpoint_bytes
from unified_asr.errors import ConfigError, InvalidInputError, NumericalError
from unified_asr.model import ModelConfig, UnifiedModel
from unified_asr.trainer import (
    MC, SC, ItemCache, OptimizerState, TrainingBatch, TrainingConfig, build_batches, derive_sc_from_mc, train,
    train_step,
)

def _snapshot(model):
    return {n: model.params[n].copy() for n in model.params}


def _changed(model, before, partition):
    return [n for n in model.params.names(partition) if not np.array_equal(model.params[n], before[n])]


def _step(model, items, lr=1e-2):
    opt = OptimizerState(model.params.tensors, TrainingConfig(learning_rate=lr))
    before = _snapshot(model)
    train_step(model, opt, TrainingBatch(items))
    return before


@pytest.fixture(scope="module")
def desk_model_cfg():
    return ModelConfig()


def test_derive_sc_from_mc(mc_utts, sc_utts):
    d = derive_sc_from_mc(mc_utts[0])
    assert d.primary.tobytes() == mc_utts[0].primary.tobytes()
    assert not d.is_multichannel and d.utterance_id.endswith("-scderived")
    np.testing.assert_array_equal(d.labels, mc_utts[0].labels)
    with pytest.raises(InvalidInputError):
        derive_sc_from_mc(sc_utts[0])


def test_mc_batch_rejects_sc_item(sc_utts):
    with pytest.raises(InvalidInputError):
        TrainingBatch([(sc_utts[0], MC)])


def test_sc_batch_leaves_mc_fe_untouched(sc_utts, desk_model_cfg):
    model = UnifiedModel.create(desk_model_cfg, seed=0)
    before = _step(model, [(u, SC) for u in sc_utts[:3]])
    assert not _changed(model, before, "mc_fe")
    assert _changed(model, before, "sc_fe") and _changed(model, before, "backend")


def test_mc_batch_leaves_sc_fe_untouched(mc_utts, desk_model_cfg):
    model = UnifiedModel.create(desk_model_cfg, seed=0)
    before = _step(model, [(u, MC) for u in mc_utts[:3]])
    assert not _changed(model, before, "sc_fe")
    assert _changed(model, before, "mc_fe") and _changed(model, before, "backend")


@pytest.mark.parametrize("seed", range(5))
def test_mixed_batch_updates_backend(seed, sc_utts, mc_utts, desk_model_cfg):
    model = UnifiedModel.create(desk_model_cfg, seed=seed)
    before = _step(model, [(sc_utts[seed], SC), (mc_utts[seed], MC)])
    assert _changed(model, before, "backend")


def test_untouched_partition_keeps_optimizer_state(sc_utts, desk_model_cfg):
    model = UnifiedModel.create(desk_model_cfg, seed=0)
    opt = OptimizerState(model.params.tensors, TrainingConfig())
    train_step(model, opt, TrainingBatch([(sc_utts[0], SC)]))
    for n in model.params.names("mc_fe"):
        assert opt.steps[n] == 0 and not np.any(opt.m[n])


def test_stray_gradient_detected(sc_utts, desk_model_cfg, monkeypatch):
    model = UnifiedModel.create(desk_model_cfg, seed=0)
    real = model.loss_and_grads

    def leaky(items):
        loss, losses, grads = real(items)
        grads["mc_fe.bat.b_re"] = np.zeros_like(model.params["mc_fe.bat.b_re"])
        return loss, losses, grads

    monkeypatch.setattr(model, "loss_and_grads", leaky)
    with pytest.raises(RuntimeError, match="routing"):
        _step(model, [(sc_utts[0], SC)])


def test_non_finite_loss_names_item(sc_utts, desk_model_cfg, monkeypatch):
    model = UnifiedModel.create(desk_model_cfg, seed=0)
    real = model.loss_and_grads

    def broken(items):
        loss, losses, grads = real(items)
        losses[1] = float("nan")
        return loss, losses, grads

    monkeypatch.setattr(model, "loss_and_grads", broken)
    with pytest.raises(NumericalError, match=sc_utts[1].utterance_id):
        _step(model, [(sc_utts[0], SC), (sc_utts[1], SC)])


class _Stub:
    def __init__(self, uid, mc):
        self.utterance_id = uid
        self.is_multichannel = mc
        self.primary = np.zeros(1)
        self.labels = np.zeros(1, dtype=np.int64)
        self.snr_db = 0.0
        self.sample_rate = 16000
        self.auxiliary = [np.zeros(1)] * 2 if mc else []


def _stubs(n, mc):
    return [_Stub(f"{'mc' if mc else 'sc'}{i}", mc) for i in range(n)]


def test_epoch_item_count_proportional(monkeypatch):
    import unified_asr.trainer as tr

    monkeypatch.setattr(tr, "strip_auxiliary", lambda u, s="": _Stub(u.utterance_id + s, False))
    batches = build_batches(_stubs(100, False), _stubs(100, True), TrainingConfig())
    kinds = [k for b in batches for _, k in b.items]
    assert len(kinds) == 300 and kinds.count(SC) == 200 and kinds.count(MC) == 100
    ids = [u.utterance_id for b in batches for u, _ in b.items]
    assert len(set(ids)) == 300 and sum(i.endswith("-scderived") for i in ids) == 100
    assert [len(b) for b in batches] == [16] * 18 + [12]
    no_derive = build_batches(_stubs(100, False), _stubs(100, True), TrainingConfig(derive_sc_from_mc=False))
    assert sum(len(b) for b in no_derive) == 200


def test_fixed_ratio_extremes():
    sc, mc = _stubs(40, False), _stubs(30, True)
    only_sc = build_batches(sc, mc, TrainingConfig(mix_policy="fixed_ratio", sc_ratio=1.0, derive_sc_from_mc=False))
    assert all(k == SC for b in only_sc for _, k in b.items)
    only_mc = build_batches(sc, mc, TrainingConfig(mix_policy="fixed_ratio", sc_ratio=0.0, derive_sc_from_mc=False))
    assert all(k == MC for b in only_mc for _, k in b.items)
    assert sum(len(b) for b in only_mc) == 32  # ceil(30/16) full batches
    half = build_batches(sc, mc, TrainingConfig(mix_policy="fixed_ratio", sc_ratio=0.5, derive_sc_from_mc=False))
    assert all(sum(k == SC for _, k in b.items) == 8 for b in half)


def test_fixed_ratio_missing_source():
    with pytest.raises(ConfigError):
        build_batches([], _stubs(3, True), TrainingConfig(mix_policy="fixed_ratio", sc_ratio=0.5,
                                                          derive_sc_from_mc=False))
    with pytest.raises(ConfigError):
        build_batches(_stubs(3, False), [], TrainingConfig(mix_policy="fixed_ratio", sc_ratio=0.2))
    with pytest.raises(ConfigError):
        build_batches([], [], TrainingConfig())


def test_batches_deterministic():
    sc, mc = _stubs(20, False), _stubs(20, True)
    cfg = TrainingConfig(derive_sc_from_mc=False)
    ids = lambda bs: [u.utterance_id for b in bs for u, _ in b.items]
    assert ids(build_batches(sc, mc, cfg, seed=4, epoch=2)) == ids(build_batches(sc, mc, cfg, seed=4, epoch=2))
    assert ids(build_batches(sc, mc, cfg, seed=4, epoch=2)) != ids(build_batches(sc, mc, cfg, seed=4, epoch=3))


def test_zero_pad_and_unified_consume_identical_streams(monkeypatch):
    import unified_asr.trainer as tr

    sc, mc = _small_corpus(3, 3)
    real = tr.train_step
    streams = {}
    for mode in ("zero_pad", "unified"):
        seen = streams.setdefault(mode, [])

        def record(model, opt, batch, config=None, cache=None, seen=seen):
            seen.append([(u.utterance_id, k) for u, k in batch.items])
            return real(model, opt, batch, config, cache)

        monkeypatch.setattr(tr, "train_step", record)
        train(ModelConfig(mode=mode), TrainingConfig(epochs=2, batch_size=4, seed=7), sc, mc)
    assert streams["zero_pad"] == streams["unified"] and len(streams["unified"]) == 6


def _small_corpus(n_sc=4, n_mc=4, frames=6):
    cfg = corpus.SimConfig(num_train_sc=n_sc, num_train_mc=n_mc, frames_per_utt=frames)
    sc = [corpus.make_utterance(cfg, "train_sc", i, 10.0, False, samples_per_label=480) for i in range(n_sc)]
    mc = [corpus.make_utterance(cfg, "train_mc", i, 10.0, True, samples_per_label=480) for i in range(n_mc)]
    return sc, mc


def test_lr_zero_leaves_tensors(desk_model_cfg):
    sc, mc = _small_corpus()
    init = UnifiedModel.create(desk_model_cfg, seed=0)
    model, _ = train(desk_model_cfg, TrainingConfig(learning_rate=0.0, epochs=1, batch_size=4), sc, mc)
    for n in init.params:
        np.testing.assert_array_equal(model.params[n], init.params[n])


def test_training_is_deterministic(tmp_path, desk_model_cfg):
    sc, mc = _small_corpus()
    tcfg = TrainingConfig(epochs=2, batch_size=4, seed=3)
    train(desk_model_cfg, tcfg, sc, mc, out_dir=tmp_path / "a")
    train(desk_model_cfg, tcfg, sc, mc, out_dir=tmp_path / "b")
    for name in ("model.ckpt", "train_log.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_routing_holds_every_step_of_training(desk_model_cfg, monkeypatch):
    import unified_asr.trainer as tr

    sc, mc = _small_corpus()
    real = tr.train_step
    seen = set()

    def checked(model, opt, batch, config=None, cache=None):
        kinds = {k for _, k in batch.items}
        before = _snapshot(model)
        out = real(model, opt, batch, config, cache)
        if kinds == {SC}:
            assert not _changed(model, before, "mc_fe")
        if kinds == {MC}:
            assert not _changed(model, before, "sc_fe")
        seen.add(frozenset(kinds))
        return out

    monkeypatch.setattr(tr, "train_step", checked)
    tcfg = TrainingConfig(epochs=3, batch_size=2, learning_rate=1e-2)
    train(desk_model_cfg, tcfg, sc, mc)
    assert frozenset({SC}) in seen and frozenset({MC}) in seen


def test_fixed_batch_loss_descends(desk_model_cfg):
    sc, mc = _small_corpus(2, 2)
    drops = []
    for seed in range(5):
        model = UnifiedModel.create(desk_model_cfg, seed=seed)
        opt = OptimizerState(model.params.tensors, TrainingConfig(learning_rate=3e-4))
        batch = TrainingBatch([(sc[0], SC), (sc[1], SC), (mc[0], MC), (mc[1], MC)])
        cache = ItemCache(model)
        losses = [train_step(model, opt, batch, cache=cache)[0] for _ in range(10)]
        drops.append(all(b < a for a, b in zip(losses, losses[1:])))
    assert np.median(np.array(drops, dtype=float)) == 1.0


def test_training_beats_uniform_prediction(desk_model_cfg):
    cfg = corpus.SimConfig()
    sc = [corpus.make_utterance(cfg, "train_sc", i, corpus._snr_for(cfg, "train_sc", i), False) for i in range(100)]
    mc = [corpus.make_utterance(cfg, "train_mc", i, corpus._snr_for(cfg, "train_mc", i), True) for i in range(100)]
    _, lines = train(desk_model_cfg, TrainingConfig(epochs=5), sc, mc)
    final = float([l for l in lines if "\tmean\t" in l][-1].split("\t")[2])
    assert final < math.log(8)


def test_checkpoint_bytes_change_after_training(desk_model_cfg):
    sc, mc = _small_corpus(2, 2)
    init = UnifiedModel.create(desk_model_cfg, seed=0)
    model, _ = train(desk_model_cfg, TrainingConfig(epochs=1, batch_size=2), sc, mc, stats=init.stats)
    assert checkpoint_bytes(model) != checkpoint_bytes(init)
