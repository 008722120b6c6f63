import io
import itertools

import numpy as np
import pytest

from disentangle.corpus import Dialogue, SynthConfig, Utterance, synth_generate
from disentangle.exceptions import CheckpointError, ConfigError, InputError, NumericError
from disentangle.metrics import Partition
from disentangle.model import DisentanglementNet, ModelConfig
from disentangle.pipeline import (
    LinkPrediction,
    TrainConfig,
    cluster,
    parent_accuracy,
    predict,
    select_slots,
    split_holdout,
    train,
)

from oracles import closure_oracle

SMALL = ModelConfig(hidden_dim=8, heads=2, recurrent_dim=4, hash_buckets=64, max_tokens=16)


def _small_net(window=6, seed=0, **kw):
    return DisentanglementNet(ModelConfig(**{**SMALL.__dict__, "window": window, "seed": seed, **kw}))


def _synth(n=40, seed=0, **kw):
    return synth_generate(SynthConfig(n_utterances=n, n_users=4, n_threads=2, seed=seed, **kw))


# clustering


def test_cluster_example():
    assert cluster({0: 0, 1: 0, 2: 2, 3: 1}) == Partition([{0, 1, 3}, {2}])


def test_cluster_all_self_links():
    assert cluster({i: i for i in range(4)}) == Partition([{0}, {1}, {2}, {3}])


def test_cluster_accepts_link_predictions():
    links = [LinkPrediction(0, 0, 1.0), LinkPrediction(1, 0, 0.9), LinkPrediction(2, 2, 0.5)]
    assert cluster(links) == Partition([{0, 1}, {2}])


def test_cluster_errors():
    with pytest.raises(InputError):
        cluster({0: 0, 1: 5})
    with pytest.raises(InputError):
        cluster([LinkPrediction(1, 0, 1.0), LinkPrediction(1, 1, 1.0), LinkPrediction(0, 0, 1.0)])


@pytest.mark.parametrize("seed", range(100))
def test_cluster_matches_closure_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    ids = sorted(int(x) for x in rng.choice(50, size=n, replace=False))
    links = {c: ids[int(rng.integers(k + 1))] for k, c in enumerate(ids)}
    got = cluster(links)
    assert got == closure_oracle(links)
    assert set().union(*got.clusters) == set(ids)
    assert sum(len(c) for c in got.clusters) == n


# slot selection and accuracy


def test_select_slots_prefers_latest_on_ties_and_skips_pads():
    logits = np.array([[5.0, 1.0, 1.0, 1.0], [0.0, 0.0, 3.0, 3.0]])
    pad = np.array([[True, False, False, False], [False, False, False, False]])
    slots, probs = select_slots(logits, pad)
    assert slots.tolist() == [3, 3]
    np.testing.assert_allclose(probs, [1 / 3, np.exp(3) / (2 + 2 * np.exp(3))])


def test_parent_accuracy_applies_self_loop_rule():
    d = Dialogue([Utterance(i, "a") for i in range(5)], {0: 0, 1: 0, 2: 1, 3: 3, 4: 0})
    preds = [LinkPrediction(c, p, 1.0) for c, p in {0: 0, 1: 0, 2: 2, 3: 3, 4: 4}.items()]
    assert parent_accuracy(preds, d) == pytest.approx(3 / 5)
    assert parent_accuracy(preds, d, window=4) == pytest.approx(4 / 5)


def test_split_holdout_takes_tail_of_each_dialogue():
    tr, held = split_holdout([None, None], [[0] * 10, [0] * 5], 0.2)
    assert held.tolist() == [8, 9, 14]
    assert tr.tolist() == list(range(8)) + [10, 11, 12, 13]


# prediction


def test_untrained_model_predicts_self_links():
    d = _synth()
    preds = predict(d, _small_net())
    assert [p.parent for p in preds] == [p.child for p in preds]


def test_single_utterance_dialogue():
    preds = predict(Dialogue([Utterance(3, "a", "hi")]), _small_net())
    assert preds == [LinkPrediction(3, 3, 1.0)]
    assert predict(Dialogue([]), _small_net()) == []


def test_predict_is_deterministic_and_causal():
    d = _synth(seed=1)
    net = train([d], TrainConfig(epochs=1, window=6), model_config=SMALL).model
    a, b = predict(d, net), predict(d, net)
    assert a == b
    assert all(p.parent <= p.child and 0.0 < p.confidence <= 1.0 for p in a)


def test_trained_to_saturation_on_a_chain():
    d = Dialogue(
        [Utterance(0, "ann", "how do i mount"), Utterance(1, "bob", "ann: use mount"), Utterance(2, "ann", "bob: thanks")],
        {0: 0, 1: 0, 2: 1},
    )
    cfg = TrainConfig(epochs=150, window=3, learning_rate=1e-2, holdout_fraction=0.0, lr_decay="constant")
    net = train([d], cfg, model_config=SMALL).model
    assert {p.child: p.parent for p in predict(d, net)} == d.gold_links


# training


def test_train_rejects_unannotated():
    d = _synth()
    with pytest.raises(ConfigError):
        train([Dialogue(d.utterances)], TrainConfig(epochs=1, window=6), model_config=SMALL)


@pytest.mark.parametrize("field, value", [("epochs", 0), ("batch_size", 0), ("learning_rate", -1.0), ("lr_decay", "cosine")])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigError):
        TrainConfig(**{field: value}).validate()


def test_zero_learning_rate_changes_nothing():
    d = _synth(seed=2)
    init = _small_net()
    before = init.to_bytes()
    cfg = TrainConfig(epochs=3, window=6, learning_rate=0.0, holdout_fraction=0.2)
    result = train([d], cfg, init=init)
    assert result.model.to_bytes() == before
    losses = [r.loss for r in result.trace]
    assert losses[0] == losses[1] == losses[2]


def test_training_is_bitwise_reproducible():
    d = _synth(seed=3)
    cfg = TrainConfig(epochs=2, window=6, seed=5)
    a = train([d], cfg, model_config=SMALL)
    b = train([d], cfg, model_config=SMALL)
    assert a.model.to_bytes() == b.model.to_bytes()
    assert a.trace == b.trace


@pytest.mark.parametrize("seed", range(3))
def test_fifty_steps_reduce_the_loss(seed):
    from disentangle.corpus import build_windows, detect_mentions
    from disentangle.features import featurize

    d = _synth(n=50, seed=seed, mention_prob=1.0)
    ws = build_windows(d, detect_mentions(d, 6), 6)
    init = _small_net(seed=seed)
    batch = featurize([d], [ws], init.config.encoder_config).batch(np.arange(len(ws)))
    before = init.loss(batch)[0].item()
    cfg = TrainConfig(epochs=1, batch_size=1, window=6, seed=seed, holdout_fraction=0.0, lr_decay="constant")
    after = train([d], cfg, init=init).model.loss(batch)[0].item()
    assert after < before


def test_resume_with_other_window_fails():
    with pytest.raises(CheckpointError):
        train([_synth()], TrainConfig(epochs=1, window=8), init=_small_net(window=6))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_is_reported():
    net = _small_net()
    net.encoder.embedding.value = np.full(net.encoder.embedding.shape, 1e300)
    net.encoder.W_cand.value = np.full(net.encoder.W_cand.shape, 1e300)
    with pytest.raises(NumericError):
        train([_synth()], TrainConfig(epochs=1, window=6), init=net)


def test_empty_holdout_reports_nan_accuracy():
    d = _synth(n=30)
    cfg = TrainConfig(epochs=1, window=6, batch_size=7, holdout_fraction=0.0)
    result = train([d], cfg, model_config=SMALL)
    assert len(result.trace) == 1 and np.isnan(result.trace[0].accuracy)


# checkpoints


def test_checkpoint_round_trip():
    net = _small_net(seed=4)
    buf = io.BytesIO(net.to_bytes())
    loaded = DisentanglementNet.load(buf)
    assert loaded.config == net.config
    assert loaded.to_bytes() == net.to_bytes()


def test_checkpoint_expectation_mismatch():
    buf = io.BytesIO(_small_net(window=6).to_bytes())
    with pytest.raises(CheckpointError):
        DisentanglementNet.load(buf, expect={"window": 50})


def test_checkpoint_shape_mismatch(tmp_path):
    net = _small_net()
    arrays = {name: p.data for name, p in net.named_parameters().items()}
    arrays["rgcn.W_r"] = np.zeros((3, 3))
    import json
    from dataclasses import asdict

    arrays["__config__"] = np.array(json.dumps(asdict(net.config)))
    path = tmp_path / "bad.npz"
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError, match="rgcn.W_r"):
        DisentanglementNet.load(path)


def test_unreadable_checkpoint(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        DisentanglementNet.load(path)


def test_model_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"window": 5, "depth": 3})
    for bad in (dict(hidden_dim=10, heads=4), dict(window=1), dict(dropout=1.0), dict(hidden_dim=7, heads=7), dict(graph="global")):
        with pytest.raises(ConfigError):
            ModelConfig(**bad).validate()


@pytest.mark.parametrize("flag, value", [("speaker_mask", False), ("reference", False), ("graph", "window")])
def test_ablations_change_the_forward_pass(flag, value):
    from disentangle.corpus import build_windows, detect_mentions
    from disentangle.features import featurize

    d = _synth(n=30, mention_prob=1.0)
    full = _small_net(seed=1)
    for p in full.parameters():
        p.value = np.random.default_rng(7).normal(size=p.shape) * 0.5
    ablated = _small_net(seed=1, **{flag: value})
    for name, p in ablated.named_parameters().items():
        p.value = full.named_parameters()[name].data
    ws = build_windows(d, detect_mentions(d, 6), 6)
    batch = featurize([d], [ws], full.config.encoder_config).batch(np.arange(len(ws)))
    assert not np.allclose(full.forward(batch).data, ablated.forward(batch).data)


def test_pads_never_win_even_with_large_weights():
    d = _synth(n=8)
    net = _small_net(window=6)
    for p in net.parameters():
        p.value = np.random.default_rng(3).normal(size=p.shape) * 3
    for p in predict(d, net):
        assert p.parent in d.ids


def test_clusters_of_gold_links_reproduce_generator_threads():
    for seed, threads in itertools.product(range(3), (1, 3)):
        d = synth_generate(SynthConfig(n_utterances=60, n_threads=threads, seed=seed))
        assert cluster(d.gold_links) == Partition.from_labels(d.threads)
