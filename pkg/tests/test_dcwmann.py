import math

import numpy as np
import pytest

from procseq import dcwmann as dm
from procseq import eventlog as ev
from procseq.extmem import MemoryConfig
from procseq.numcore import Adam, backward, grad_check
from procseq.numcore import Tensor


def small_model(seed=0, V=5, H=8, N=4, W=6, max_len=6, scale=None):
    cfg = dm.DCwMANNConfig(input_dim=V + 4, vocab_size=V, memory=MemoryConfig(N, W, 1),
                           controller_hidden=H, max_decode_len=max_len)
    m = dm.DCwMANN(cfg, seed=seed)
    if scale is not None:
        rng = np.random.default_rng(seed + 100)
        for p in m.parameters():
            p.data = rng.uniform(-scale, scale, size=p.shape)
    return m


def sample(rng, symbols=(0, 1, 2), suffix=(3, 4), V=5, case="c"):
    feats = np.zeros((len(symbols), V + 4))
    feats[np.arange(len(symbols)), list(symbols)] = 1.0
    feats[:, V:] = rng.uniform(0, 1, size=(len(symbols), 4))
    return ev.PrefixSuffixSample(case, list(symbols), list(suffix), 0.5, 1.0, feats)


def test_parameter_sets_disjoint_and_unique():
    m = small_model()
    enc = {p.name for p in m.encoder_parameters()}
    dec = {p.name for p in m.decoder_parameters()}
    assert not enc & dec
    assert len(enc | dec) == len(m.parameters())


def test_config_rejects_bad_dims():
    with pytest.raises(dm.ConfigurationError):
        dm.DCwMANNConfig(input_dim=0, vocab_size=3)


def test_encode_one_step_writes(rng):
    m = small_model()
    enc = dm.encode(m, sample(rng, symbols=(1,)).features)
    assert enc.memory.write_weight.data.sum() > 0


def test_zero_params_finite(rng):
    m = small_model()
    for p in m.parameters():
        p.data = np.zeros_like(p.data)
    enc = dm.encode(m, sample(rng).features)
    for t in (enc.state.h, enc.state.c, enc.memory.M, enc.output):
        assert np.all(np.isfinite(t.data))


def test_encode_deterministic_and_input_forms(rng):
    m = small_model(scale=0.5)
    s = sample(rng)
    a = dm.encode(m, s.features)
    b = dm.encode(m, s.prefix)
    c = dm.encode(m, s.features[None])
    for x in (b, c):
        np.testing.assert_array_equal(a.output.data, x.output.data)
        np.testing.assert_array_equal(a.memory.M.data, x.memory.M.data)


def test_encode_dimension_mismatch(rng):
    with pytest.raises(dm.ConfigurationError):
        dm.encode(small_model(), np.zeros((3, 4)))


def test_zero_activity_weights_give_uniform(rng):
    m = small_model(scale=0.5)
    m.enc.act_W.data[:] = 0.0
    probs, t = dm.predict_next(m, dm.encode(m, sample(rng).features))
    np.testing.assert_allclose(probs, 0.2)
    assert dm.argmax_activity(probs) == 0
    assert isinstance(t, float)


def test_hand_built_softmax():
    m = small_model(V=3)
    O = m.config.output_dim
    o = np.zeros((1, O))
    o[0, 0] = 1.0
    m.enc.act_W.data = np.zeros((O, 3))
    m.enc.act_W.data[0, 1] = 1.0
    enc = dm.EncodeResult(None, None, Tensor(o))
    probs, _ = dm.predict_next(m, enc)
    np.testing.assert_allclose(probs, [0.2119, 0.5761, 0.2119], atol=1e-4)
    assert abs(probs.sum() - 1.0) <= 1e-9


def test_predict_next_time_in_seconds(rng):
    m = small_model(scale=0.3)
    enc = dm.encode(m, sample(rng).features)
    sc = ev.Scaling(time_mean=100.0, time_std=10.0)
    raw = dm.time_output(m, enc).item()
    _, t = dm.predict_next(m, enc, sc)
    assert t == pytest.approx(max(raw * 10.0 + 100.0, 0.0))


def decoder_emits(m, symbol):
    # make the decoder's logits constant and peaked at ``symbol``
    m.dec.act_W.data[:] = 0.0
    m.dec.out_W.data[:] = 0.0
    m.dec.out_b.data[:] = 0.0
    m.dec.out_b.data[0] = 1.0
    m.dec.act_W.data[0, symbol] = 5.0


def test_decode_immediate_end_is_empty(rng):
    m = small_model(scale=0.5)
    decoder_emits(m, m.config.vocab_size - 1)
    assert dm.decode_suffix(m, dm.encode(m, sample(rng).features)) == []


def test_decode_respects_cap(rng):
    m = small_model(scale=0.5, max_len=7)
    decoder_emits(m, 2)
    enc = dm.encode(m, sample(rng).features)
    assert dm.decode_suffix(m, enc) == [2] * 7
    assert dm.decode_suffix(m, enc, max_len=3) == [2] * 3
    with pytest.raises(dm.ConfigurationError):
        dm.decode_suffix(m, enc, max_len=0)


@pytest.mark.parametrize("seed", range(5))
def test_decode_leaves_memory_untouched(seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed, scale=1.0)
    enc = dm.encode(m, sample(rng).features)
    before = {f: getattr(enc.memory, f).data.copy() for f in ("M", "usage", "precedence", "link")}
    out = dm.decode_suffix(m, enc)
    assert m.config.vocab_size - 1 not in out and len(out) <= m.config.max_decode_len
    for f, arr in before.items():
        assert np.array_equal(getattr(enc.memory, f).data, arr)


def perfect_next_model(target, std_time):
    m = small_model(V=5)
    O = m.config.output_dim
    m.enc.out_W.data[:] = 0.0
    m.enc.out_b.data[:] = 0.0
    m.enc.out_b.data[0] = 1.0
    m.enc.act_W.data = np.zeros((O, 5))
    m.enc.act_W.data[0, target] = 60.0
    m.enc.time_W.data[:] = 0.0
    m.enc.time_b.data[:] = std_time
    return m


def test_loss_examples(rng):
    s = sample(rng, suffix=(3, 4))
    sc = ev.Scaling(time_mean=0.2, time_std=0.1)
    m = perfect_next_model(3, sc.standardize(s.target_next_time))
    assert dm.loss(m, s, "next", sc).item() < 1e-20
    m.enc.act_W.data[:] = 0.0
    assert dm.loss(m, s, "next", sc, lam=0.0).item() == pytest.approx(math.log(5))
    m2 = small_model(scale=0.5)
    full = dm.loss(m2, s, "next", sc).item()
    ce = dm.loss(m2, s, "next", sc, lam=0.0).item()
    t = dm.time_output(m2, dm.encode(m2, s.features)).item()
    assert full == pytest.approx(ce + abs(t - sc.standardize(s.target_next_time)))


def test_suffix_loss_uniform_is_length_times_log_v(rng):
    m = small_model(scale=0.5)
    m.dec.act_W.data[:] = 0.0
    s = sample(rng, suffix=(1, 2, 4))
    assert dm.loss(m, s, "suffix").item() == pytest.approx(3 * math.log(5))


def test_batch_loss_rejects_mixed_lengths(rng):
    with pytest.raises(dm.ConfigurationError):
        dm.batch_loss(small_model(), [sample(rng), sample(rng, symbols=(0, 1))])


@pytest.mark.parametrize("task", ["next", "suffix"])
def test_grouped_loss_equals_mean_sample_loss(task):
    log = ev.synth_grammar_log(ev.long_range_grammar(), 4, seed=5)
    sc = ev.Scaling.fit(log.traces)
    ss = ev.make_samples(log.traces, log.vocab, sc, 4)
    m = dm.DCwMANN(dm.DCwMANNConfig(ev.feature_dim(log.vocab), log.vocab.size,
                                    MemoryConfig(4, 6, 1), 8), seed=2)
    grouped = dm.grouped_loss(m, dm.group_by_case(ss), task, sc).item()
    mean = float(np.mean([dm.loss(m, s, task, sc).item() for s in ss]))
    assert grouped == pytest.approx(mean, rel=1e-12)


def test_group_by_case_splits_diverging_prefixes(rng):
    a = sample(rng, symbols=(0, 1, 2))
    b = sample(rng, symbols=(3, 1))
    groups = dm.group_by_case([a, b])
    assert sorted(len(g) for g in groups) == [1, 1]


@pytest.mark.parametrize("task", ["next", "suffix"])
def test_full_model_grad_check(task):
    rng = np.random.default_rng(7)
    m = small_model(seed=7, scale=0.5)
    s = sample(rng)
    assert grad_check(lambda: dm.loss(m, s, task), m.parameters(), max_entries=10, rng=rng) <= 1e-4


def test_next_task_step_leaves_decoder_unchanged(rng):
    m = small_model(scale=0.3)
    dec_before = [p.data.copy() for p in m.decoder_parameters()]
    enc_before = [p.data.copy() for p in m.encoder_parameters()]
    backward(dm.loss(m, sample(rng), "next"))
    Adam(m.parameters()).step()
    for p, v in zip(m.decoder_parameters(), dec_before):
        np.testing.assert_array_equal(p.data, v)
    assert any(not np.array_equal(p.data, v) for p, v in zip(m.encoder_parameters(), enc_before))


def test_zero_epochs_leaves_model(rng):
    m = small_model(scale=0.3)
    before = {k: v.copy() for k, v in m.state_dict().items()}
    rep = dm.train(m, [sample(rng)], "next", epochs=0)
    assert rep.epochs == []
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def memorize_samples():
    v = ev.Vocabulary(["a", "b", "c"])
    traces = [ev.Trace(f"copy{i}", [ev.Event(f"copy{i}", a, 60 * j) for j, a in enumerate([0, 1, 2, 1, 0, 2])])
              for i in range(20)]
    return v, ev.make_samples(traces, v, ev.Scaling.fit(traces), 4)


def test_training_is_seed_deterministic():
    v, ss = memorize_samples()
    curves = []
    for _ in range(2):
        m = dm.DCwMANN(dm.DCwMANNConfig(ev.feature_dim(v), v.size, MemoryConfig(4, 6, 1), 8), seed=3)
        curves.append(dm.train(m, ss, "suffix", epochs=3, seed=5).losses)
    assert curves[0] == curves[1]


@pytest.mark.slow
def test_memorizes_one_trace():
    v, ss = memorize_samples()
    m = dm.DCwMANN(dm.DCwMANNConfig(ev.feature_dim(v), v.size, MemoryConfig(4, 6, 1), 16), seed=0)
    rep = dm.train(m, ss, "suffix", epochs=200, batch=4, seed=0, target_loss=0.01)
    assert rep.losses[-1] < 0.01
    _, _, suffixes = dm.predict_batches(m, ss[:2], suffix=True)
    assert suffixes == [s.target_suffix[:-1] for s in ss[:2]]
