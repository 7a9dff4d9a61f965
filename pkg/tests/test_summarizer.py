import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazesum import ndops as nd
from gazesum.exceptions import AlignError, ConfigError, NormalizationError
from gazesum.summarizer import (BOS, EOS, HumanAttentionVector, SummaryExample,
                                SummaryModelConfig, SummaryNet, _attend, build_summary_vocab,
                                decode_train_step, encode, encode_summary, generate,
                                load_summary_checkpoint, normalize_attention,
                                random_attention_corpus, random_attention_vectors,
                                save_summary_checkpoint, summary_tokens, train_summarizer)

SMALL = dict(ast_vocab_size=12, summary_vocab_size=9, embed_dim=5, enc_hidden=6,
             dec_hidden=6, human_rnn_hidden=6, max_ast_len=20, max_summary_len=6, seed=4)


def net_for(variant="baseline", **kw):
    return SummaryNet(SummaryModelConfig(variant=variant, **{**SMALL, **kw}))


def np_gru(x, h, p):
    sig = lambda v: 1 / (1 + np.exp(-v))
    z = sig(x @ p["W_z"] + h @ p["U_z"] + p["b_z"])
    r = sig(x @ p["W_r"] + h @ p["U_r"] + p["b_r"])
    hh = np.tanh(x @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
    return (1 - z) * h + z * hh


def test_normalize_examples():
    assert normalize_attention([0.5] * 3).values == (1.0, 1.0, 1.0)
    np.testing.assert_allclose(normalize_attention([0.1, 0.3]).values, [0.5, 1.5], atol=1e-15)
    for bad in ([], [0, 0], [1, -1], [np.nan, 1]):
        with pytest.raises(NormalizationError):
            normalize_attention(bad)
    with pytest.raises(NormalizationError):
        HumanAttentionVector("m", (1.0, 2.0))


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=30), st.floats(1e-2, 1e2))
def test_normalize_mean_one_and_scale_invariant(raw, k):
    a = normalize_attention(raw).as_array()
    b = normalize_attention(np.asarray(raw) * k).as_array()
    assert abs(a.mean() - 1.0) <= 1e-9
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_all_ones_attention_leaves_input_unchanged():
    net = net_for("augmented")
    ids = [np.array([4, 5, 6, 7]), np.array([8, 9])]
    enc = encode(net, ids, [np.ones(4), np.ones(2)])
    raw = nd.embed_lookup(net.params["ast_embedding"], np.array([[4, 5, 6, 7], [8, 9, 0, 0]]))
    assert np.array_equal(enc.scaled_input.data, raw.data)
    enc2 = encode(net, ids, [np.array([2.0, 1, 0.5, 0.5]), np.ones(2)])
    assert np.array_equal(enc2.scaled_input.data[0, 0], 2 * raw.data[0, 0])
    # encoder GRU itself never sees the scaling
    assert np.array_equal(enc.states.data, enc2.states.data)


def test_baseline_extra_is_last_real_encoder_state():
    net = net_for()
    ids = [np.array([4, 5, 6]), np.array([7, 8, 9, 10, 11])]
    enc = encode(net, ids)
    E = net.params["ast_embedding"].data
    p = {k: v.data for k, v in net.gru("enc.").items()}
    for row, seq in enumerate(ids):
        h = np.zeros(6)
        for t in seq:
            h = np_gru(E[t], h, p)
        np.testing.assert_allclose(enc.extra.data[row], h, atol=1e-12)
        np.testing.assert_allclose(enc.final.data[row], h, atol=1e-12)


def test_augmented_extra_is_human_gru_over_scaled_embeddings():
    net = net_for("augmented")
    seq, att = np.array([4, 5, 6]), np.array([0.5, 1.0, 1.5])
    enc = encode(net, [seq], [att])
    E = net.params["ast_embedding"].data
    p = {k: v.data for k, v in net.gru("human.").items()}
    h = np.zeros(6)
    for t, a in zip(seq, att):
        h = np_gru(E[t] * a, h, p)
    np.testing.assert_allclose(enc.extra.data[0], h, atol=1e-12)


def test_output_width_parity():
    b, a = net_for(), net_for("augmented")
    assert b.output_width == a.output_width == 18
    assert b.config.output_width("augmented") == 18
    with pytest.raises(ConfigError, match="parity"):
        SummaryModelConfig(**{**SMALL, "human_rnn_hidden": 7})
    with pytest.raises(ConfigError):
        SummaryModelConfig(variant="fancy")


def test_variant_attention_pairing():
    with pytest.raises(ConfigError):
        encode(net_for("augmented"), [np.array([4, 5])])
    with pytest.raises(ConfigError):
        encode(net_for(), [np.array([4, 5])], [np.ones(2)])
    with pytest.raises(AlignError):
        encode(net_for("augmented"), [np.array([4, 5])], [np.ones(3)])


def test_attention_truncated_with_long_input():
    net = net_for("augmented", max_ast_len=3)
    enc = encode(net, [np.arange(4, 10)], [np.linspace(0.5, 1.5, 6)])
    assert enc.states.shape[1] == 3 and enc.scaled_input.shape[1] == 3


def test_attention_weights_mask_padding():
    net = net_for()
    enc = encode(net, [np.array([4, 5, 6, 7]), np.array([8])])
    _, alpha = _attend(enc, enc.final)
    np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)
    assert (alpha.data[1, 1:] == 0).all()


def test_zero_output_layer_gives_uniform_loss():
    net = net_for()
    net.params["out.W"].data[...] = 0
    enc = encode(net, [np.array([4, 5, 6])])
    loss = decode_train_step(net, enc, [np.array([BOS, 5, EOS])])
    assert loss.item() == pytest.approx(math.log(9), abs=1e-12)


def test_teacher_forcing_feeds_gold_tokens():
    from gazesum.summarizer import _decoder_outputs
    net = net_for()
    gold = np.array([BOS, 4, 5, 6, EOS])
    enc = encode(net, [np.array([4, 5, 6])])
    f1 = _decoder_outputs(net, enc, gold[None, :-1]).data
    # a model whose argmax is always token 7 still sees the gold prefix
    net.params["out.b"].data[7] = 50.0
    f2 = _decoder_outputs(net, enc, gold[None, :-1]).data
    np.testing.assert_array_equal(f1, f2)
    E = net.params["sum_embedding"].data
    p = {k: v.data for k, v in net.gru("dec.").items()}
    s = enc.final.data[0]
    for t, tok in enumerate(gold[:-1]):
        s = np_gru(E[tok], s, p)
        np.testing.assert_allclose(f2[0, t, 6:12], s, atol=1e-12)


def test_padded_targets_ignored():
    net = net_for()
    enc = encode(net, [np.array([4, 5]), np.array([6, 7])])
    both = decode_train_step(net, enc, [np.array([BOS, 5, EOS]), np.array([BOS, 4, 6, 7, EOS])])
    single = decode_train_step(net, encode(net, [np.array([4, 5])]), [np.array([BOS, 5, EOS])])
    other = decode_train_step(net, encode(net, [np.array([6, 7])]),
                              [np.array([BOS, 4, 6, 7, EOS])])
    assert both.item() == pytest.approx((2 * single.item() + 4 * other.item()) / 6, abs=1e-12)


@pytest.mark.parametrize("variant", ["baseline", "augmented"])
def test_gradients(variant):
    from conftest import grad_check
    net = net_for(variant, embed_dim=3, enc_hidden=4, dec_hidden=4, human_rnn_hidden=4)
    ids = [np.array([4, 5, 6]), np.array([7, 8])]
    att = [np.array([0.5, 1.0, 1.5]), np.array([1.2, 0.8])] if variant == "augmented" else None

    def loss():
        enc = encode(net, ids, att)
        return decode_train_step(net, enc, [np.array([BOS, 4, 5, EOS]), np.array([BOS, 6, EOS])])
    assert grad_check(loss, net.parameters(), probes=25) <= 1e-4


@pytest.mark.parametrize("variant", ["baseline", "augmented"])
def test_overfit_single_pair(variant):
    cfg = SummaryModelConfig(variant=variant, **{**SMALL, "epochs": 150, "lr": 0.02})
    att = normalize_attention([1, 2, 3, 1]) if variant == "augmented" else None
    ex = SummaryExample("m", np.array([4, 5, 6, 7]), np.array([BOS, 4, 6, 5, EOS]), att)
    res = train_summarizer(cfg, [ex])
    assert res.losses[-1] < res.losses[0]
    assert generate(res.net, ex.ast_ids, att) == [4, 6, 5]


def test_max_summary_len_one():
    net = net_for(max_summary_len=1)
    net.params["out.b"].data[5] = 100.0
    assert generate(net, np.array([4, 5])) == [5]


def test_generation_never_emits_pad_or_bos():
    net = net_for()
    net.params["out.b"].data[[0, 2]] = 1e3
    out = generate(net, np.array([4, 5]))
    assert 0 not in out and BOS not in out and len(out) <= 6


def test_random_vectors():
    v = random_attention_vectors(0.2, 0.6, 50, seed=3)
    raw = np.random.default_rng(3).uniform(0.2, 0.6, size=50)
    np.testing.assert_allclose(v.as_array(), raw / raw.mean(), atol=1e-15)
    assert abs(v.as_array().mean() - 1) < 1e-9
    assert v.values == random_attention_vectors(0.2, 0.6, 50, seed=3).values
    near = random_attention_vectors(0.5, 0.5 + 1e-9, 20, seed=0).as_array()
    np.testing.assert_allclose(near, 1.0, atol=1e-8)
    for lo, hi in ((0.5, 0.5), (0.6, 0.2), (-0.1, 0.3)):
        with pytest.raises(ConfigError):
            random_attention_vectors(lo, hi, 5, 0)
    corp = random_attention_corpus({"b": 3, "a": 4}, 0.1, 0.9, seed=7)
    assert list(corp) == ["a", "b"] and len(corp["a"]) == 4
    assert corp["a"].values != random_attention_corpus({"a": 4}, 0.1, 0.9, seed=8)["a"].values


def test_summary_tokens():
    assert summary_tokens("Returns the <b>max</b> value. More text.") == ["returns", "the", "max",
                                                                        "value"]
    assert summary_tokens("Gets x @param y the thing") == ["gets", "x"]
    assert summary_tokens("a b c d e f g h i j k l m n o p") == list("abcdefghijklm")
    assert summary_tokens("") == []
    v = build_summary_vocab([["a", "b"], ["a"]])
    assert list(encode_summary(["a", "zzz"], v)) == [BOS, v.encode("a"), 1, EOS]


def test_empty_summaries_skipped(caplog):
    cfg = SummaryModelConfig(**{**SMALL, "epochs": 1})
    good = SummaryExample("g", np.array([4]), np.array([BOS, 4, EOS]))
    res = train_summarizer(cfg, [good, SummaryExample("e", np.array([5]), np.array([BOS, EOS]))])
    assert len(res.losses) == 1 and "empty" in caplog.text
    with pytest.raises(ConfigError):
        train_summarizer(cfg, [])


def test_checkpoint_roundtrip(tmp_path):
    net = net_for("augmented")
    v = build_summary_vocab([["x"]])
    save_summary_checkpoint(tmp_path / "s.ckpt", net, v, v)
    back, av, sv = load_summary_checkpoint(tmp_path / "s.ckpt")
    assert back.config == net.config and sv == v
    att = normalize_attention([1.0, 3.0])
    assert generate(back, np.array([4, 5]), att) == generate(net, np.array([4, 5]), att)
