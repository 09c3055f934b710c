import math

import numpy as np
import pytest

from headline_rl import autodiff as ad
from headline_rl.autodiff import Tensor
from headline_rl.generator import (
    EncoderOutput, Generator, attend, beam_search, coverage_update, decoder_step, encode, greedy_decode,
    initial_coverage, make_batch, ml_loss, output_distribution, sample, sample_batch, sequence_logprob,
)
from headline_rl.textcore import BOS, EOS, EncodedExample, ExamplePair, build_vocab, encode_with_pointer
from oracles import finished_sequences, binomial_bounds


def zero_model(model):
    for p in model.params.values():
        p.data[...] = 0.0
    return model


def test_parameter_names_and_shapes(tiny_model):
    H, E, V = 4, 3, tiny_model.vocab_size
    assert tiny_model["attn.W_h"].shape == (2 * H, 2 * H)
    assert tiny_model["ptr.w_h"].shape == (2 * H, 1)
    assert tiny_model["out.V_prime"].shape == (H, V)
    assert tiny_model["emb"].shape == (V, E)
    for p in tiny_model.params.values():
        assert np.abs(p.data).max() <= 1.5


def test_same_seed_same_init():
    a, b = Generator(10, 3, 4, seed=3), Generator(10, 3, 4, seed=3)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a.params)


def test_encode_shapes(tiny_model):
    enc = encode(tiny_model, [[5]], [[1.0]])
    assert enc.h.shape == (1, 1, 8)
    enc = encode(tiny_model, [[5, 6, 7]], [[1.0, 1.0, 1.0]])
    assert enc.h.shape == (1, 3, 8)
    with pytest.raises(ValueError):
        encode(tiny_model, np.zeros((1, 0), dtype=int), np.zeros((1, 0)))


def test_encode_zero_weights_gives_zero(tiny_model):
    enc = encode(zero_model(tiny_model), [[4, 5]], [[1.0, 1.0]])
    np.testing.assert_array_equal(enc.h.data, 0.0)


def test_backward_stream_alignment(tiny_model):
    H = tiny_model.hidden_size
    tiny_model["enc.fw.W"].data[...] = 0.0
    tiny_model["enc.fw.b"].data[...] = 0.0
    fwd = encode(tiny_model, [[4, 5]], [[1.0, 1.0]]).h.data[0]
    np.testing.assert_array_equal(fwd[:, :H], 0.0)
    # the backward state at the first position has read both tokens, the last only one
    rev = encode(tiny_model, [[5, 4]], [[1.0, 1.0]]).h.data[0]
    one = encode(tiny_model, [[5]], [[1.0]]).h.data[0]
    np.testing.assert_allclose(fwd[1, H:], one[0, H:], rtol=0, atol=1e-15)
    assert not np.allclose(rev[0, H:], fwd[0, H:])
    # a hand-run LSTM step from zero state gives the last position's backward state
    x = tiny_model["emb"].data[4]
    z = np.concatenate([x, np.zeros(H)]) @ tiny_model["enc.bw.W"].data + tiny_model["enc.bw.b"].data
    sig = 1 / (1 + np.exp(-z[:3 * H]))
    c = sig[:H] * np.tanh(z[3 * H:])
    np.testing.assert_allclose(rev[1, H:], sig[2 * H:] * np.tanh(c), rtol=1e-13)


def test_padding_does_not_leak(tiny_model):
    alone = encode(tiny_model, [[4, 5]], [[1.0, 1.0]])
    padded = encode(tiny_model, [[4, 5, 0]], [[1.0, 1.0, 0.0]])
    np.testing.assert_allclose(padded.h.data[0, :2], alone.h.data[0], atol=1e-15)
    np.testing.assert_allclose(padded.s0.data, alone.s0.data, atol=1e-15)


def _manual_enc(h, feat):
    B, L = h.shape[:2]
    return EncoderOutput(Tensor(h), Tensor(feat), None, None, np.zeros((B, L), dtype=int), np.ones((B, L)), 8)


def _attn_model():
    m = zero_model(Generator(8, 2, 1))
    return m


def test_attend_uniform_and_singleton():
    m = _attn_model()
    h = np.random.default_rng(0).normal(size=(1, 3, 2))
    a, ctx = attend(_manual_enc(h, np.zeros((1, 3, 2))), Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 3))), m)
    np.testing.assert_allclose(a.data, [[1 / 3] * 3])
    np.testing.assert_allclose(ctx.data[0], h[0].mean(axis=0))
    a, ctx = attend(_manual_enc(h[:, :1], np.ones((1, 1, 2))), Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1))), m)
    assert a.data[0, 0] == 1.0
    np.testing.assert_array_equal(ctx.data[0], h[0, 0])


def test_attend_hand_scores():
    m = _attn_model()
    m["attn.v"].data[:] = [[2.0], [0.0]]
    feat = np.zeros((1, 2, 2))
    feat[0, 0, 0] = math.atanh(math.log(3) / 2)
    a, _ = attend(_manual_enc(np.zeros((1, 2, 2)), feat), Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 2))), m)
    np.testing.assert_allclose(a.data[0], [0.75, 0.25], rtol=1e-13)


def test_coverage_update():
    np.testing.assert_array_equal(coverage_update([], 3), np.zeros(3))
    np.testing.assert_allclose(coverage_update([[0.3, 0.7]], 2), [0.3, 0.7])
    np.testing.assert_allclose(coverage_update([[0.3, 0.7], [0.6, 0.4]], 2), [0.9, 1.1])


def _oov_setup():
    vocab = build_vocab([ExamplePair(["a", "b"], ["a"])], 10)
    ex = encode_with_pointer(ExamplePair("a foo b foo".split(), ["foo"]), vocab)
    model = Generator(len(vocab), 3, 4, seed=1)
    batch = make_batch([ex], model.vocab_size)
    enc = encode(model, batch.src, batch.src_mask, batch.src_ext, batch.n_ext)
    return vocab, ex, model, enc


def test_output_distribution_forced_p_gen():
    vocab, ex, model, enc = _oov_setup()
    V = len(vocab)
    s, x = Tensor(np.random.default_rng(0).normal(size=(1, 4))), Tensor(np.ones((1, 3)))
    a, h_star = attend(enc, s, initial_coverage(enc), model)
    _, p_vocab, _, P = output_distribution(s, h_star, x, a, enc, model, p_gen_override=1.0)
    np.testing.assert_allclose(P.data[0, :V], p_vocab.data[0], atol=1e-15)
    assert P.data[0, V:].sum() == 0.0
    _, _, _, P = output_distribution(s, h_star, x, a, enc, model, p_gen_override=0.0)
    foo = ex.ext_vocab.ext_id("foo")
    assert P.data[0, foo] == pytest.approx(a.data[0, 1] + a.data[0, 3], abs=1e-15)
    assert P.data[0, vocab.id_of["a"]] == pytest.approx(a.data[0, 0], abs=1e-15)


def test_output_distribution_hand_copy_mass():
    m = zero_model(Generator(6, 2, 1))
    enc = EncoderOutput(Tensor(np.zeros((1, 3, 2))), Tensor(np.zeros((1, 3, 2))), None, None,
                        np.array([[6, 4, 6]]), np.ones((1, 3)), 7)
    a = Tensor(np.array([[0.2, 0.7, 0.1]]))
    _, _, _, P = output_distribution(Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))),
                                     a, enc, m, p_gen_override=0.6)
    assert P.data[0, 6] == pytest.approx(0.4 * 0.3, abs=1e-15)
    assert P.data.sum() == pytest.approx(1.0, abs=1e-15)


def test_step_invariants(tiny_model, tiny_example):
    out = ml_loss(tiny_model, make_batch([tiny_example], tiny_model.vocab_size), keep_steps=True)
    running = np.zeros(3)
    for st in out.steps:
        np.testing.assert_allclose(st.coverage.data[0], running, atol=1e-15)
        assert abs(st.a.data.sum() - 1) <= 1e-12 and (st.a.data >= 0).all()
        assert abs(st.P.data.sum() - 1) <= 1e-12 and (st.P.data >= 0).all()
        assert 0 < st.p_gen.data[0, 0] < 1
        assert st.o.shape == (1, tiny_model.feature_size)
        running = running + st.a.data[0]


def test_ml_loss_uniform_is_log_v():
    vocab = build_vocab([ExamplePair(["a", "b"], ["a"])], 10)
    m = zero_model(Generator(len(vocab), 2, 3))
    m["ptr.b"].data[:] = 50.0  # p_gen ~ 1
    ex = encode_with_pointer(ExamplePair(["a", "b"], ["b"]), vocab)
    loss = ml_loss(m, make_batch([ex], m.vocab_size), lam=0.0).loss.item()
    assert loss == pytest.approx(math.log(len(vocab)), rel=1e-12)


def test_ml_loss_certain_copy_is_zero():
    vocab = build_vocab([ExamplePair(["a"], ["a"])], 10)
    m = zero_model(Generator(len(vocab), 2, 3))
    m["ptr.b"].data[:] = -60.0  # p_gen ~ 0, all mass copied from the single source token
    a = vocab.id_of["a"]
    ex = EncodedExample([a], [a], [BOS], [a], encode_with_pointer(ExamplePair(["a"], ["a"]), vocab).ext_vocab, ["a"], ["a"])
    loss = ml_loss(m, make_batch([ex], m.vocab_size), lam=0.0).loss.item()
    assert abs(loss) < 1e-20


def test_coverage_term_hand_value():
    a, c = Tensor(np.array([0.3, 0.7])), Tensor(np.array([0.5, 0.2]))
    assert ad.sum(ad.minimum(a, c)).item() == pytest.approx(0.5)


def test_ml_loss_decomposes(tiny_model, tiny_example):
    batch = make_batch([tiny_example], tiny_model.vocab_size)
    out = ml_loss(tiny_model, batch, lam=1.0, keep_steps=True)
    gold = tiny_example.tgt_ext_ids
    terms = [-math.log(st.P.data[0, g]) + np.minimum(st.a.data[0], st.coverage.data[0]).sum()
             for st, g in zip(out.steps, gold)]
    assert out.loss.item() == pytest.approx(np.mean(terms), rel=1e-12)
    assert ml_loss(tiny_model, batch, lam=2.0).loss.item() > ml_loss(tiny_model, batch, lam=0.0).loss.item()


def test_ml_loss_batch_is_mean(tiny_model, tiny_vocab, tiny_example):
    other = encode_with_pointer(ExamplePair("b c d a".split(), ["d"]), tiny_vocab)
    one = ml_loss(tiny_model, make_batch([tiny_example], tiny_model.vocab_size)).loss.item()
    two = ml_loss(tiny_model, make_batch([other], tiny_model.vocab_size)).loss.item()
    both = ml_loss(tiny_model, make_batch([tiny_example, other], tiny_model.vocab_size)).loss.item()
    assert both == pytest.approx((one + two) / 2, rel=1e-12)


def test_ml_loss_flags_floor(tiny_vocab):
    m = Generator(len(tiny_vocab), 3, 4)
    ex = encode_with_pointer(ExamplePair(["a", "yy"], ["yy"]), tiny_vocab)
    assert ex.tgt_ext_ids[0] == len(tiny_vocab)
    out = ml_loss(m, make_batch([ex], m.vocab_size))
    assert out.floored == []
    m["ptr.b"].data[:] = 1e4  # p_gen == 1 exactly: copy-only ids get zero mass
    out = ml_loss(m, make_batch([ex], m.vocab_size))
    assert out.floored == [(0, 0)]
    assert math.isfinite(out.loss.item())


@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_ml_loss_grad_check(tiny_model, tiny_example, lam):
    batch = make_batch([tiny_example], tiny_model.vocab_size)
    assert len(tiny_example.src_ids) == 3 and len(tiny_example.headline) == 3
    for name, p in tiny_model.params.items():
        err = ad.grad_check(lambda: ml_loss(tiny_model, batch, lam).loss, p)
        assert err < 1e-4, name


# sampling


def test_sample_deterministic(tiny_model, tiny_example):
    a = sample(tiny_model, tiny_example, 6, seed=5)
    b = sample(tiny_model, tiny_example, 6, seed=5)
    assert a[0] == b[0]
    assert a[1].tobytes() == b[1].tobytes() and a[2].tobytes() == b[2].tobytes()
    assert len(a[0]) == len(a[1]) == len(a[2]) <= 6


def test_sample_logp_is_exact(tiny_model, tiny_example):
    toks, logp, _ = sample(tiny_model, tiny_example, 6, seed=2)
    assert logp.sum() == pytest.approx(sequence_logprob(tiny_model, tiny_example, toks), rel=1e-12)


def test_sample_one_hot_ignores_seed(tiny_vocab, tiny_example):
    m = zero_model(Generator(len(tiny_vocab), 3, 4))
    m["ptr.b"].data[:] = 60.0
    m["out.b_prime"].data[EOS] = 80.0
    for seed in range(5):
        assert sample(m, tiny_example, 5, seed=seed)[0] == [EOS]


def test_sample_frequencies_match_distribution(tiny_model, tiny_example):
    n = 10000
    batch = make_batch([tiny_example] * n, tiny_model.vocab_size)
    with ad.no_grad():
        P = ml_loss(tiny_model, make_batch([tiny_example], tiny_model.vocab_size), keep_steps=True).steps[0].P.data[0]
        out = sample_batch(tiny_model, batch, 1, np.random.default_rng(0))
    first = np.bincount([t[0] for t in out.tokens], minlength=P.size)
    for k, p in enumerate(P):
        lo, hi = binomial_bounds(p, n)
        assert lo <= first[k] <= hi, (k, p, first[k])


def test_sample_batch_mask_stops_after_eos(tiny_model, tiny_example):
    batch = make_batch([tiny_example] * 20, tiny_model.vocab_size)
    out = sample_batch(tiny_model, batch, 5, np.random.default_rng(1))
    for row, toks in enumerate(out.tokens):
        assert out.mask[row].sum() == len(toks)
        assert EOS not in toks[:-1]


# beam search


def _beam_case(seed, n_tok=4, max_len=3):
    vocab = build_vocab([ExamplePair(["a"], ["a"])], 5)
    m = Generator(n_tok, 3, 4, seed=seed, init_scale=1.5)
    ex = EncodedExample([1, 1], [1, 1], [], [], encode_with_pointer(ExamplePair(["a"], ["a"]), vocab).ext_vocab)
    return m, ex


def brute_force(model, ex, n_tok, max_len):
    # [EOS] alone is always finished, so the search never falls back to unfinished hypotheses
    best = max(finished_sequences(n_tok, max_len, EOS), key=lambda s: sequence_logprob(model, ex, s))
    return best, sequence_logprob(model, ex, best)


@pytest.mark.parametrize("seed", range(5))
def test_beam_matches_brute_force(seed):
    m, ex = _beam_case(seed)
    seq, score = brute_force(m, ex, 4, 3)
    hyp = beam_search(m, ex, beam=64, max_len=3)
    assert hyp.tokens == seq
    assert hyp.logp == pytest.approx(score, abs=1e-12)
    assert hyp.logp == pytest.approx(sequence_logprob(m, ex, hyp.tokens), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_is_greedy(seed, tiny_model, tiny_example):
    m, ex = _beam_case(seed)
    assert beam_search(m, ex, beam=1, max_len=3).tokens == greedy_decode(m, ex, 3).tokens
    assert beam_search(tiny_model, tiny_example, 1, 6).tokens == greedy_decode(tiny_model, tiny_example, 6).tokens


def test_beam_with_copy_token():
    vocab = build_vocab([ExamplePair(["a"], ["a"])], 5)
    ex = encode_with_pointer(ExamplePair(["a", "zz"], ["zz"]), vocab)
    for seed in range(3):
        m = Generator(len(vocab), 3, 4, seed=seed, init_scale=1.5)
        n_ext = len(vocab) + 1
        seq, score = brute_force(m, ex, n_ext, 2)
        hyp = beam_search(m, ex, beam=n_ext ** 2, max_len=2)
        assert hyp.tokens == seq


def test_beam_peaked_model_returns_argmax_path(tiny_vocab):
    ex = encode_with_pointer(ExamplePair(["a", "zz"], ["zz"]), tiny_vocab)
    m = zero_model(Generator(len(tiny_vocab), 3, 4))
    m["ptr.b"].data[:] = -60.0  # copy only: equal mass on "a" and "zz"
    m["attn.v"].data[:] = 0.0
    hyp = beam_search(m, ex, beam=5, max_len=3)
    # no EOS is ever reachable, so the best unfinished hypothesis of full length is returned
    assert len(hyp.tokens) == 3
    assert hyp.logp == pytest.approx(3 * math.log(0.5), abs=1e-9)
    assert [ex.ext_vocab.token(t) for t in hyp.tokens] == ["a"] * 3


def test_beam_rejects_zero_width(tiny_model, tiny_example):
    with pytest.raises(ValueError):
        beam_search(tiny_model, tiny_example, beam=0)


def test_decoder_step_embeds_copied_oov_as_unk(tiny_model, tiny_example):
    batch = make_batch([tiny_example], tiny_model.vocab_size)
    enc = encode(tiny_model, batch.src, batch.src_mask, batch.src_ext, batch.n_ext)
    oov = tiny_model.vocab_size
    a = decoder_step(tiny_model, enc, enc.s0, enc.c0, initial_coverage(enc), np.array([oov]))
    b = decoder_step(tiny_model, enc, enc.s0, enc.c0, initial_coverage(enc), np.array([1]))
    assert a.P.data.tobytes() == b.P.data.tobytes()
