import numpy as np
import pytest
from hypothesis import given, strategies as st

from headline_rl.reward import (
    repetition_rate, reward_breakdown, rouge_l, rouge_n, rouge_rp, rouge_rp_adv, score_corpus,
)
from oracles import f1_from_lcs, lcs_brute

CITI_HYP = "sports column : citigroup to citigroup at citigroup".split()
CITI_REF = "citigroup embarks on plan to shed weak assets".split()
BENSON_HYP = "benson to the for ford".split()
BENSON_REF = "benson penalized for his bad timing".split()


def test_rouge_n():
    s = rouge_n("a b a".split(), "a c".split(), 1)
    assert (s.precision, s.recall) == pytest.approx((1 / 3, 1 / 2))
    assert s.f == pytest.approx(0.4)
    assert rouge_n("a b".split(), "a b".split(), 2).f == 1.0
    assert rouge_n("a b".split(), "c d".split(), 1).f == 0.0
    assert rouge_n(["a"], ["a"], 2).f == 0.0
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 0)


def test_rouge_l_examples():
    assert rouge_l(CITI_HYP, CITI_REF).f == pytest.approx(0.25, abs=1e-12)
    assert rouge_l(CITI_REF, CITI_REF).f == 1.0
    s = rouge_l(BENSON_HYP, BENSON_REF)
    assert (s.precision, s.recall) == pytest.approx((0.4, 1 / 3))
    assert s.f == pytest.approx(0.3636, abs=1e-4)
    assert rouge_l([], ["a"]).f == 0.0 and rouge_l(["a"], []).f == 0.0


def test_special_tokens_stripped():
    assert rouge_l(["<s>", "a", "</s>"], ["a"]).f == 1.0
    assert repetition_rate(["a", "</s>", "</s>"]) == 0.0


seqs = st.lists(st.sampled_from("abcd"), max_size=8)


@given(seqs, seqs)
def test_rouge_l_oracle_and_symmetry(h, r):
    f = rouge_l(h, r).f
    assert f == f1_from_lcs(lcs_brute(h, r), len(h), len(r))
    assert f == pytest.approx(rouge_l(r, h).f, abs=1e-15)
    assert 0.0 <= f <= 1.0
    assert rouge_rp(h, r) <= f
    if h:
        assert 0.0 <= repetition_rate(h) <= 1 - 1 / len(h) + 1e-15


def test_repetition_rate():
    assert repetition_rate("a b c".split()) == 0.0
    assert repetition_rate(CITI_HYP) == pytest.approx(0.25)
    for n in range(1, 6):
        assert repetition_rate(["x"] * n) == pytest.approx(1 - 1 / n)
    assert repetition_rate([]) == 0.0


def test_rouge_rp():
    assert rouge_rp(BENSON_HYP, BENSON_REF) == rouge_l(BENSON_HYP, BENSON_REF).f
    # F 0.5 from P=R=0.5, repetition 0.4 from 5 tokens with 3 unique
    hyp, ref = "a a a b c".split(), "a d e f g h".split()
    assert repetition_rate(hyp) == pytest.approx(0.4)
    assert rouge_l(hyp, ref).f == pytest.approx(2 * 0.2 * (1 / 6) / (0.2 + 1 / 6))
    assert rouge_rp(hyp, ref) == pytest.approx(0.6 * rouge_l(hyp, ref).f)
    # repeating a correct token: ROUGE-L stays, the factor shrinks
    assert rouge_l(["a", "a"], ["a"]).f == pytest.approx(2 / 3)
    assert rouge_rp(["a", "a"], ["a"]) == pytest.approx(0.5 * 2 / 3)
    assert rouge_rp(["a", "a", "a"], ["a"]) == pytest.approx((1 / 3) * 0.5)


def test_rouge_rp_adv():
    for x in (0.1, 0.5, 1.0):
        assert rouge_rp_adv(x, x, 3.0) == pytest.approx(x)
    assert rouge_rp_adv(0.0, 0.7, 1.0) == 0.0
    assert rouge_rp_adv(0.0, 0.0, 1.0) == 0.0
    assert rouge_rp_adv(0.5, 0.8, 1.0) == pytest.approx(0.8 / 1.3)
    with pytest.raises(ValueError):
        rouge_rp_adv(0.5, 0.5, 0.0)


unit = st.floats(0.01, 1.0)


@given(unit, unit, st.sampled_from([0.5, 1.0, 2000.0]))
def test_adv_bounds_and_monotone(rp, d, beta):
    v = rouge_rp_adv(rp, d, beta)
    assert min(rp, d) - 1e-12 <= v <= max(rp, d) + 1e-12
    assert rouge_rp_adv(min(rp + 0.01, 1), d, beta) >= v - 1e-12
    assert rouge_rp_adv(rp, min(d + 0.01, 1), beta) >= v - 1e-12


def test_breakdown_reproduces_final_reward():
    b = reward_breakdown(CITI_HYP, CITI_REF, "ROUGE-RP-ADV", 1.0, 0.8)
    assert b.final_reward == pytest.approx(rouge_rp_adv(b.rouge_rp, b.d_score, b.beta), abs=1e-12)
    assert b.rouge_rp == pytest.approx(0.1875)
    assert reward_breakdown(CITI_HYP, CITI_REF, "ROUGE").final_reward == pytest.approx(0.25)
    assert set(b.as_dict()) == {"rouge_l_f", "repetition_rate", "rouge_rp", "d_score", "beta", "final_reward"}
    with pytest.raises(ValueError):
        reward_breakdown(CITI_HYP, CITI_REF, "ROUGE-RP-ADV")
    with pytest.raises(ValueError):
        reward_breakdown(CITI_HYP, CITI_REF, "BLEU")


def test_score_corpus():
    rep = score_corpus([["a", "a"]], [["a", "a"]])
    assert rep["rouge1_f"] == rep["rouge2_f"] == rep["rougeL_f"] == 1.0
    assert rep["repetition_rate"] == 0.5
    hyps, refs = [CITI_HYP, ["x"]], [CITI_REF, ["x"]]
    rep = score_corpus(hyps, refs)
    assert rep["rougeL_f"] == pytest.approx((0.25 + 1.0) / 2)
    assert rep["repetition_rate"] == pytest.approx(0.125)
    assert list(rep) == ["rouge1_f", "rouge2_f", "rougeL_f", "repetition_rate"]
    single = score_corpus([CITI_HYP], [CITI_REF])
    assert single["rougeL_f"] == pytest.approx(0.25) and single["repetition_rate"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        score_corpus([["a"]], [])


def test_score_corpus_with_scorer():
    rep = score_corpus([["a"]], [["a"]], [["art"]], lambda a, h: 0.5, beta=1.0)
    assert rep["d_mean"] == 0.5
    assert rep["adv_reward_mean"] == pytest.approx(2 * 0.5 / 1.5)
    assert list(rep)[-2:] == ["d_mean", "adv_reward_mean"]


def test_reward_algebra_vectorised():
    rng = np.random.default_rng(0)
    rp, d = rng.random(2000), rng.uniform(0.1, 1.0, 2000)
    assert max(abs(rouge_rp_adv(a, b, 2000.0) - a) for a, b in zip(rp, d)) <= 1e-3
