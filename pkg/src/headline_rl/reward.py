"""ROUGE-1/2/L, repetition-rate and the repetition-normalized adversarial reward."""
from collections import Counter
from dataclasses import dataclass

from .textcore import RESERVED

REWARD_KINDS = ("ROUGE", "ROUGE-RP", "ROUGE-RP-ADV")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f: float


ZERO = RougeScore(0.0, 0.0, 0.0)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def strip_special(tokens):
    return [t for t in tokens if t not in RESERVED]


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(hyp, ref, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    h, r = ngrams(strip_special(hyp), n), ngrams(strip_special(ref), n)
    nh, nr = sum(h.values()), sum(r.values())
    if nh == 0 or nr == 0:
        return ZERO
    overlap = sum(min(c, r[g]) for g, c in h.items())
    p, rec = overlap / nh, overlap / nr
    return RougeScore(p, rec, _f1(p, rec))


def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp, ref):
    hyp, ref = strip_special(hyp), strip_special(ref)
    if not hyp or not ref:
        return ZERO
    ell = lcs_length(hyp, ref)
    p, r = ell / len(hyp), ell / len(ref)
    return RougeScore(p, r, _f1(p, r))


def repetition_rate(hyp):
    hyp = strip_special(hyp)
    if not hyp:
        return 0.0
    return 1.0 - len(set(hyp)) / len(hyp)


def rouge_rp(hyp, ref):
    return (1.0 - repetition_rate(hyp)) * rouge_l(hyp, ref).f


def rouge_rp_adv(rp, d, beta):
    """Weighted harmonic mean of ROUGE-RP and the discriminator score."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    b2 = beta * beta
    denom = rp + b2 * d
    if denom == 0:
        return 0.0
    return (1 + b2) * rp * d / denom


@dataclass(frozen=True)
class RewardBreakdown:
    rouge_l_f: float
    repetition_rate: float
    rouge_rp: float
    d_score: float | None
    beta: float
    final_reward: float

    def as_dict(self):
        return {
            "rouge_l_f": self.rouge_l_f,
            "repetition_rate": self.repetition_rate,
            "rouge_rp": self.rouge_rp,
            "d_score": self.d_score,
            "beta": self.beta,
            "final_reward": self.final_reward,
        }


def reward_breakdown(hyp, ref, kind="ROUGE-RP-ADV", beta=2000.0, d_score=None):
    if kind not in REWARD_KINDS:
        raise ValueError(f"unknown reward kind {kind!r}")
    rl = rouge_l(hyp, ref).f
    rep = repetition_rate(hyp)
    rp = (1.0 - rep) * rl
    if kind == "ROUGE":
        final = rl
    elif kind == "ROUGE-RP":
        final = rp
    else:
        if d_score is None:
            raise ValueError("ROUGE-RP-ADV reward needs a discriminator score")
        final = rouge_rp_adv(rp, d_score, beta)
    return RewardBreakdown(rl, rep, rp, d_score, beta, final)


def score_corpus(hyps, refs, articles=None, d_scorer=None, beta=2000.0):
    """Mean ROUGE-1/2/L f-scores and repetition-rate over aligned lists.

    ``d_scorer(article, hyp) -> float`` adds ``d_mean`` and ``adv_reward_mean``.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    if d_scorer is not None and (articles is None or len(articles) != len(hyps)):
        raise ValueError("length mismatch: articles must align with hypotheses")
    n = len(hyps)
    totals = Counter()
    for i, (h, r) in enumerate(zip(hyps, refs)):
        totals["rouge1_f"] += rouge_n(h, r, 1).f
        totals["rouge2_f"] += rouge_n(h, r, 2).f
        totals["rougeL_f"] += rouge_l(h, r).f
        totals["repetition_rate"] += repetition_rate(h)
        if d_scorer is not None:
            d = d_scorer(articles[i], h)
            totals["d_mean"] += d
            totals["adv_reward_mean"] += rouge_rp_adv(rouge_rp(h, r), d, beta)
    keys = ["rouge1_f", "rouge2_f", "rougeL_f", "repetition_rate"]
    if d_scorer is not None:
        keys += ["d_mean", "adv_reward_mean"]
    return {k: (totals[k] / n if n else 0.0) for k in keys}


def format_report(report):
    lines = ["metric            value", "----------------  --------"]
    lines += [f"{k:<16}  {v:8.4f}" for k, v in report.items()]
    lines += [f"{k}={v:.6f}" for k, v in report.items()]
    return "\n".join(lines)
