"""Pointer-generator seq2seq with coverage.

Everything runs on padded batches: B examples, L source positions, T target
steps.  Single examples are batches of one.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .textcore import BOS, EOS, PAD, UNK

NEG_INF = -1e9


class Generator:
    def __init__(self, vocab_size, emb_size=16, hidden_size=32, seed=0, init_scale=0.1):
        self.vocab_size = vocab_size
        self.emb_size = emb_size
        self.hidden_size = hidden_size
        V, E, H = vocab_size, emb_size, hidden_size
        A = 2 * H
        shapes = {
            "emb": (V, E),
            "enc.fw.W": (E + H, 4 * H),
            "enc.fw.b": (4 * H,),
            "enc.bw.W": (E + H, 4 * H),
            "enc.bw.b": (4 * H,),
            "bridge.W_h": (2 * H, H),
            "bridge.b_h": (H,),
            "bridge.W_c": (2 * H, H),
            "bridge.b_c": (H,),
            "dec.W": (E + H, 4 * H),
            "dec.b": (4 * H,),
            "attn.W_h": (2 * H, A),
            "attn.W_s": (H, A),
            "attn.w_c": (A,),
            "attn.b_attn": (A,),
            "attn.v": (A, 1),
            "out.V": (3 * H, H),
            "out.b": (H,),
            "out.V_prime": (H, V),
            "out.b_prime": (V,),
            "ptr.w_h": (2 * H, 1),
            "ptr.w_s": (H, 1),
            "ptr.w_x": (E, 1),
            "ptr.b": (1,),
        }
        rng = np.random.default_rng(seed)
        self.params = {}
        for name in sorted(shapes):
            data = rng.uniform(-init_scale, init_scale, size=shapes[name])
            self.params[name] = Tensor(data, requires_grad=True, name=name)

    def __getitem__(self, name):
        return self.params[name]

    @property
    def feature_size(self):
        """Width of the o_t feature consumed by the RL baseline."""
        return self.hidden_size

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays):
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model {p.shape}")
            p.data = np.array(arrays[k], dtype=ad.DTYPE)

    @classmethod
    def from_state_dict(cls, arrays):
        V, E = arrays["emb"].shape
        H = arrays["bridge.b_h"].shape[0]
        g = cls(V, E, H)
        g.load_state_dict(arrays)
        return g


# batching


@dataclass
class Batch:
    src: np.ndarray  # (B, L) base ids
    src_ext: np.ndarray  # (B, L) extended ids
    src_mask: np.ndarray  # (B, L) 1.0 on real tokens
    n_ext: int  # width of the extended vocabulary for this batch
    tgt_in: np.ndarray = None  # (B, T)
    tgt_out: np.ndarray = None  # (B, T)
    tgt_mask: np.ndarray = None  # (B, T)
    examples: list = field(default_factory=list)

    @property
    def size(self):
        return self.src.shape[0]


def make_batch(examples, vocab_size):
    B = len(examples)
    L = max(len(ex.src_ids) for ex in examples)
    if L == 0:
        raise ValueError("empty source sequence")
    src = np.full((B, L), PAD, dtype=np.int64)
    src_ext = np.full((B, L), PAD, dtype=np.int64)
    src_mask = np.zeros((B, L))
    for b, ex in enumerate(examples):
        if not ex.src_ids:
            raise ValueError("empty source sequence")
        n = len(ex.src_ids)
        src[b, :n] = ex.src_ids
        src_ext[b, :n] = ex.src_ext_ids
        src_mask[b, :n] = 1.0
    n_ext = vocab_size + max(len(ex.ext_vocab.article_oovs) for ex in examples)
    batch = Batch(src, src_ext, src_mask, n_ext, examples=list(examples))
    if all(ex.tgt_ext_ids for ex in examples):
        T = max(len(ex.tgt_ext_ids) for ex in examples)
        batch.tgt_in = np.full((B, T), PAD, dtype=np.int64)
        batch.tgt_out = np.full((B, T), PAD, dtype=np.int64)
        batch.tgt_mask = np.zeros((B, T))
        for b, ex in enumerate(examples):
            n = len(ex.tgt_ext_ids)
            batch.tgt_in[b, :n] = ex.tgt_ids
            batch.tgt_out[b, :n] = ex.tgt_ext_ids
            batch.tgt_mask[b, :n] = 1.0
    return batch


# network pieces


def lstm_cell(x, h, c, W, b):
    H = h.shape[-1]
    z = ad.concat([x, h], axis=-1) @ W + b
    gates, cand = ad.split(z, [3 * H, H], axis=-1)
    i, f, o = ad.split(ad.sigmoid(gates), [H, H, H], axis=-1)
    c_new = f * c + i * ad.tanh(cand)
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


@dataclass
class EncoderOutput:
    h: Tensor  # (B, L, 2H)
    feat: Tensor  # (B, L, A): h @ W_h, reused at every decoder step
    s0: Tensor
    c0: Tensor
    src_ext: np.ndarray
    mask: np.ndarray
    n_ext: int


def encode(model, src, src_mask, src_ext=None, n_ext=None):
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    src_mask = np.atleast_2d(np.asarray(src_mask, dtype=float))
    B, L = src.shape
    if L == 0:
        raise ValueError("encode: empty input")
    H = model.hidden_size
    x = ad.gather(model["emb"], src)  # (B, L, E)
    zeros = Tensor(np.zeros((B, H)))
    steps = [x[:, t] for t in range(L)]
    masks = [src_mask[:, t:t + 1] for t in range(L)]

    def run(direction, order):
        W, b = model[f"enc.{direction}.W"], model[f"enc.{direction}.b"]
        h, c = zeros, zeros
        outs = [None] * L
        for t in order:
            hn, cn = lstm_cell(steps[t], h, c, W, b)
            m = masks[t]
            if m.all():
                h, c = hn, cn
            else:
                h = h + m * (hn - h)
                c = c + m * (cn - c)
            outs[t] = h
        return outs, h, c

    fw, hf, cf = run("fw", range(L))
    bw, hb, cb = run("bw", range(L - 1, -1, -1))
    per_pos = [ad.reshape(ad.concat([f, r], axis=-1), (B, 1, 2 * H)) for f, r in zip(fw, bw)]
    h_all = ad.concat(per_pos, axis=1) if L > 1 else per_pos[0]
    s0 = ad.concat([hf, hb], axis=-1) @ model["bridge.W_h"] + model["bridge.b_h"]
    c0 = ad.concat([cf, cb], axis=-1) @ model["bridge.W_c"] + model["bridge.b_c"]
    feat = h_all @ model["attn.W_h"]
    if src_ext is None:
        src_ext = src
    if n_ext is None:
        n_ext = max(model.vocab_size, int(np.max(src_ext)) + 1)
    return EncoderOutput(h_all, feat, s0, c0, np.atleast_2d(src_ext), src_mask, n_ext)


def encode_batch(model, batch):
    return encode(model, batch.src, batch.src_mask, batch.src_ext, batch.n_ext)


def coverage_update(history, length):
    """Sum of past attention vectors (zeros when there is no history)."""
    c = np.zeros(length)
    for a in history:
        c = c + np.asarray(a)
    return c


def attend(enc, s, cov, model):
    """Attention weights (B, L) and context vector (B, 2H)."""
    B, L, A = enc.feat.shape
    dec = ad.reshape(s @ model["attn.W_s"], (B, 1, A))
    cov_feat = ad.reshape(cov, (B, L, 1)) * model["attn.w_c"]
    e = ad.tanh(enc.feat + dec + cov_feat + model["attn.b_attn"]) @ model["attn.v"]
    e = ad.reshape(e, (B, L))
    if not enc.mask.all():
        e = e + np.where(enc.mask > 0, 0.0, NEG_INF)
    a = ad.softmax(e)
    ctx = ad.reshape(ad.reshape(a, (B, 1, L)) @ enc.h, (B, enc.h.shape[-1]))
    return a, ctx


@dataclass
class DecoderStep:
    s: Tensor
    cell: Tensor
    a: Tensor
    h_star: Tensor
    coverage: Tensor  # coverage before this step's attention (sum over earlier steps)
    p_gen: Tensor  # (B, 1)
    p_vocab: Tensor
    P: Tensor  # (B, n_ext)
    o: Tensor

    @property
    def next_coverage(self):
        return self.coverage + self.a


def output_distribution(s, h_star, x, a, enc, model, p_gen_override=None):
    """Eqs. for o_t, P_vocab, p_gen and the copy mixture over the extended vocab."""
    o = ad.concat([s, h_star], axis=-1) @ model["out.V"] + model["out.b"]
    p_vocab = ad.softmax(o @ model["out.V_prime"] + model["out.b_prime"])
    if p_gen_override is None:
        logit = h_star @ model["ptr.w_h"] + s @ model["ptr.w_s"] + x @ model["ptr.w_x"] + model["ptr.b"]
        p_gen = ad.sigmoid(logit)
    else:
        p_gen = Tensor(np.full((s.shape[0], 1), float(p_gen_override)))
    gen = ad.pad_last(p_gen * p_vocab, enc.n_ext - model.vocab_size)
    copy = ad.scatter_add((1.0 - p_gen) * a, enc.src_ext, enc.n_ext)
    return o, p_vocab, p_gen, gen + copy


def decoder_step(model, enc, s, cell, cov, x_ids, p_gen_override=None):
    x = ad.gather(model["emb"], embed_ids(x_ids, model.vocab_size))
    s, cell = lstm_cell(x, s, cell, model["dec.W"], model["dec.b"])
    a, h_star = attend(enc, s, cov, model)
    o, p_vocab, p_gen, P = output_distribution(s, h_star, x, a, enc, model, p_gen_override)
    return DecoderStep(s, cell, a, h_star, cov, p_gen, p_vocab, P, o)


def embed_ids(ids, vocab_size):
    """Copied OOV ids map to UNK for the next decoder input."""
    ids = np.asarray(ids, dtype=np.int64)
    return np.where(ids >= vocab_size, UNK, ids)


def initial_coverage(enc):
    return Tensor(np.zeros(enc.mask.shape))


@dataclass
class MLOutput:
    loss: Tensor
    steps: List[DecoderStep]
    floored: List[tuple]  # (batch row, step) where P(gold) hit the log floor


def ml_loss(model, batch, lam=1.0, keep_steps=False):
    """Teacher-forced loss: per example (1/T) sum_t [-log P(w_t) + lam * sum_i min(a_i, c_i)],
    averaged over the batch."""
    if lam < 0:
        raise ValueError("coverage weight must be >= 0")
    enc = encode_batch(model, batch)
    B, T = batch.tgt_out.shape
    lengths = batch.tgt_mask.sum(axis=1)
    weights = batch.tgt_mask / lengths[:, None] / B
    s, cell, cov = enc.s0, enc.c0, initial_coverage(enc)
    total = None
    steps, floored = [], []
    for t in range(T):
        st = decoder_step(model, enc, s, cell, cov, batch.tgt_in[:, t])
        gold = ad.take_last(st.P, batch.tgt_out[:, t])
        for b in np.nonzero((gold.data < ad.LOG_FLOOR) & (batch.tgt_mask[:, t] > 0))[0]:
            floored.append((int(b), t))
        step_loss = -ad.log(gold, floor=ad.LOG_FLOOR)
        if lam > 0:
            step_loss = step_loss + lam * ad.sum(ad.minimum(st.a, cov), axis=-1)
        term = ad.sum(step_loss * weights[:, t])
        total = term if total is None else total + term
        if keep_steps:
            steps.append(st)
        s, cell, cov = st.s, st.cell, st.next_coverage
    return MLOutput(total, steps, floored)


# decoding


@dataclass
class SampleOutput:
    tokens: List[List[int]]  # per row, extended ids, EOS included when emitted
    logp: List[Tensor]  # per step (B,)
    features: List[Tensor]  # per step o_t (B, H)
    mask: np.ndarray  # (B, T) 1.0 while the row is still generating


def sample_batch(model, batch, max_len, rng):
    """Ancestral sampling from P(w), recording a differentiable log P per step."""
    enc = encode_batch(model, batch)
    B = batch.size
    s, cell, cov = enc.s0, enc.c0, initial_coverage(enc)
    prev = np.full(B, BOS, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    tokens = [[] for _ in range(B)]
    logps, feats, masks = [], [], []
    for _ in range(max_len):
        st = decoder_step(model, enc, s, cell, cov, prev)
        P = st.P.data
        u = rng.random(B)
        cdf = np.cumsum(P, axis=1)
        pick = np.array([min(int(np.searchsorted(cdf[b], u[b] * cdf[b, -1], side="right")), P.shape[1] - 1)
                         for b in range(B)])
        # never pick a zero-probability entry through rounding at the cdf edge
        for b in range(B):
            while P[b, pick[b]] == 0.0 and pick[b] > 0:
                pick[b] -= 1
        logps.append(ad.log(ad.take_last(st.P, pick), floor=ad.LOG_FLOOR))
        feats.append(st.o)
        masks.append(alive.astype(float))
        for b in range(B):
            if alive[b]:
                tokens[b].append(int(pick[b]))
        alive = alive & (pick != EOS)
        prev = pick
        s, cell, cov = st.s, st.cell, st.next_coverage
        if not alive.any():
            break
    return SampleOutput(tokens, logps, feats, np.stack(masks, axis=1))


def sample(model, example, max_len, seed=0):
    """Sample one headline; returns (ext ids, per-step log P, per-step o_t) as numpy."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    batch = make_batch([example], model.vocab_size)
    with ad.no_grad():
        out = sample_batch(model, batch, max_len, rng)
    T = len(out.tokens[0])
    logp = np.array([lp.data[0] for lp in out.logp[:T]])
    feats = np.stack([f.data[0] for f in out.features[:T]])
    return out.tokens[0], logp, feats


@dataclass
class BeamHypothesis:
    tokens: List[int]
    logp: float
    s: np.ndarray = None
    cell: np.ndarray = None
    coverage: np.ndarray = None

    @property
    def finished(self):
        return bool(self.tokens) and self.tokens[-1] == EOS


def _tile(enc, k):
    rows = np.zeros(k, dtype=np.int64)
    return EncoderOutput(
        ad.Tensor(enc.h.data[rows]), ad.Tensor(enc.feat.data[rows]), None, None,
        enc.src_ext[rows], enc.mask[rows], enc.n_ext,
    )


def step_logprobs(model, enc, hyps, p_gen_override=None):
    """Run one decoder step for a list of hypotheses; returns (log P (k, n_ext), step)."""
    k = len(hyps)
    tiled = _tile(enc, k)
    s = Tensor(np.stack([h.s for h in hyps]))
    cell = Tensor(np.stack([h.cell for h in hyps]))
    cov = Tensor(np.stack([h.coverage for h in hyps]))
    prev = np.array([h.tokens[-1] if h.tokens else BOS for h in hyps])
    st = decoder_step(model, tiled, s, cell, cov, prev, p_gen_override)
    return np.log(np.maximum(st.P.data, ad.LOG_FLOOR)), st


def _root(model, example):
    batch = make_batch([example], model.vocab_size)
    enc = encode_batch(model, batch)
    root = BeamHypothesis([], 0.0, enc.s0.data[0], enc.c0.data[0], np.zeros(batch.src.shape[1]))
    return enc, root


def beam_search(model, example, beam=5, max_len=20):
    """Length-unnormalized beam search; best finished hypothesis, else best unfinished."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    with ad.no_grad():
        enc, root = _root(model, example)
        live, finished = [root], []
        for t in range(max_len):
            logp, st = step_logprobs(model, enc, live)
            scores = np.array([h.logp for h in live])[:, None] + logp
            flat = np.argsort(-scores, axis=None, kind="stable")[:beam]
            new_live = []
            for f in flat:
                r, tok = divmod(int(f), scores.shape[1])
                hyp = BeamHypothesis(live[r].tokens + [tok], float(scores[r, tok]),
                                     st.s.data[r], st.cell.data[r], st.next_coverage.data[r])
                (finished if tok == EOS else new_live).append(hyp)
            live = new_live
            if not live:
                break
            # scores only decrease, so no live hypothesis can overtake this
            if finished and max(h.logp for h in finished) >= max(h.logp for h in live):
                break
    pool = finished or live
    best = max(pool, key=lambda h: h.logp)
    return best


def greedy_decode(model, example, max_len=20):
    with ad.no_grad():
        enc, hyp = _root(model, example)
        for _ in range(max_len):
            logp, st = step_logprobs(model, enc, [hyp])
            tok = int(np.argmax(logp[0]))
            hyp = BeamHypothesis(hyp.tokens + [tok], hyp.logp + float(logp[0, tok]),
                                 st.s.data[0], st.cell.data[0], st.next_coverage.data[0])
            if tok == EOS:
                break
    return hyp


def sequence_logprob(model, example, tokens):
    """Exact log-probability of a token sequence under the decoder (used by oracles)."""
    with ad.no_grad():
        enc, hyp = _root(model, example)
        for tok in tokens:
            logp, st = step_logprobs(model, enc, [hyp])
            hyp = BeamHypothesis(hyp.tokens + [tok], hyp.logp + float(logp[0, tok]),
                                 st.s.data[0], st.cell.data[0], st.next_coverage.data[0])
    return hyp.logp
