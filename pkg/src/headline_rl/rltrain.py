"""REINFORCE with a per-step linear baseline, plus the ML and discriminator phases."""
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .discriminator import Discriminator, d_train_step
from .generator import Generator, beam_search, make_batch, ml_loss, sample_batch
from .reward import REWARD_KINDS, reward_breakdown, rouge_n
from .textcore import decode_ids, encode_with_pointer

log = logging.getLogger(__name__)

DISC_MODES = ("continual", "frozen")


@dataclass
class RLConfig:
    reward_kind: str = "ROUGE-RP-ADV"
    beta: float = 2000.0
    alpha: float = 0.97
    lam: float = 1.0
    lr: float = 1e-4
    lr_baseline: float = 1e-3
    lr_disc: float = 1e-3
    max_dec_len: int = 20
    clip_norm: float | None = 2.0
    disc_mode: str = "continual"
    optimizer: str = "adam"

    def __post_init__(self):
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.disc_mode not in DISC_MODES:
            raise ValueError(f"disc_mode must be one of {DISC_MODES}")


class BaselineRegressor:
    """R_hat_t = W_r . o_t + b_r on a detached decoder feature."""

    def __init__(self, feature_size):
        self.params = {
            "baseline.W_r": Tensor(np.zeros((feature_size, 1)), requires_grad=True, name="baseline.W_r"),
            "baseline.b_r": Tensor(np.zeros(1), requires_grad=True, name="baseline.b_r"),
        }

    def predict(self, o):
        o = o.detach() if isinstance(o, Tensor) else Tensor(np.atleast_2d(o))
        z = o @ self.params["baseline.W_r"] + self.params["baseline.b_r"]
        return ad.reshape(z, z.shape[:-1])

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays):
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=ad.DTYPE)


def baseline_predict(baseline, o):
    with ad.no_grad():
        return baseline.predict(Tensor(np.atleast_2d(o))).data.reshape(-1)[0]


def baseline_loss(R, preds):
    """(1/T) sum_t (R - R_hat_t)^2 for one sentence; ``preds`` may hold tensors."""
    if len(preds) == 0:
        raise ValueError("need at least one step")
    terms = [(R - p) * (R - p) for p in preds]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(preds))


def rl_loss(logps, R, preds):
    """-(1/T) sum_t (R - R_hat_t) log P(w_t); R_hat is a constant here."""
    if len(logps) != len(preds):
        raise ValueError("log-prob and baseline lengths differ")
    T = len(logps)
    adv = [R - float(p.data if isinstance(p, Tensor) else p) for p in preds]
    terms = [lp * a for lp, a in zip(logps, adv)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (-1.0 / T)


def compute_reward(hyp, ref, article, config, discriminator=None):
    d = None
    if config.reward_kind == "ROUGE-RP-ADV":
        if discriminator is None:
            raise ValueError("ROUGE-RP-ADV reward requires a discriminator")
        d = discriminator.score(article, hyp if hyp else ["</s>"])
    return reward_breakdown(hyp, ref, config.reward_kind, config.beta, d)


def _make_opt(params, kind, lr):
    if kind == "adam":
        return ad.Adam(params, lr)
    if kind == "sgd":
        return ad.SGD(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def apply_update(params, opt, loss, clip_norm):
    grads = ad.gradients(loss, params)
    norm = None
    if clip_norm:
        grads, norm = ad.clip_by_global_norm(grads, clip_norm)
    opt.step(grads)
    return grads, norm


class MLTrainer:
    def __init__(self, generator, lr=1e-4, lam=1.0, clip_norm=2.0, optimizer="adam"):
        self.generator = generator
        self.lam = lam
        self.clip_norm = clip_norm
        self.opt = _make_opt(generator.params, optimizer, lr)

    def step(self, examples):
        batch = make_batch(examples, self.generator.vocab_size)
        out = ml_loss(self.generator, batch, self.lam)
        apply_update(self.generator.params, self.opt, out.loss, self.clip_norm)
        return out.loss.item()


class RLTrainer:
    def __init__(self, generator, config, rng, discriminator=None, baseline=None):
        if config.reward_kind == "ROUGE-RP-ADV" and discriminator is None:
            raise ValueError("ROUGE-RP-ADV reward requires a discriminator")
        self.generator = generator
        self.config = config
        self.rng = rng
        self.discriminator = discriminator
        self.baseline = baseline or BaselineRegressor(generator.feature_size)
        self.opt = _make_opt(generator.params, config.optimizer, config.lr)
        self.baseline_opt = ad.Adam(self.baseline.params, config.lr_baseline)
        self.disc_opt = ad.Adam(discriminator.params, config.lr_disc) if discriminator else None

    def losses(self, examples):
        """Sample, score, and build (generator objective, baseline loss, metrics)."""
        cfg = self.config
        gen = self.generator
        batch = make_batch(examples, gen.vocab_size)
        out = sample_batch(gen, batch, cfg.max_dec_len, self.rng)
        B = batch.size
        lengths = out.mask.sum(axis=1)
        weights = out.mask / lengths[:, None] / B
        hyps = [decode_ids(toks, ex.ext_vocab) for toks, ex in zip(out.tokens, examples)]
        breakdown = [compute_reward(h, ex.headline, ex.article, cfg, self.discriminator)
                     for h, ex in zip(hyps, examples)]
        R = np.array([b.final_reward for b in breakdown])

        rl_total, b_total = None, None
        for t, (lp, feat) in enumerate(zip(out.logp, out.features)):
            pred = self.baseline.predict(feat)
            adv = R - pred.data
            rl_term = ad.sum(lp * (adv * weights[:, t]))
            err = R - pred
            b_term = ad.sum(err * err * weights[:, t])
            rl_total = rl_term if rl_total is None else rl_total + rl_term
            b_total = b_term if b_total is None else b_total + b_term
        rl_total = -rl_total

        objective = ad.scale(rl_total, cfg.alpha)
        if cfg.alpha < 1.0:
            ml = ml_loss(gen, batch, cfg.lam).loss
            objective = objective + ad.scale(ml, 1.0 - cfg.alpha)
        metrics = {
            "reward_mean": float(R.mean()),
            "rep_rate": float(np.mean([b.repetition_rate for b in breakdown])),
            "rouge_l": float(np.mean([b.rouge_l_f for b in breakdown])),
            "d_score": (float(np.mean([b.d_score for b in breakdown]))
                        if self.discriminator is not None and breakdown[0].d_score is not None else float("nan")),
            "rl_loss": rl_total.item(),
            "baseline_loss": b_total.item(),
        }
        return objective, b_total, metrics, hyps

    def step(self, examples):
        objective, b_loss, metrics, hyps = self.losses(examples)
        apply_update(self.generator.params, self.opt, objective, self.config.clip_norm)
        self.baseline_opt.step(ad.gradients(b_loss, self.baseline.params))
        if self.discriminator is not None and self.config.disc_mode == "continual":
            real = [(ex.article, ex.headline) for ex in examples]
            fake = [(ex.article, h if h else ["</s>"]) for ex, h in zip(examples, hyps)]
            metrics["d_loss"] = d_train_step(real, self.discriminator, self.disc_opt, fake_pairs=fake)
        return metrics


def train_baseline_on_stream(baseline, rewards, features, steps, lr=1e-3):
    """Fit the baseline alone on a fixed reward stream (no generator involved)."""
    opt = ad.Adam(baseline.params, lr)
    rewards = np.asarray(rewards, dtype=float)
    feats = Tensor(np.asarray(features, dtype=float))
    for _ in range(steps):
        pred = baseline.predict(feats)
        err = rewards - pred
        loss = ad.mean(err * err)
        opt.step(ad.gradients(loss, baseline.params))
    return baseline


# phase drivers


class StepLog:
    """Append-only ``key=value`` training log."""

    def __init__(self, path=None):
        self.path = path
        self.step = 0

    def write(self, phase, **fields):
        self.step += 1
        parts = [f"step={self.step}", f"phase={phase}"]
        for k, v in fields.items():
            parts.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
        line = " ".join(parts)
        log.debug(line)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        return line


def batches(items, size, rng=None):
    order = np.arange(len(items))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), size):
        yield [items[j] for j in order[i:i + size]]


def decode_corpus(generator, examples, beam=5, max_len=20):
    return [decode_ids(beam_search(generator, ex, beam, max_len).tokens, ex.ext_vocab) for ex in examples]


def corpus_rouge1(generator, examples, beam=5, max_len=20):
    hyps = decode_corpus(generator, examples, beam, max_len)
    return float(np.mean([rouge_n(h, ex.headline, 1).f for h, ex in zip(hyps, examples)]))


def train_ml(generator, train, dev, rng, *, lr=1e-4, lam=1.0, clip_norm=2.0, batch_size=16,
             max_epochs=50, patience=0, beam=5, max_dec_len=20, steplog=None):
    """ML pretraining until dev ROUGE-1 f stops improving.

    ``patience`` counts tolerated non-improving epochs (0 stops at the first);
    ``patience=None`` disables early stopping.  Best-dev parameters are restored.
    """
    trainer = MLTrainer(generator, lr, lam, clip_norm)
    steplog = steplog or StepLog()
    best, best_state, bad = -1.0, None, 0
    history = []
    for epoch in range(max_epochs):
        losses = [trainer.step(b) for b in batches(train, batch_size, rng)]
        loss = float(np.mean(losses))
        if patience is None:
            history.append((epoch, loss, None))
            steplog.write("ml", epoch=epoch, loss=loss)
            continue
        score = corpus_rouge1(generator, dev, beam, max_dec_len)
        history.append((epoch, loss, score))
        steplog.write("ml", epoch=epoch, loss=loss, dev_rouge1=score)
        if score > best:
            best, best_state, bad = score, generator.state_dict(), 0
        else:
            bad += 1
            if bad > patience:
                break
    if best_state is not None:
        generator.load_state_dict(best_state)
    return history


def train_disc(discriminator, generator, train, rng, *, lr=1e-3, batch_size=16, epochs=1,
               max_dec_len=20, steplog=None):
    opt = ad.Adam(discriminator.params, lr)
    steplog = steplog or StepLog()
    losses = []
    for _ in range(epochs):
        for b in batches(train, batch_size, rng):
            real = [(ex.article, ex.headline) for ex in b]
            loss = d_train_step(real, discriminator, opt, generator=generator, rng=rng, max_len=max_dec_len)
            losses.append(loss)
            steplog.write("disc", loss=loss)
    return losses


def train_rl(trainer, train, rng, *, batch_size=16, steps=100, steplog=None):
    steplog = steplog or StepLog()
    history = []
    done = 0
    while done < steps:
        for b in batches(train, batch_size, rng):
            m = trainer.step(b)
            history.append(m)
            steplog.write("rl", reward_mean=m["reward_mean"], rep_rate=m["rep_rate"],
                          rouge_l=m["rouge_l"], d_score=m["d_score"])
            done += 1
            if done >= steps:
                break
    return history


def train_pipeline(pairs, vocab, config, out_dir, dev_pairs=None):
    """ML pretrain -> discriminator pretrain (one epoch) -> RL, checkpointing each phase."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    train = [encode_with_pointer(p, vocab) for p in pairs]
    dev = [encode_with_pointer(p, vocab) for p in (dev_pairs or pairs)]
    steplog = StepLog(os.path.join(out_dir, "train.log"))

    gen = Generator(len(vocab), config.emb_size, config.hidden_size, seed=config.seed)
    train_ml(gen, train, dev, rng, lr=config.lr_ml, lam=config.coverage_weight, clip_norm=config.clip_norm,
             batch_size=config.batch_size, max_epochs=config.ml_epochs, patience=config.patience,
             beam=config.beam, max_dec_len=config.max_dec_len, steplog=steplog)
    ad.save_checkpoint(os.path.join(out_dir, "ml.ckpt"), gen.state_dict())

    disc = None
    if config.reward == "ROUGE-RP-ADV":
        disc = Discriminator(vocab, config.disc_emb_size, config.disc_filters, seed=config.seed,
                             max_article_len=config.max_article_len)
        train_disc(disc, gen, train, rng, lr=config.lr_disc, batch_size=config.batch_size,
                   epochs=config.disc_epochs, max_dec_len=config.max_dec_len, steplog=steplog)
        ad.save_checkpoint(os.path.join(out_dir, "disc.ckpt"), disc.state_dict())

    trainer = RLTrainer(gen, config.rl_config(), rng, disc)
    train_rl(trainer, train, rng, batch_size=config.batch_size, steps=config.rl_steps, steplog=steplog)
    ad.save_checkpoint(os.path.join(out_dir, "rl.ckpt"), {**gen.state_dict(), **trainer.baseline.state_dict()})
    return gen, disc, trainer
