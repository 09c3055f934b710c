"""Two-tower CNN scorer D(A, H): probability that headline H is a real one for article A."""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .generator import make_batch, sample_batch
from .textcore import EncodedExample, decode_ids, encode_article

FILTER_WIDTHS = (1, 3, 5)
TOWERS = ("article", "headline")


class Discriminator:
    def __init__(self, vocab, emb_size=16, filters=16, seed=0, init_scale=0.1,
                 widths=FILTER_WIDTHS, max_article_len=400):
        self.vocab = vocab
        self.emb_size = emb_size
        self.filters = filters
        self.widths = tuple(widths)
        self.max_article_len = max_article_len
        shapes = {"disc.emb": (len(vocab), emb_size)}
        for tower in TOWERS:
            for k in self.widths:
                shapes[f"disc.{tower}.conv{k}.W"] = (k, emb_size, filters)
                shapes[f"disc.{tower}.conv{k}.b"] = (filters,)
        shapes["disc.out.W"] = (2 * len(self.widths) * filters, 1)
        shapes["disc.out.b"] = (1,)
        rng = np.random.default_rng(seed)
        self.params = {}
        for name in sorted(shapes):
            data = rng.uniform(-init_scale, init_scale, size=shapes[name])
            self.params[name] = Tensor(data, requires_grad=True, name=name)

    def __getitem__(self, name):
        return self.params[name]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays):
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint lacks {k}")
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model {p.shape}")
            p.data = np.array(arrays[k], dtype=ad.DTYPE)

    @classmethod
    def from_state_dict(cls, arrays, vocab):
        V, E = arrays["disc.emb"].shape
        if V != len(vocab):
            raise ValueError(f"discriminator vocabulary size {V} != {len(vocab)}")
        widths = sorted(int(k.split("conv")[1].split(".")[0])
                        for k in arrays if k.startswith("disc.article.conv") and k.endswith(".b"))
        F = arrays[f"disc.article.conv{widths[0]}.b"].shape[0]
        d = cls(vocab, E, F, widths=widths)
        d.load_state_dict(arrays)
        return d

    def tower(self, name, tokens):
        ids = self.vocab.ids(tokens)
        x = ad.gather(self["disc.emb"], np.array(ids, dtype=np.int64))
        short = max(self.widths) - len(ids)
        if short > 0:
            x = ad.concat([x, Tensor(np.zeros((short, self.emb_size)))], axis=0)
        feats = []
        for k in self.widths:
            h = ad.tanh(ad.conv1d(x, self[f"disc.{name}.conv{k}.W"], self[f"disc.{name}.conv{k}.b"]))
            feats.append(ad.max_over_time(h))
        return ad.concat(feats, axis=-1)

    def logit(self, article, headline):
        if not headline:
            raise ValueError("headline must be non-empty")
        article = list(article)[: self.max_article_len]
        if not article:
            article = ["<pad>"]
        feats = ad.concat([self.tower("article", article), self.tower("headline", headline)], axis=-1)
        z = ad.reshape(feats, (1, -1)) @ self["disc.out.W"] + self["disc.out.b"]
        return ad.reshape(z, ())

    def prob(self, article, headline):
        return ad.sigmoid(self.logit(article, headline))

    def score(self, article, headline):
        with ad.no_grad():
            return self.prob(article, headline).item()


def d_score(article, headline, model):
    return model.score(article, headline)


def d_loss(real_pairs, fake_pairs, model):
    """mean -log D over real pairs + mean -log(1 - D) over fake pairs."""
    if not real_pairs or not fake_pairs:
        raise ValueError("both real and fake batches must be non-empty")
    real = [ad.log(model.prob(a, h), floor=ad.LOG_FLOOR) for a, h in real_pairs]
    fake = [ad.log(1.0 - model.prob(a, h), floor=ad.LOG_FLOOR) for a, h in fake_pairs]
    real_term = _mean(real)
    fake_term = _mean(fake)
    return -(real_term + fake_term)


def _mean(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return ad.scale(total, 1.0 / len(terms))


def generate_fakes(generator, vocab, articles, max_len, rng):
    """Sampled (not beam) headlines from the generator, as token lists."""
    exs = []
    for art in articles:
        src, src_ext, ext = encode_article(art, vocab)
        exs.append(EncodedExample(src, src_ext, [], [], ext, list(art)))
    batch = make_batch(exs, generator.vocab_size)
    with ad.no_grad():
        out = sample_batch(generator, batch, max_len, rng)
    fakes = []
    for ex, toks in zip(exs, out.tokens):
        words = decode_ids(toks, ex.ext_vocab)
        # an immediate EOS still has to be scored as a headline
        fakes.append(words if words else ["</s>"])
    return fakes


def d_train_step(real_pairs, model, opt, fake_pairs=None, generator=None, rng=None, max_len=20):
    """One Adam step on the discriminator loss; fakes are sampled fresh unless given."""
    if fake_pairs is None:
        articles = [a for a, _ in real_pairs]
        fakes = generate_fakes(generator, model.vocab, articles, max_len, rng)
        fake_pairs = list(zip(articles, fakes))
    loss = d_loss(real_pairs, fake_pairs, model)
    grads = ad.gradients(loss, model.params)
    opt.step(grads)
    return loss.item()


def d_accuracy(real_pairs, fake_pairs, model, threshold=0.5):
    if not real_pairs or not fake_pairs:
        raise ValueError("both real and fake batches must be non-empty")
    real = [model.score(a, h) for a, h in real_pairs]
    fake = [model.score(a, h) for a, h in fake_pairs]
    return accuracy_from_scores(real, fake, threshold)


def accuracy_from_scores(real_scores, fake_scores, threshold=0.5):
    acc_real = float(np.mean([s > threshold for s in real_scores]))
    acc_fake = float(np.mean([s < threshold for s in fake_scores]))
    return acc_real, acc_fake
