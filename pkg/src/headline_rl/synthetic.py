"""Seeded toy corpora used by the desk-scale experiments and tests."""
import numpy as np

from .textcore import ExamplePair


def word_list(prefix, n):
    """``n`` distinct letter-only words (digits would be masked by the tokenizer)."""
    out = []
    for i in range(n):
        tag = ""
        while True:
            i, r = divmod(i, 26)
            tag = chr(97 + r) + tag
            if i == 0:
                break
        out.append(prefix + tag)
    return out


def copy_corpus(n=32, seed=0, n_words=30, min_len=8, max_len=20, head_len=3):
    """Headline = the article's first ``head_len`` tokens."""
    rng = np.random.default_rng(seed)
    words = word_list("w", n_words)
    pairs = []
    for _ in range(n):
        art = [str(w) for w in rng.choice(words, size=int(rng.integers(min_len, max_len + 1)))]
        pairs.append(ExamplePair(art, art[:head_len]))
    return pairs


def repetition_corpus(n=64, seed=0, n_content=8, n_filler=8, n_noise=4, q=0.5, dup=2):
    """Headlines are a random order of 2 (prob ``q``) or 3 distinct content words.

    Each content word appears ``dup`` times in the article among filler, so
    copying it twice is easy.  Neither length nor order is predictable from the
    article, which makes a repeated hedge such as "x y x" score well under
    plain ROUGE-L although no reference repeats a token.
    """
    rng = np.random.default_rng(seed)
    content = word_list("c", n_content)
    filler = word_list("f", n_filler)
    pairs = []
    for _ in range(n):
        words = [str(w) for w in rng.choice(content, size=3, replace=False)]
        k = 2 if rng.random() < q else 3
        art = [str(w) for w in rng.choice(filler, size=n_noise)] + words[:k] * dup
        rng.shuffle(art)
        head = [str(w) for w in rng.permutation(words[:k])]
        pairs.append(ExamplePair(art, head))
    return pairs


def separable_disc_corpus(n=64, seed=0, marker="real", n_words=20, article_len=8, head_len=4):
    """(real_pairs, fake_pairs): real headlines repeat a marker token, fakes are random words."""
    rng = np.random.default_rng(seed)
    words = word_list("w", n_words)
    real, fake = [], []
    for _ in range(n):
        art = [str(w) for w in rng.choice(words, size=article_len)]
        real.append((art, [marker] * head_len))
        fake.append((art, [str(w) for w in rng.choice(words, size=head_len)]))
    return real, fake
