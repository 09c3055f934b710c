"""Tokenizer, vocabulary and pointer-aware encoding of article/headline pairs."""
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import List, NamedTuple

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
PUNCT = ".,:;!?()"
MAX_ARTICLE_LEN = 400

_punct_re = re.compile("([" + re.escape(PUNCT) + "])")


class CorpusFormatError(ValueError):
    def __init__(self, line_no, msg):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


def tokenize(raw_text: str) -> List[str]:
    """Lowercase, mask ASCII digits as '#', detach ``.,:;!?()``, split on whitespace."""
    text = raw_text.lower()
    text = re.sub("[0-9]", "#", text)
    text = _punct_re.sub(r" \1 ", text)
    return text.split()


class ExamplePair(NamedTuple):
    article: List[str]
    headline: List[str]


def make_pair(article_text, headline_text, max_article_len=MAX_ARTICLE_LEN):
    return ExamplePair(tokenize(article_text)[:max_article_len], tokenize(headline_text))


class Vocabulary:
    def __init__(self, tokens):
        self.token_of = list(RESERVED) + list(tokens)
        self.id_of = {t: i for i, t in enumerate(self.token_of)}
        if len(self.id_of) != len(self.token_of):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.token_of)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.token_of == other.token_of

    def lookup(self, token):
        return self.id_of.get(token, UNK)

    def ids(self, tokens):
        return [self.id_of.get(t, UNK) for t in tokens]

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok in self.token_of[len(RESERVED):]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


def build_vocab(corpus, max_size):
    if max_size <= len(RESERVED):
        raise ValueError("max_size must exceed the number of reserved ids")
    counts = Counter()
    n = 0
    for article, headline in corpus:
        n += 1
        counts.update(article)
        counts.update(headline)
    if n == 0:
        raise ValueError("empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([t for t, _ in ranked[: max_size - len(RESERVED)]])


@dataclass(frozen=True)
class ExtendedVocab:
    base: Vocabulary
    article_oovs: tuple = ()

    def __len__(self):
        return len(self.base) + len(self.article_oovs)

    def token(self, ext_id):
        if ext_id < len(self.base):
            return self.base.token_of[ext_id]
        return self.article_oovs[ext_id - len(self.base)]

    def ext_id(self, token):
        if token in self.base.id_of:
            return self.base.id_of[token]
        if token in self.article_oovs:
            return len(self.base) + self.article_oovs.index(token)
        return UNK


@dataclass
class EncodedExample:
    src_ids: List[int]
    src_ext_ids: List[int]
    tgt_ids: List[int]  # decoder inputs: BOS + headline (UNK for OOV)
    tgt_ext_ids: List[int]  # targets: headline extended ids + EOS
    ext_vocab: ExtendedVocab
    article: List[str] = field(default_factory=list)
    headline: List[str] = field(default_factory=list)


def encode_article(article, vocab):
    oovs = []
    src_ids, src_ext = [], []
    for tok in article:
        i = vocab.lookup(tok)
        src_ids.append(i)
        if i == UNK and tok not in vocab:
            if tok not in oovs:
                oovs.append(tok)
            src_ext.append(len(vocab) + oovs.index(tok))
        else:
            src_ext.append(i)
    return src_ids, src_ext, ExtendedVocab(vocab, tuple(oovs))


def encode_with_pointer(pair, vocab):
    article, headline = pair
    src_ids, src_ext, ext = encode_article(article, vocab)
    tgt_in = [BOS] + vocab.ids(headline)
    tgt_out = [ext.ext_id(t) for t in headline] + [EOS]
    return EncodedExample(src_ids, src_ext, tgt_in, tgt_out, ext, list(article), list(headline))


def decode_ids(ids, ext_vocab, strip_special=True):
    toks = []
    for i in ids:
        if strip_special and i in (PAD, BOS):
            continue
        if strip_special and i == EOS:
            break
        toks.append(ext_vocab.token(i))
    return toks


def parse_line(line, line_no, max_article_len=MAX_ARTICLE_LEN):
    line = line.rstrip("\n").rstrip("\r")
    if line.count("\t") != 1:
        raise CorpusFormatError(line_no, "expected exactly one TAB between article and headline")
    art, head = line.split("\t")
    pair = make_pair(art, head, max_article_len)
    if not pair.headline:
        raise CorpusFormatError(line_no, "empty headline")
    return pair


def load_corpus(path, max_article_len=MAX_ARTICLE_LEN):
    """Yield one ExamplePair per ``article<TAB>headline`` line (1-based line numbers in errors)."""
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            yield parse_line(line, line_no, max_article_len)
