"""``key = value`` experiment configuration with a closed schema."""
from dataclasses import dataclass, fields, replace

from .reward import REWARD_KINDS
from .rltrain import DISC_MODES, RLConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # model size; full scale is hidden 512, embedding 100, 512 filters per width
    hidden_size: int = 32
    emb_size: int = 16
    disc_emb_size: int = 16
    disc_filters: int = 16
    vocab_size: int = 50000
    max_article_len: int = 400
    max_dec_len: int = 20
    # optimisation
    batch_size: int = 16
    lr_ml: float = 1e-4
    lr_rl: float = 1e-4
    lr_disc: float = 1e-3
    lr_baseline: float = 1e-3
    clip_norm: float = 2.0
    ml_epochs: int = 50
    patience: int = 0
    disc_epochs: int = 1
    rl_steps: int = 1000
    # objective
    coverage_weight: float = 1.0
    alpha: float = 0.97
    beta: float = 2000.0
    reward: str = "ROUGE-RP-ADV"
    disc_mode: str = "continual"
    # decoding / reproducibility
    beam: int = 5
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.hidden_size > 0 and self.emb_size > 0, "sizes must be positive"),
            (self.disc_emb_size > 0 and self.disc_filters > 0, "sizes must be positive"),
            (self.vocab_size > 4, "vocab_size must exceed 4"),
            (self.max_article_len >= 1 and self.max_dec_len >= 1, "lengths must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (min(self.lr_ml, self.lr_rl, self.lr_disc, self.lr_baseline) > 0, "learning rates must be positive"),
            (self.clip_norm > 0, "clip_norm must be positive"),
            (self.patience >= 0 and self.ml_epochs >= 0 and self.disc_epochs >= 0 and self.rl_steps >= 0,
             "counts must be >= 0"),
            (self.coverage_weight >= 0, "coverage_weight must be >= 0"),
            (0.0 <= self.alpha <= 1.0, "alpha must lie in [0, 1]"),
            (self.beta > 0, "beta must be positive"),
            (self.reward in REWARD_KINDS, f"reward must be one of {', '.join(REWARD_KINDS)}"),
            (self.disc_mode in DISC_MODES, f"disc_mode must be one of {', '.join(DISC_MODES)}"),
            (self.beam >= 1, "beam must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def rl_config(self):
        return RLConfig(
            reward_kind=self.reward, beta=self.beta, alpha=self.alpha, lam=self.coverage_weight,
            lr=self.lr_rl, lr_baseline=self.lr_baseline, lr_disc=self.lr_disc,
            max_dec_len=self.max_dec_len, clip_norm=self.clip_norm, disc_mode=self.disc_mode,
        )

    def updated(self, overrides):
        return replace(self, **coerce(overrides))

    def dumps(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key, raw):
    kind = _TYPES[key]
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return str(raw)


def coerce(pairs):
    out = {}
    for key, raw in pairs.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = raw if not isinstance(raw, str) else _convert(key, raw)
    return out


def parse_config_text(text):
    pairs = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"config line {n}: duplicate key {key!r}")
        pairs[key] = value
    return coerce(pairs)


def load_config(path=None, overrides=None):
    values = {}
    if path:
        with open(path, encoding="utf-8") as f:
            values.update(parse_config_text(f.read()))
    values.update(coerce(overrides or {}))
    try:
        return Config(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
