"""Flat ``key = value`` run configuration with command-line overrides.

A config file has no section headers; ``#`` and ``;`` start comments::

    ratings = data/ratings.txt
    trust = data/trust.txt
    embed_dim = 32
    variant = dicer-embed

Every model and training hyperparameter is a key. Unknown keys are an error.
"""
from __future__ import annotations

import configparser
from dataclasses import MISSING, asdict, dataclass, fields, replace
from pathlib import Path

from .evaluation import DEFAULT_KS, CandidatePolicy
from .exceptions import ConfigError
from .model import ModelConfig, apply_variant
from .trainer import TrainConfig

_SECTION = "run"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # paths
    ratings: str = ""
    trust: str = ""
    workdir: str = "work"
    # "planted" makes prepare generate the 4-block synthetic instead of reading files
    synthetic: str = ""
    # model
    embed_dim: int = 64
    layers: int = 3
    lambda1: float = 1 / 3
    lambda2: float = 1 / 3
    lambda3: float = 1 / 3
    leaky_slope: float = 0.2
    dropout_rate: float = 0.3
    eta: float = 0.1
    neighbor_cap: int = 30
    history_cap: int = 50
    use_user_interest: bool = True
    use_item_attraction: bool = True
    use_item_collab_context: bool = True
    use_user_collab_context: bool = True
    use_social_context: bool = True
    modulation_kind: str = "maxpool"
    use_gnn: bool = True
    self_first_term: bool = False
    normalize: bool = False
    mlp_hidden: str = ""
    # training
    epochs_max: int = 100
    batch_size: int = 4096
    neg_ratio: int = 8
    patience: int = 10
    eval_every: int = 1
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # run
    seed: int = 0
    variant: str = "full"
    variants: str = "full,wo-ui,wo-ia,minus-alpha,minus-beta,minus-mu,minus-all,attn,embed,layers-1,layers-2,layers-3"
    policy: str = "full"
    ks: str = ",".join(str(k) for k in DEFAULT_KS)
    deterministic: bool = False

    def __post_init__(self):
        CandidatePolicy.parse(self.policy)
        self.ks_tuple()
        if self.synthetic not in ("", "planted"):
            raise ConfigError(f"synthetic must be empty or 'planted', got {self.synthetic!r}")

    # ------------------------------------------------------------ views
    def model_config(self, variant=None) -> ModelConfig:
        model_keys = {f.name for f in fields(ModelConfig)}
        values = {k: v for k, v in asdict(self).items() if k in model_keys}
        values["mlp_hidden"] = _int_list(self.mlp_hidden, "mlp_hidden") or None
        return apply_variant(ModelConfig(**values), variant or self.variant)

    def train_config(self) -> TrainConfig:
        train_keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in train_keys})

    def ks_tuple(self):
        ks = _int_list(self.ks, "ks")
        if not ks or min(ks) < 1:
            raise ConfigError(f"ks must be a comma list of positive integers, got {self.ks!r}")
        return ks

    def variant_list(self):
        names = [v.strip() for v in self.variants.split(",") if v.strip()]
        if not names:
            raise ConfigError("variants must name at least one variant")
        return names

    @property
    def workpath(self) -> Path:
        return Path(self.workdir)

    def to_lines(self):
        """The effective config as a loadable ``key = value`` text."""
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())

    # ------------------------------------------------------------ loading
    @classmethod
    def from_mapping(cls, values, source="<overrides>", base=None):
        base = base or cls()
        types = {f.name: _field_type(f) for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in types:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            parsed[name] = _coerce(raw, types[name], name, source)
        try:
            return replace(base, **parsed)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:  # pragma: no cover - coercion catches these first
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path, overrides=None):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";"), delimiters=("=",),
            strict=True,
        )
        parser.optionxform = str
        try:
            parser.read_string(f"[{_SECTION}]\n" + path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if parser.sections() != [_SECTION]:
            raise ConfigError(f"{path}: section headers are not allowed in a run config")
        cfg = cls.from_mapping(dict(parser.items(_SECTION)), source=str(path))
        return cfg.with_overrides(overrides or {})

    def with_overrides(self, overrides):
        return type(self).from_mapping(overrides, base=self) if overrides else self


def _field_type(f):
    default = f.default if f.default is not MISSING else None
    return type(default) if default is not None else str


def _coerce(raw, typ, name, source):
    if not isinstance(raw, str):
        if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, typ):
            return raw
        raw = str(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{source}: key {name!r} expects {typ.__name__}, got {raw!r}") from None
    return text


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _int_list(text, name):
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)
    except ValueError:
        raise ConfigError(f"{name} must be a comma list of integers, got {text!r}") from None
