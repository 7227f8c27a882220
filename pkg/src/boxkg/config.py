"""Training and run configuration with flat ``key = value`` files."""

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.005
    lambda1: float = 1.0
    lambda2: float = 1.0
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10  # 0 disables early stopping
    seed: int = 0
    d_vec: int = 256
    d_box: int = 512
    beta: float = 1.0
    alpha: float = 0.5
    volume_clamp: float = 1e-10
    intersection: str = "smooth"
    margin_kg: float = 0.3
    margin_cross: float = 0.15
    score_kind: str = "translation"
    norm: int = 1
    onto_mode: str = "shift_scale"
    onto_loss: str = "squared"
    reduction: str = "mean"
    adaptive_alpha: bool = True
    neg_inst: int = 10
    neg_onto: int = 5
    neg_cross: int = 5
    early_stop_metric: str = "auto"
    eval_every: int = 1
    text_hidden: int = 0  # 0 means the feature width
    center_init: float = 0.5
    offset_init: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.lr > 0, f"lr must be > 0, got {self.lr}")
        need(self.lambda1 > 0 and self.lambda2 > 0, "lambda1 and lambda2 must both be > 0")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.max_epochs >= 0, "max_epochs must be >= 0")
        need(self.patience >= 0, "patience must be >= 0")
        need(self.d_vec >= 1 and self.d_box >= 1, "dimensions must be >= 1")
        need(self.beta > 0, "beta must be > 0")
        need(0 < self.alpha < 1, "alpha must lie in (0, 1)")
        need(self.volume_clamp > 0, "volume_clamp must be > 0")
        need(self.margin_kg > 0 and self.margin_cross > 0, "margins must be > 0")
        need(self.intersection in ("smooth", "hard"), f"bad intersection {self.intersection!r}")
        need(self.score_kind in ("translation", "rotation"), f"bad score_kind {self.score_kind!r}")
        need(self.norm in (1, 2), "norm must be 1 or 2")
        need(self.onto_mode in ("shift_scale", "text"), f"bad onto_mode {self.onto_mode!r}")
        need(self.onto_loss in ("squared", "bce"), f"bad onto_loss {self.onto_loss!r}")
        need(self.reduction in ("mean", "sum"), f"bad reduction {self.reduction!r}")
        need(min(self.neg_inst, self.neg_onto, self.neg_cross) >= 1, "negative counts must be >= 1")
        need(self.early_stop_metric in ("auto", "inst", "onto", "link", "none"),
             f"bad early_stop_metric {self.early_stop_metric!r}")
        need(self.eval_every >= 1, "eval_every must be >= 1")
        need(self.score_kind != "rotation" or self.d_vec % 2 == 0, "rotation needs an even d_vec")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        return _build(cls, d)


@dataclass
class RunConfig(TrainConfig):
    inst_path: str = ""
    onto_path: str = ""
    links_path: str = ""
    features_path: str = ""
    out_dir: str = "runs/default"
    split_mode: str = "kgc"
    split_train: float = 0.8
    split_valid: float = 0.1
    split_test: float = 0.1
    split_seed: int = 0
    threads: int = 1

    def validate(self):
        super().validate()
        if self.split_mode not in ("kgc", "linking"):
            raise ConfigError(f"bad split_mode {self.split_mode!r}")

    @property
    def ratios(self):
        return (self.split_train, self.split_valid, self.split_test)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.to_dict().items() if k in names})


def _coerce(kind, key, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _build(cls, values: dict):
    defaults = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in values.items():
        kwargs[k] = _coerce(type(defaults[k].default), k, v)
    return cls(**kwargs)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_run_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update(overrides or {})
    return _build(RunConfig, values)


def dump_config(cfg) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
