"""Plain-text key=value configuration files.

Grammar: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored. Unknown or duplicate keys are rejected with the line number.
Every key is optional; omitted keys fall back to the documented defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .descriptor import CUE_NAMES
from .errors import ConfigParseError, ConfigurationError
from .model import ModelConfig


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 10
    lr: float = 1e-3
    batch: int = 8
    seed: int = 0
    # Adam moments; the loss is fixed to the spatially normalized MSE
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> "TrainConfig":
        self.model.validate()
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if self.batch < 1:
            raise ConfigurationError("batch size must be >= 1")
        return self


def _parse_int(raw: str) -> int:
    return int(raw, 10)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip(), 10) for part in raw.split(",") if part.strip())


def _parse_choice(options):
    def parse(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {sorted(options)}")
        return raw

    return parse


def _parse_cues(raw: str) -> tuple[str, ...]:
    cues = tuple(part.strip() for part in raw.split(",") if part.strip())
    bad = [c for c in cues if c not in CUE_NAMES]
    if bad:
        raise ValueError(f"unknown cues {bad}; choose from {CUE_NAMES}")
    if not cues:
        raise ValueError("at least one cue required")
    return cues


def _parse_beta_mode(raw: str) -> tuple[str, float]:
    if raw == "learnable":
        return "learnable", 0.0
    if raw.startswith("fixed:"):
        return "fixed", float(raw.split(":", 1)[1])
    raise ValueError("expected 'learnable' or 'fixed:<value>'")


# key -> (parser, assignment target): 'model' fields land on ModelConfig,
# 'train' fields on TrainConfig itself.
_KEYS = {
    "t_in": (_parse_int, "model", "t_in"),
    "t_out": (_parse_int, "model", "t_out"),
    "c_in": (_parse_int, "model", "c_in"),
    "c_out": (_parse_int, "model", "c_out"),
    "height": (_parse_int, "model", "height"),
    "width": (_parse_int, "model", "width"),
    "latent_c": (_parse_int, "model", "latent_c"),
    "n_s": (_parse_int, "model", "n_s"),
    "n_t": (_parse_int, "model", "n_t"),
    "kernels": (_parse_int_list, "model", "kernels"),
    "expansion": (_parse_int, "model", "expansion"),
    "center_size": (_parse_int, "model", "center_size"),
    "fusion": (_parse_choice({"softmax", "mean"}), "model", "fusion"),
    "beta_mode": (_parse_beta_mode, "model", None),
    "gate_act": (_parse_choice({"tanh", "sigmoid"}), "model", "gate_act"),
    "cues": (_parse_cues, "model", "cues"),
    "drop_path": (_parse_float, "model", "drop_path"),
    "msinit": (_parse_int_list, "model", "msinit_scales"),
    "epochs": (_parse_int, "train", "epochs"),
    "lr": (_parse_float, "train", "lr"),
    "batch": (_parse_int, "train", "batch"),
    "seed": (_parse_int, "train", "seed"),
}


def parse_config_text(text: str) -> TrainConfig:
    cfg = TrainConfig()
    seen: set[str] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got '{raw_line.strip()}'")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigParseError(f"line {lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigParseError(f"line {lineno}: duplicate key '{key}'")
        seen.add(key)
        parser, target, attr = _KEYS[key]
        try:
            value = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigParseError(f"line {lineno}: bad value for '{key}': {exc}") from None
        if key == "beta_mode":
            cfg.model.beta_mode, cfg.model.beta_fixed = value
        elif target == "model":
            setattr(cfg.model, attr, value)
        else:
            setattr(cfg, attr, value)
    return cfg


def load_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config '{path}': {exc}") from None
    cfg = parse_config_text(text)
    cfg.validate()
    return cfg


def serialize_config(cfg: TrainConfig) -> str:
    """Canonical config text, round-trippable through the parser."""
    m = cfg.model
    beta = "learnable" if m.beta_mode == "learnable" else f"fixed:{m.beta_fixed!r}"
    lines = [
        f"t_in = {m.t_in}",
        f"t_out = {m.t_out}",
        f"c_in = {m.c_in}",
        f"c_out = {m.c_out}",
        f"height = {m.height}",
        f"width = {m.width}",
        f"latent_c = {m.latent}",
        f"n_s = {m.n_s}",
        f"n_t = {m.n_t}",
        "kernels = " + ",".join(str(k) for k in m.kernels),
        f"expansion = {m.expansion}",
        f"center_size = {m.center_size}",
        f"fusion = {m.fusion}",
        f"beta_mode = {beta}",
        f"gate_act = {m.gate_act}",
        "cues = " + ",".join(m.cues),
        f"drop_path = {m.drop_path!r}",
        "msinit = " + ",".join(str(k) for k in m.msinit_scales),
        f"epochs = {cfg.epochs}",
        f"lr = {cfg.lr!r}",
        f"batch = {cfg.batch}",
        f"seed = {cfg.seed}",
    ]
    return "\n".join(lines) + "\n"
