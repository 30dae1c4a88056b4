"""Run configuration: flat ``key = value`` text with profile-aware defaults.

A config file is a list of ``section.key = value`` lines (``#`` comments and
blank lines allowed). The special top-level key ``profile`` selects the
default set: ``desk`` is sized for minutes-scale runs on one CPU core, and
``paper`` keeps the reference schedule (more epochs, conservative encoder
learning rate). Explicit keys always win over profile defaults, regardless
of where the ``profile`` line appears in the file. Unknown keys are errors,
and every run can be reproduced from the echoed effective config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

PROFILES = ("desk", "paper")

SPLITS = ("train", "test_in", "test_dg")

# key -> (type, desk default, paper default)
SCHEMA: dict[str, tuple[type, object, object]] = {
    "corpus.seed": (int, 0, 0),
    "corpus.train_clips": (int, 16, 16),
    "corpus.test_clips": (int, 4, 4),
    "corpus.dg_clips": (int, 8, 8),
    "pretrain.batch_size": (int, 64, 64),
    "pretrain.epochs": (int, 30, 80),
    "pretrain.audio_lr": (float, 1e-3, 1e-5),
    "pretrain.proj_lr": (float, 1e-3, 1e-3),
    "pretrain.tau_init": (float, 0.07, 0.07),
    "acpt.iterations": (int, 120, 120),
    "acpt.lr": (float, 2e-3, 2e-3),
    "acpt.momentum": (float, 0.9, 0.9),
    "acpt.n_prompt": (int, 8, 8),
    "acpt.omega": (float, 0.07, 0.07),
    "acpt.seq_len": (int, 16, 16),
    "classifier.epochs": (int, 50, 50),
    "classifier.lr": (float, 2e-3, 2e-3),
    "classifier.momentum": (float, 0.9, 0.9),
    "classifier.batch_size": (int, 16, 16),
    "classifier.scale": (float, 16.0, 16.0),
    "classifier.margin": (float, 0.2, 0.2),
    "classifier.loss": (str, "arcface", "arcface"),
    "eval.split": (str, "test_in", "test_in"),
}


class Section:
    """Attribute bag for one config section."""

    def __init__(self, entries: dict[str, object]):
        self.__dict__.update(entries)

    def __eq__(self, other):
        return isinstance(other, Section) and self.__dict__ == other.__dict__

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.__dict__.items())
        return f"Section({inner})"


@dataclass
class RunConfig:
    profile: str
    corpus: Section
    pretrain: Section
    acpt: Section
    classifier: Section
    eval: Section

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return getattr(getattr(self, section), key)


def default_config(profile: str = "desk") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    pick = 1 if profile == "desk" else 2
    sections: dict[str, dict[str, object]] = {}
    for dotted, spec in SCHEMA.items():
        section, key = dotted.split(".", 1)
        sections.setdefault(section, {})[key] = spec[pick]
    return RunConfig(profile=profile, **{s: Section(v) for s, v in sections.items()})


def _parse_value(dotted: str, raw: str):
    want = SCHEMA[dotted][0]
    raw = raw.strip()
    try:
        if want is int:
            return int(raw, 0)
        if want is float:
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{dotted}: cannot parse {raw!r} as {want.__name__}") from e
    return raw


def _validate(cfg: RunConfig) -> RunConfig:
    def positive(dotted):
        if not cfg.get(dotted) > 0:
            raise ConfigError(f"{dotted} must be positive, got {cfg.get(dotted)}")

    for dotted in ("corpus.train_clips", "corpus.test_clips", "corpus.dg_clips",
                   "pretrain.batch_size", "pretrain.epochs", "pretrain.audio_lr",
                   "pretrain.proj_lr", "pretrain.tau_init", "acpt.iterations",
                   "acpt.lr", "acpt.n_prompt", "acpt.omega", "acpt.seq_len",
                   "classifier.epochs", "classifier.lr", "classifier.batch_size",
                   "classifier.scale"):
        positive(dotted)
    if cfg.corpus.seed < 0:
        raise ConfigError(f"corpus.seed must be non-negative, got {cfg.corpus.seed}")
    for dotted in ("acpt.momentum", "classifier.momentum"):
        if not 0.0 <= cfg.get(dotted) < 1.0:
            raise ConfigError(f"{dotted} must lie in [0, 1), got {cfg.get(dotted)}")
    if not 0.0 <= cfg.classifier.margin < math.pi / 2:
        raise ConfigError(f"classifier.margin must lie in [0, pi/2), "
                          f"got {cfg.classifier.margin}")
    if cfg.classifier.loss not in ("arcface", "softmax"):
        raise ConfigError(f"classifier.loss must be 'arcface' or 'softmax', "
                          f"got {cfg.classifier.loss!r}")
    if cfg.eval.split not in SPLITS:
        raise ConfigError(f"eval.split must be one of {SPLITS}, got {cfg.eval.split!r}")
    return cfg


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    pairs: dict[str, str] = {}
    profile = "desk"
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in pairs:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        if key == "profile":
            if raw not in PROFILES:
                raise ConfigError(f"{origin}:{lineno}: unknown profile {raw!r}; "
                                  f"choose from {PROFILES}")
            profile = raw
            pairs[key] = raw
            continue
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        pairs[key] = raw

    cfg = default_config(profile)
    for key, raw in pairs.items():
        if key == "profile":
            continue
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, _parse_value(key, raw))
    return _validate(cfg)


def load_config(path=None, profile: str | None = None) -> RunConfig:
    """Config from an optional file; ``profile`` overrides only when no file names one."""
    if path is None:
        return _validate(default_config(profile or "desk"))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if profile is not None and "profile" not in {
            line.split("#", 1)[0].split("=", 1)[0].strip()
            for line in text.splitlines() if "=" in line.split("#", 1)[0]}:
        text = f"profile = {profile}\n" + text
    return parse_config_text(text, origin=str(p))


def echo_config(cfg: RunConfig) -> str:
    """Canonical effective-config text; parsing it reproduces ``cfg`` exactly."""
    lines = [f"profile = {cfg.profile}"]
    for dotted in SCHEMA:
        value = cfg.get(dotted)
        lines.append(f"{dotted} = {value!r}" if isinstance(value, float)
                     else f"{dotted} = {value}")
    return "\n".join(lines) + "\n"
