"""INI-style configuration (``key = value`` under per-module sections).

Recognised sections and their keys mirror the dataclasses they feed:

``[model]``
    :class:`pvasr.model.Stage1Config`
``[train]``
    :class:`pvasr.train.TrainConfig`
``[reconstruct]``
    :class:`pvasr.decoding.reconstruct.ReconstructParams` (scalar fields)
``[synth]``
    ``words``, ``noise_sigma``, ``render``, ``dwell``, ``speaker_jitter``,
    ``min_words``, ``max_words``
``[lm]``
    ``order``, ``discount``

Values are read as Python literals where possible (``3``, ``0.5``,
``(5, 7, 7)``, ``true``) and as plain strings otherwise.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, MissingFile

SYNTH_DEFAULTS = {"words": 50, "noise_sigma": 0.01, "render": 24, "dwell": 3,
                  "speaker_jitter": 0.0, "min_words": 2, "max_words": 6}
LM_DEFAULTS = {"order": 2, "discount": 0.5}
SECTIONS = ("model", "train", "reconstruct", "synth", "lm")


def _literal(text: str):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


@dataclass
class Config:
    sections: dict[str, dict] = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def model(self):
        from .model import Stage1Config

        return Stage1Config.from_dict(self.section("model"))

    def train(self):
        from .train import TrainConfig

        return TrainConfig.from_dict(self.section("train"))

    def reconstruct(self):
        from .decoding.reconstruct import ReconstructParams

        known = {f.name for f in fields(ReconstructParams)} - {"confusion"}
        values = self.section("reconstruct")
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown reconstruct keys: {sorted(unknown)}")
        return ReconstructParams(**values)

    def synth(self) -> dict:
        return _merge("synth", SYNTH_DEFAULTS, self.section("synth"))

    def lm(self) -> dict:
        return _merge("lm", LM_DEFAULTS, self.section("lm"))


def _merge(name: str, defaults: dict, values: dict) -> dict:
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    return {**defaults, **values}


def parse_config(text: str, source: str = "<config>") -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{source}: unknown sections {unknown}")
    return Config({s: {k: _literal(v) for k, v in parser.items(s)} for s in parser.sections()})


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"config not found: {path}")
    return parse_config(path.read_text(), str(path))


def default_config_text() -> str:
    """Documented defaults, suitable as a starting config file."""
    from .decoding.reconstruct import ReconstructParams
    from .model import Stage1Config
    from .train import TrainConfig

    def block(name, items):
        lines = [f"[{name}]"]
        for k, v in items:
            if isinstance(v, tuple):
                v = "(" + ", ".join(str(x) for x in v) + ")"
            lines.append(f"{k} = {v}")
        return "\n".join(lines)

    recon = ReconstructParams()
    parts = [
        block("model", Stage1Config().to_dict().items()),
        block("train", TrainConfig().to_dict().items()),
        block("reconstruct", [(f.name, getattr(recon, f.name)) for f in fields(recon) if f.name != "confusion"]),
        block("synth", SYNTH_DEFAULTS.items()),
        block("lm", LM_DEFAULTS.items()),
    ]
    return "\n\n".join(parts) + "\n"
