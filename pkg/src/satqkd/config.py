"""Session configuration: a flat key=value file with dotted blocks.

Lines look like `n_raw_target=40000` or `source.visibility=0.96`; `#` starts
a comment. Every field has a default, serialization round-trips, and parse
errors carry line numbers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .channel import LinkParams, SourceParams
from .errors import ConfigError, InvalidParameterError
from .ldpc import DEFAULT_RATE_LADDER

# Table-1 style presets, keyed by source visibility.
PRESETS = {
    "v0.960": 0.960,
    "v0.873": 0.873,
    "v0.742": 0.742,
}


@dataclass
class SessionConfig:
    n_raw_target: int = 40000
    t_c_ns: int = 1
    efficiency_f: float = 1.1
    ladder_rates: tuple = tuple(sorted(DEFAULT_RATE_LADDER))
    policy: str = "skip"
    seed: int = 1
    code_seed: int = 7
    retry_cap: int = 3
    qber_threshold: float = 0.11
    sifted_rate_bps: float = 2133.0
    pool_bytes: int = 4096
    chunk_periods: int = 65536
    max_decode_iter: int = 60
    source: SourceParams = field(default_factory=SourceParams)
    link: LinkParams = field(default_factory=LinkParams)

    def __post_init__(self):
        if self.policy not in ("wait", "skip"):
            raise ConfigError(f"policy must be wait or skip, not {self.policy!r}")
        if self.n_raw_target < 8:
            raise ConfigError("n_raw_target must be at least 8")
        if not self.ladder_rates:
            raise ConfigError("ladder_rates may not be empty")

    # pipeline stage targets, all driven by the raw target
    @property
    def target_sifted(self) -> int:
        return self.n_raw_target // 2

    @property
    def sample_size(self) -> int:
        return min(self.n_raw_target // 4, self.target_sifted)

    @property
    def reconcile_len(self) -> int:
        return self.target_sifted - self.sample_size


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return repr(v) if isinstance(v, str) else str(v)


def config_to_text(cfg: SessionConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                lines.append(f"{f.name}.{sub.name}={_format_value(getattr(value, sub.name))}")
        else:
            if isinstance(value, str):
                lines.append(f"{f.name}={value}")
            else:
                lines.append(f"{f.name}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str, target_type, key: str, lineno: int):
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is tuple:
            return tuple(float(x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {text!r} for {key}") from None


def config_from_text(text: str) -> SessionConfig:
    top: dict = {}
    blocks: dict = {"source": {}, "link": {}}
    top_fields = {f.name: f for f in fields(SessionConfig)}
    block_fields = {
        "source": {f.name: f for f in fields(SourceParams)},
        "link": {f.name: f for f in fields(LinkParams)},
    }
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." in key:
            block, sub = key.split(".", 1)
            if block not in blocks or sub not in block_fields[block]:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            ftype = block_fields[block][sub].type
            target = int if ftype in ("int",) else float
            blocks[block][sub] = _parse_scalar(value, target, key, lineno)
        else:
            if key not in top_fields or key in ("source", "link"):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            ftype = top_fields[key].type
            target = {"int": int, "float": float, "tuple": tuple, "str": str}.get(ftype, str)
            top[key] = _parse_scalar(value, target, key, lineno)
    try:
        source = SourceParams(**blocks["source"])
        link = LinkParams(**blocks["link"])
        return SessionConfig(source=source, link=link, **top)
    except (InvalidParameterError, ConfigError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> SessionConfig:
    with open(path) as fh:
        return config_from_text(fh.read())


def apply_preset(cfg: SessionConfig, preset: str) -> SessionConfig:
    """Return a copy with the preset's source visibility applied."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    source = dataclasses.replace(cfg.source, visibility=PRESETS[preset])
    return dataclasses.replace(cfg, source=source)
