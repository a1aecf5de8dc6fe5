"""Run configuration and the key=value config file.

Config files are flat ``key = value`` lines ('#' starts a comment);
values are ints, floats, booleans (true/false) or strings, optionally
quoted. Command-line flags override file values, which override the
built-in defaults below.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    """Every tunable with its default; flag and file keys share these names."""

    seed: int = 7
    feature_dim: int = 32
    sequence_length: int = 16
    raw_length: int = 36
    correlation: float = 0.8
    perturb_strength: float = 0.1
    # encoder
    encoder: bool = True
    head_count: int = 2
    hidden_dim: int = 64
    # training schedule
    epochs: int = 8
    lr_initial: float = 5e-4
    lr_final: float = 5e-5
    momentum: float = 0.9
    weight_decay: float = 1e-5
    loss_balance: float = 1.0
    batch_size: int = 16
    # alignment
    tau: float = 0.3
    sigma: float = 0.1
    gamma: float = 100.0
    gap_limit: int = 3
    weighting: str = "soft"
    hard_min_len: int = 3
    aligner: str = "sm"
    use_mask: bool = True
    hv_threshold: float = 0.5
    hv_min_votes: int = 3


_BOOL_WORDS = {"true": True, "false": False, "on": True, "off": False,
               "yes": True, "no": False}


def _parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in _BOOL_WORDS:
        return _BOOL_WORDS[lowered]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = _parse_value(value)
    return values


def build_config(file_values: dict | None = None, **overrides) -> RunConfig:
    """Merge defaults <- config file <- explicit overrides (None = unset)."""
    known = {f.name: f.type for f in fields(RunConfig)}
    merged = asdict(RunConfig())
    for source in (file_values or {}, overrides):
        for key, value in source.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            merged[key] = value
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
