"""Engine configuration: TOML file, ASTRA_* environment overrides, explicit flags.

Precedence (lowest to highest): built-in defaults, config file, environment,
explicit overrides.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ENV_CONFIG = "ASTRA_CONFIG"

_ENV_KEYS = {
    "ASTRA_INDEX_PATH": ("index_path", str),
    "ASTRA_EMBED_URL": ("embed_url", str),
    "ASTRA_NORMALIZE_URL": ("normalize_url", str),
    "ASTRA_ALPHA_U": ("alpha_u", float),
}


@dataclass(frozen=True)
class EngineConfig:
    index_path: str | None = None
    pose_store_path: str | None = None
    alpha_u: float = 0.55
    embed_url: str | None = None
    normalize_url: str | None = None
    plugin_urls: tuple[str, ...] = ()
    embed_timeout: float = 2.0
    normalize_timeout: float = 2.0
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_u <= 1.0:
            raise ConfigError(f"alpha_u must lie in [0, 1], got {self.alpha_u!r}")
        object.__setattr__(self, "plugin_urls", tuple(self.plugin_urls))


_FIELD_NAMES = {f.name for f in fields(EngineConfig)}


def _read_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid TOML: {exc}") from None
    merged: dict = {}
    for section in ("engine", "clients"):
        merged.update(doc.get(section, {}))
    unknown = set(merged) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return merged


def load_config(path: str | None = None, env=None, **overrides) -> EngineConfig:
    """Build the engine configuration from file, environment and overrides."""
    env = os.environ if env is None else env
    path = path or env.get(ENV_CONFIG)
    values: dict = {}
    if path:
        values.update(_read_file(str(path)))
    for key, (name, cast) in _ENV_KEYS.items():
        raw = env.get(key)
        if raw is None or raw == "":
            continue
        try:
            values[name] = cast(raw)
        except ValueError:
            raise ConfigError(f"{key}={raw!r} is not a valid {cast.__name__}") from None
    for name, value in overrides.items():
        if name not in _FIELD_NAMES:
            raise ConfigError(f"unknown config override {name!r}")
        if value is not None:
            values[name] = value
    return EngineConfig(**values)
