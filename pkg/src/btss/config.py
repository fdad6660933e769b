"""Run configuration: a flat ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str = ""
    output: str = ""
    # gaze geometry (px)
    line_tol: float = 40.0
    same_pos_radius: float = 30.0
    min_advance: float = 10.0
    regress_limit: float = 120.0
    max_saccade: float = 500.0
    vertical_limit: float = 150.0
    reading_direction: int = 1
    # HOF rules
    theta_o: float = 0.6
    theta_h: float = 0.5
    theta_p: float = 2.0
    # clustering
    k: int = 5
    seed: int | None = None
    # threshold filter
    filter: bool = True
    max_kbi: float = 2000.0
    max_pub: float = 6000.0
    include_deletions: bool = True

    # settings that never change results
    NON_SEMANTIC = ("input", "output")

    def resolve_paths(self) -> "RunConfig":
        if self.input:
            self.input = str(Path(self.input).resolve())
        if self.output:
            self.output = str(Path(self.output).resolve())
        return self

    def effective_seed(self) -> int:
        if self.seed is not None:
            return self.seed
        env = os.environ.get("BTSS_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"BTSS_SEED must be an integer, got {env!r}") from None
        return 0

    def geometry_kwargs(self) -> dict:
        return {k: getattr(self, k) for k in ("line_tol", "same_pos_radius", "min_advance",
                                              "regress_limit", "max_saccade",
                                              "vertical_limit", "reading_direction")}

    def semantic_dict(self) -> dict:
        d = asdict(self)
        for k in self.NON_SEMANTIC:
            d.pop(k)
        d["seed"] = self.effective_seed()
        return d

    def hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def update(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, raw, getattr(type(self), key, None)))
        return self


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "seed":
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {n}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        cfg.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg.resolve_paths()
