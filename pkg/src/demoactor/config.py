"""Toolkit configuration: backend endpoints, run defaults, paths and mode."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .backtracker import RecoveryConfig
from .model import ModelError
from .orchestrator import RunConfig

CONFIG_ENV = "DEMOACTOR_CONFIG"
DEFAULT_NAMES = ("toolkit-config", "toolkit-config.yaml", "toolkit-config.yml", "toolkit-config.json")
ENDPOINT_ROLES = ("instructor", "grounder", "judge", "planner")
# keys that would put a secret into a file
_SECRET_KEYS = {"token", "api_key", "apikey", "key", "secret", "password", "authorization"}


class ConfigError(ModelError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    token_env: str | None = None
    timeout: float = 30.0
    model: str = "default"
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.url:
            raise ConfigError("endpoint url must not be empty")
        if self.timeout <= 0:
            raise ConfigError(f"endpoint timeout must be positive, got {self.timeout}")


@dataclass(frozen=True)
class Paths:
    bundles: Path = Path("bundles")
    instructions: Path = Path("instructions")
    logs: Path = Path("logs")


@dataclass(frozen=True)
class ToolkitConfig:
    mode: str = "sim"
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)
    run: RunConfig = field(default_factory=RunConfig)
    paths: Paths = field(default_factory=Paths)
    source: Path | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("sim", "real"):
            raise ConfigError(f"mode must be 'sim' or 'real', got {self.mode!r}")
        unknown = set(self.endpoints) - set(ENDPOINT_ROLES)
        if unknown:
            raise ConfigError(f"unknown endpoint roles: {sorted(unknown)}")
        if self.mode == "real":
            missing = [r for r in ENDPOINT_ROLES if r not in self.endpoints]
            if missing:
                raise ConfigError(f"real mode needs endpoints for: {', '.join(missing)}")

    def endpoint(self, role: str) -> EndpointConfig:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ConfigError(f"no {role} endpoint configured") from None

    def with_mode(self, mode: str) -> ToolkitConfig:
        return replace(self, mode=mode)


def _endpoint(role: str, raw: Any) -> EndpointConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"endpoint {role!r} must be a mapping")
    secrets = _SECRET_KEYS & {k.lower() for k in raw}
    if secrets:
        raise ConfigError(f"endpoint {role!r}: credentials go in environment variables, "
                          f"not the config file (found {sorted(secrets)})")
    known = {"url", "token_env", "timeout", "model"}
    return EndpointConfig(
        url=str(raw.get("url", "")),
        token_env=raw.get("token_env"),
        timeout=float(raw.get("timeout", 30.0)),
        model=str(raw.get("model", "default")),
        options={k: v for k, v in raw.items() if k not in known},
    )


def _run_config(raw: dict) -> RunConfig:
    rec = raw.get("recovery") or {}
    try:
        recovery = RecoveryConfig(**rec)
        rest = {k: v for k, v in raw.items() if k != "recovery"}
        return RunConfig(recovery=recovery, **rest)
    except (TypeError, ModelError) as exc:
        raise ConfigError(f"bad run settings: {exc}") from exc


def parse_config(raw: Any, source: Path | None = None) -> ToolkitConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    endpoints = {str(k): _endpoint(str(k), v) for k, v in (raw.get("endpoints") or {}).items()}
    paths_raw = raw.get("paths") or {}
    paths = Paths(**{k: Path(v) for k, v in paths_raw.items() if k in ("bundles", "instructions", "logs")})
    return ToolkitConfig(
        mode=str(raw.get("mode", "sim")),
        endpoints=endpoints,
        run=_run_config(raw.get("run") or {}),
        paths=paths,
        source=source,
    )


def load_config_file(path: str | Path) -> ToolkitConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"config {path} is not valid: {exc}") from exc
    return parse_config(raw, source=path)


def discover_config(explicit: str | Path | None = None, cwd: str | Path | None = None,
                    environ: dict[str, str] | None = None) -> ToolkitConfig:
    """--config beats the environment variable, which beats ./toolkit-config."""
    environ = os.environ if environ is None else environ
    if explicit:
        return load_config_file(explicit)
    if environ.get(CONFIG_ENV):
        return load_config_file(environ[CONFIG_ENV])
    base = Path(cwd) if cwd is not None else Path.cwd()
    for name in DEFAULT_NAMES:
        candidate = base / name
        if candidate.is_file():
            return load_config_file(candidate)
    return ToolkitConfig()
