"""Run configuration merged from three layers: CLI flag > config file > default.

The config file is a YAML mapping. Keys mirror RunConfig field names; backend
settings may also be grouped under a nested `backend:` mapping with keys
kind/url/model/credential_env/script. Credentials themselves never appear in
config files: the file only names the environment variable to read.
"""

from __future__ import annotations

import dataclasses
import shlex
from dataclasses import dataclass
from pathlib import Path

import yaml

from .bridge import HarnessBridge, ResourceLimits
from .engine import DebugConfig, LEVELS, MODES
from .gateway import AuditLog, ModelParams, RetryPolicy, make_backend
from .corpus import SPLITS


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    out: str = "out"
    backend: str = "script"          # script | http
    script: str | None = None        # scripted replies file for backend=script
    url: str | None = None           # API base URL for backend=http
    model: str = ""
    credential_env: str = "OPENAI_API_KEY"
    harness: str | None = None       # harness command; default: autodetect
    mode: str = "chat"               # chat | completion
    level: str = "block"             # line | block | function
    max_iterations: int = 10
    blocks: int = 10
    token_budget: int = 3097
    line_level_max: int = 50
    template_version: str = "v1"
    visible_split: str = "declared"
    workers: int = 1
    timeout: float = 10.0
    max_events: int = 50_000
    max_value_chars: int = 256
    task_budget_secs: float = 600.0
    temperature: float = 0.0
    max_response_tokens: int = 1024
    request_timeout: float = 60.0
    max_retries: int = 2
    backoff_secs: float = 1.0

    def __post_init__(self):
        if self.backend not in ("script", "http"):
            raise ConfigError(f"backend must be script or http, got {self.backend!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {sorted(LEVELS)}, got {self.level!r}")
        if self.visible_split not in SPLITS:
            raise ConfigError(f"visible_split must be one of {sorted(SPLITS)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def validate_for_run(config: RunConfig) -> None:
    """Checks that only matter when a backend is about to be used."""
    if config.backend == "script" and config.workers > 1:
        raise ConfigError("scripted backend replays in order; workers must stay 1")
    if config.backend == "script" and not config.script:
        raise ConfigError("backend=script needs a script file (--script)")
    if config.backend == "http" and not config.url:
        raise ConfigError("backend=http needs an API base URL (--url)")


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_BACKEND_KEYS = {"kind": "backend", "url": "url", "model": "model",
                 "credential_env": "credential_env", "script": "script"}


def _read_config_file(path: str | Path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    merged: dict = {}
    for key, value in doc.items():
        if key == "backend" and isinstance(value, dict):
            for bkey, bval in value.items():
                if bkey not in _BACKEND_KEYS:
                    raise ConfigError(f"unknown backend key {bkey!r} in {path}")
                merged[_BACKEND_KEYS[bkey]] = bval
        elif key in _FIELD_NAMES:
            merged[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r} in {path}")
    return merged


def load_run_config(cli_overrides: dict, config_path: str | Path | None = None) -> RunConfig:
    layers: dict = {}
    if config_path is not None:
        layers.update(_read_config_file(config_path))
    for key, value in cli_overrides.items():
        if value is None:
            continue
        if key not in _FIELD_NAMES:
            raise ConfigError(f"unknown option {key!r}")
        layers[key] = value
    try:
        return RunConfig(**layers)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def render_config(config: RunConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(config), sort_keys=True)


def as_debug_config(config: RunConfig) -> DebugConfig:
    return DebugConfig(
        max_blocks=config.blocks,
        token_budget=config.token_budget,
        level=config.level,
        line_level_max=config.line_level_max,
        mode=config.mode,
        max_iterations=config.max_iterations,
        template_version=config.template_version,
    )


def as_limits(config: RunConfig) -> ResourceLimits:
    return ResourceLimits(
        timeout_secs=config.timeout,
        max_events=config.max_events,
        max_value_chars=config.max_value_chars,
    )


def as_model_params(config: RunConfig) -> ModelParams:
    return ModelParams(
        model_name=config.model,
        temperature=config.temperature,
        max_response_tokens=config.max_response_tokens,
        request_timeout=config.request_timeout,
        retry_policy=RetryPolicy(
            max_retries=config.max_retries, backoff_secs=config.backoff_secs
        ),
    )


def build_backend(config: RunConfig, audit: AuditLog | None = None):
    return make_backend(
        config.backend,
        url=config.url,
        model=config.model,
        credential_env=config.credential_env,
        script_path=config.script,
        audit=audit,
    )


def build_bridge(config: RunConfig) -> HarnessBridge:
    command = shlex.split(config.harness) if config.harness else None
    return HarnessBridge(command=command)
