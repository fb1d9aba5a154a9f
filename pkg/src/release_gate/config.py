"""Tool configuration loaded from a JSON file.

Example ``release-gate.json``::

    {
      "dataset_path": "releases.csv",
      "project_start_date": "2019-07-03",
      "timezone": "UTC",
      "webhook_url": "https://hooks.example.com/T000/B000",
      "sources": [
        {"kind": "vcs", "base_url": "https://git.example.com/api/repo"},
        {"kind": "ci", "base_url": "https://ci.example.com/api/job", "retries": 2},
        {"kind": "quality", "base_url": "file://fixtures/quality"}
      ],
      "gate": {
        "warmup_releases": 10,
        "ensemble_mode": "lof_only",
        "ensemble_quorum": 3,
        "detector": {"k_neighbors": 20, "anomaly_threshold": 1.5, "review_threshold": 1.2}
      }
    }

Relative ``dataset_path`` and ``file://`` source paths resolve against the
config file's directory. ``RELEASE_GATE_TOKEN_<KIND>`` (e.g.
``RELEASE_GATE_TOKEN_VCS``) overrides a source's ``auth_token``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Mapping

from .collectors import SourceConfig
from .detectors import DetectorConfig
from .errors import ConfigError
from .gate import GateConfig

DEFAULT_CONFIG = "release-gate.json"
TOKEN_ENV_PREFIX = "RELEASE_GATE_TOKEN_"


@dataclass(frozen=True)
class ToolConfig:
    dataset_path: Path
    sources: tuple[SourceConfig, ...] = ()
    gate: GateConfig = field(default_factory=GateConfig)
    webhook_url: str | None = None
    project_start_date: date | None = None
    timezone: str = "UTC"

    def __post_init__(self) -> None:
        if not str(self.dataset_path):
            raise ConfigError("dataset_path must be nonempty")

    @property
    def candidate_path(self) -> Path:
        return Path(f"{self.dataset_path}.candidate.json")


def _build(cls, data: Mapping, context: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {context} key(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid {context}: {exc}") from None


def _resolve_file_url(url: str, base: Path) -> str:
    if not url.startswith("file:"):
        return url
    raw = url[len("file://"):] if url.startswith("file://") else url[len("file:"):]
    path = Path(raw)
    if not path.is_absolute():
        path = base / path
    return path.resolve().as_uri()


def parse_config(
    data: Mapping, base_dir: Path, env: Mapping[str, str] | None = None
) -> ToolConfig:
    env = os.environ if env is None else env
    data = dict(data)
    if "dataset_path" not in data:
        raise ConfigError("dataset_path is required")
    dataset_path = Path(data.pop("dataset_path"))
    if not dataset_path.is_absolute():
        dataset_path = base_dir / dataset_path

    sources = []
    for raw in data.pop("sources", []):
        raw = dict(raw)
        if "base_url" in raw:
            raw["base_url"] = _resolve_file_url(raw["base_url"], base_dir)
        token = env.get(f"{TOKEN_ENV_PREFIX}{str(raw.get('kind', '')).upper()}")
        if token:
            raw["auth_token"] = token
        sources.append(_build(SourceConfig, raw, "source"))

    gate_raw = dict(data.pop("gate", {}))
    detector = _build(DetectorConfig, gate_raw.pop("detector", {}), "detector")
    gate = _build(GateConfig, {**gate_raw, "detector_config": detector}, "gate")

    start = data.pop("project_start_date", None)
    try:
        start_date = date.fromisoformat(start) if start else None
    except ValueError:
        raise ConfigError(f"project_start_date {start!r} is not YYYY-MM-DD") from None

    cfg = ToolConfig(
        dataset_path=dataset_path,
        sources=tuple(sources),
        gate=gate,
        webhook_url=data.pop("webhook_url", None),
        project_start_date=start_date,
        timezone=data.pop("timezone", "UTC"),
    )
    if data:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(data))}")
    return cfg


def load_config(path: str | os.PathLike, env: Mapping[str, str] | None = None) -> ToolConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data, path.resolve().parent, env)
