"""
Run directories and manifests.

PURPOSE: Give every CLI command a fresh timestamped output directory and record what
    is needed to reproduce it
DEPENDENCIES: pydantic, pyyaml, numpy, pandas

ARCHITECTURE NOTES:
- Directory name: <output_root>/<UTC yyyymmdd-HHMMSS>-<command>, with -1, -2, ...
  appended on collision
- manifest.yaml holds the config echo, seeds, sha256 of every input and output
  checkpoint, and package versions
- Inputs are only hashed, never written; outputs always land inside the run directory
"""

from __future__ import annotations

import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pydantic
import yaml
from pydantic import BaseModel, Field

from triplane_posterior import __version__
from triplane_posterior.config import RunConfig
from triplane_posterior.diffcore.checkpoint import file_digest

UTC = timezone.utc

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"


class FileRecord(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Everything needed to repeat a run."""

    command: str
    created_at: str
    config: dict[str, Any]
    seeds: list[int] = Field(default_factory=list)
    inputs: dict[str, FileRecord] = Field(default_factory=dict)
    outputs: dict[str, FileRecord] = Field(default_factory=dict)
    parameters: dict[str, Any] = Field(default_factory=dict)
    versions: dict[str, str] = Field(default_factory=dict)

    model_config = {"extra": "forbid"}

    @classmethod
    def load(cls, path: Path) -> RunManifest:
        with open(path, encoding="utf-8") as f:
            return cls.model_validate(yaml.safe_load(f))


def versions() -> dict[str, str]:
    return {
        "triplane_posterior": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


@dataclass
class RunContext:
    """An open run directory and the manifest being built for it."""

    command: str
    directory: Path
    config: RunConfig
    created_at: datetime
    seeds: list[int] = field(default_factory=list)
    inputs: dict[str, FileRecord] = field(default_factory=dict)
    outputs: dict[str, FileRecord] = field(default_factory=dict)
    parameters: dict[str, Any] = field(default_factory=dict)

    def record_input(self, role: str, path: Path) -> str:
        digest = file_digest(path)
        self.inputs[role] = FileRecord(path=str(path), sha256=digest)
        return digest

    def record_output(self, role: str, path: Path) -> str:
        digest = file_digest(path)
        self.outputs[role] = FileRecord(path=path.relative_to(self.directory).as_posix(), sha256=digest)
        return digest

    def manifest(self) -> RunManifest:
        return RunManifest(
            command=self.command,
            created_at=self.created_at.isoformat(timespec="seconds"),
            config=self.config.echo(),
            seeds=self.seeds,
            inputs=self.inputs,
            outputs=self.outputs,
            parameters=self.parameters,
            versions=versions(),
        )

    def write_manifest(self) -> Path:
        path = self.directory / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.manifest().model_dump(mode="json"), f, sort_keys=False)
        logger.info(f"Manifest written: {path}")
        return path


def start_run(config: RunConfig, command: str, now: datetime | None = None) -> RunContext:
    """Create a fresh run directory under config.output_root."""
    created = now or datetime.now(UTC)
    base = config.output_root / f"{created.strftime('%Y%m%d-%H%M%S')}-{command}"
    directory = base
    suffix = 0
    while directory.exists():
        suffix += 1
        directory = base.with_name(f"{base.name}-{suffix}")
    directory.mkdir(parents=True)
    logger.info(f"Run directory: {directory}")
    return RunContext(command=command, directory=directory, config=config, created_at=created)
