"""Pipeline configuration: file + environment + flag resolution, and digests.

A config is a flat JSON document (versioned via ``schema_version``).
Precedence, lowest to highest: built-in defaults, config file, environment
variables prefixed ``CTXGAIN_`` (for CI), explicit flag overrides.  The
fully resolved config is written next to outputs, and a short digest of
the semantically relevant fields is embedded in every artifact so mixed
outputs can never be confused: equal digests means identical effective
configuration.  Worker count and output directory deliberately do not
enter the digest, because they must not change any result.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .corpus import ConfigError
from .scoring import ScoringConfig

ENV_PREFIX = "CTXGAIN_"
SCHEMA_VERSION = 1

#: per-source length thresholds (tokens) separating long from short texts
DEFAULT_LENGTH_THRESHOLDS = {
    "arxiv": 16384,
    "book": 65536,
    "commoncrawl": 32768,
}
FALLBACK_LENGTH_THRESHOLD = 32768


@dataclass
class PipelineConfig:
    inputs: list[str] = field(default_factory=list)
    input_format: str = "jsonl"
    tokenizer: str = "bytes"
    source: str = "default"
    length_threshold: int | None = None

    pack_len: int = 65536
    short_len: int = 4096
    long_len: int = 65536
    chunk_len: int | None = None
    overlap: int | None = None
    mask_doc_boundaries: bool = False
    clip_negative: bool = False

    order: int = 3
    add_k: float = 0.25
    cache_lambda: float = 0.3
    cache_decay: float = 0.999

    model_path: str | None = None
    endpoint: str | None = None

    keep_fraction: float = 0.2
    long_fraction: float = 0.8

    seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    write_sidecars: bool = False
    write_packed: bool = True
    schema_version: int = SCHEMA_VERSION

    # -- derived views -------------------------------------------------------

    def scoring_config(self) -> ScoringConfig:
        return ScoringConfig(
            short_len=self.short_len,
            long_len=self.long_len,
            chunk_len=self.chunk_len,
            overlap=self.overlap,
            mask_doc_boundaries=self.mask_doc_boundaries,
            clip_negative=self.clip_negative,
        )

    def resolved_length_threshold(self) -> int:
        if self.length_threshold is not None:
            return self.length_threshold
        return DEFAULT_LENGTH_THRESHOLDS.get(self.source.lower(), FALLBACK_LENGTH_THRESHOLD)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    #: fields that define what gets computed (not where, or how parallel)
    _DIGEST_EXCLUDE = ("workers", "out_dir", "write_sidecars", "write_packed")

    def digest(self) -> str:
        payload = {k: v for k, v in self.as_dict().items() if k not in self._DIGEST_EXCLUDE}
        payload["length_threshold"] = self.resolved_length_threshold()
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    # -- validation ------------------------------------------------------------

    def validate(self, command: str = "") -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {self.schema_version}")
        if self.input_format not in ("lines", "jsonl", "files"):
            raise ConfigError(f"unknown input_format {self.input_format!r}")
        if self.pack_len < 2:
            raise ConfigError(f"pack_len must be >= 2, got {self.pack_len}")
        if not (1 <= self.short_len < self.long_len):
            raise ConfigError(f"need 1 <= short_len < long_len, got {self.short_len}, {self.long_len}")
        if self.long_len > self.pack_len:
            raise ConfigError(f"long_len {self.long_len} exceeds pack_len {self.pack_len}")
        self.scoring_config()  # validates chunk_len/overlap
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if not (0.0 <= self.long_fraction <= 1.0):
            raise ConfigError(f"long_fraction must be in [0, 1], got {self.long_fraction}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.order < 1:
            raise ConfigError(f"order must be >= 1, got {self.order}")
        if command in ("fit", "score"):
            if not self.inputs:
                raise ConfigError(f"{command} requires at least one input path")
            for p in self.inputs:
                if not Path(p).exists():
                    raise ConfigError(f"input path does not exist: {p}")
        if command == "score":
            if self.endpoint is None and self.model_path is None:
                raise ConfigError("score requires either model_path or endpoint")
            if self.endpoint is not None and self.model_path is not None:
                raise ConfigError("model_path and endpoint are mutually exclusive")
            if self.model_path is not None and not Path(self.model_path).exists():
                raise ConfigError(f"model file does not exist: {self.model_path}")
        if self.tokenizer != "bytes" and not Path(self.tokenizer).exists():
            raise ConfigError(f"tokenizer file does not exist: {self.tokenizer}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, raw: str) -> Any:
    ftype = _FIELD_TYPES.get(name, "str")
    if name == "inputs":
        return [p for p in raw.split(",") if p]
    if "bool" in str(ftype):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if "int" in str(ftype):
        return int(raw)
    if "float" in str(ftype):
        return float(raw)
    return raw


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Build a config from file, CTXGAIN_* environment, and overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = set(data) - set(_FIELD_TYPES)
        if unknown:
            raise ConfigError(f"unknown config field(s) in {path}: {sorted(unknown)}")
        values.update(data)
    env = os.environ if env is None else env
    for name in _FIELD_TYPES:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = _coerce(name, env[env_key])
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def write_resolved(config: PipelineConfig, out_dir: str | Path) -> Path:
    from . import __version__

    out = Path(out_dir) / "config.resolved.json"
    payload = dict(config.as_dict(), config_digest=config.digest(), tool_version=__version__)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
