"""INI configuration for the command-line pipeline.

Credentials never live in the file: ``backend.credential_env_var`` names the
environment variable that holds the key, and it is read only when a request is
about to be made.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError
from .pace import SamplingConfig

log = logging.getLogger(__name__)

SIMULATED = "simulated"


@dataclass(frozen=True)
class BackendConfig:
    endpoint: Optional[str] = None
    model_name: str = "gpt-4"
    credential_env_var: Optional[str] = None
    max_in_flight: int = 4
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_cap: float = 30.0
    timeout: float = 60.0
    seed: int = 0
    max_workers: int = 4

    @property
    def simulated(self) -> bool:
        return self.endpoint == SIMULATED


@dataclass(frozen=True)
class EmbedderConfig:
    endpoint: str = "mock"
    model_name: str = "text-embedding-ada-002"
    dim: int = 64
    credential_env_var: Optional[str] = None


@dataclass(frozen=True)
class CalibrationConfig:
    m: int = 5
    M: int = 5
    w_grid_step: float = 0.01
    band_level: float = 0.95
    confidence: str = "mean-score"


@dataclass(frozen=True)
class LabelConfig:
    n_queries: int = 4
    n_per_query: int = 128
    threshold: float = 2.3
    human_positive_min: int = 4


@dataclass(frozen=True)
class SplitConfig:
    retrieval_n: int = 0
    validation_n: int = 0
    test_n: int = 0


@dataclass(frozen=True)
class PathConfig:
    corpus: Optional[str] = None
    cache_dir: Optional[str] = None
    templates_dir: Optional[str] = None
    output_dir: str = "out"


@dataclass(frozen=True)
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    budgets_L: int = 3896
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    seed: int = 0
    simbench: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.budgets_L < 0:
            raise ConfigurationError("budgets.L must be non-negative")

    def require_backend(self):
        if not self.backend.endpoint:
            raise ConfigurationError("missing required key backend.endpoint")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "backend": BackendConfig,
    "embedder": EmbedderConfig,
    "calibration": CalibrationConfig,
    "labels": LabelConfig,
    "split": SplitConfig,
    "paths": PathConfig,
}
# INI spellings that differ from the dataclass field names
_SAMPLING_ALIASES = {"s": "rce_scale_max", "k1'": "k1p", "k2'": "k2p"}


def _coerce(cls, section: str, items) -> dict:
    exact = {f.name: f for f in fields(cls)}
    # fall back to case-insensitive names, except where they collide (m vs M)
    folded = {}
    for f in exact.values():
        folded.setdefault(f.name.lower(), []).append(f)
    out = {}
    for key, raw in items:
        f = exact.get(key)
        if f is None and len(folded.get(key.lower(), ())) == 1:
            f = folded[key.lower()][0]
        if f is None:
            log.warning("unknown config key %s.%s ignored", section, key)
            continue
        kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "str")
        try:
            if kind == "int":
                out[f.name] = int(raw)
            elif kind == "float":
                out[f.name] = float(raw)
            else:
                out[f.name] = raw.strip() or None
        except ValueError:
            raise ConfigurationError(f"{section}.{key}: cannot parse {raw!r} as {kind}") from None
    return out


def parse_config(text: str, require_backend: bool = True) -> Config:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    kw = {}
    for name in cp.sections():
        items = cp.items(name)
        if name in _SECTIONS:
            kw[name] = _SECTIONS[name](**_coerce(_SECTIONS[name], name, items))
        elif name == "sampling":
            items = [(_SAMPLING_ALIASES.get(k.lower(), k), v) for k, v in items]
            kw["sampling"] = SamplingConfig(**_coerce(SamplingConfig, name, items))
        elif name == "budgets":
            for k, v in items:
                if k.lower() == "l":
                    kw["budgets_L"] = int(v)
                else:
                    log.warning("unknown config key budgets.%s ignored", k)
        elif name == "run":
            for k, v in items:
                if k == "seed":
                    kw["seed"] = int(v)
                else:
                    log.warning("unknown config key run.%s ignored", k)
        elif name == "simbench":
            kw["simbench"] = dict(items)
        else:
            log.warning("unknown config section [%s] ignored", name)
    cfg = Config(**kw)
    if require_backend:
        cfg.require_backend()
    return cfg


def load_config(path, require_backend: bool = True) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} does not exist")
    return parse_config(p.read_text(encoding="utf-8"), require_backend)
