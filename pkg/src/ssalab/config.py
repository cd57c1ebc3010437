"""Loading the structured study configuration."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml

DEFAULT_CONFIG = "kundur_two_area.yaml"


def load_config(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("ssalab.data").joinpath(DEFAULT_CONFIG).read_text()
    else:
        text = Path(path).read_text()
    cfg = yaml.safe_load(text)
    for key in ("buses", "branches", "generators"):
        if key not in cfg:
            raise ValueError(f"config is missing required key {key!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def merged(cfg: dict, overrides: dict) -> dict:
    """Deep-merge ``overrides`` into a copy of ``cfg``."""
    out = copy.deepcopy(cfg)

    def _merge(dst, src):
        for k, val in src.items():
            if isinstance(val, dict) and isinstance(dst.get(k), dict):
                _merge(dst[k], val)
            else:
                dst[k] = copy.deepcopy(val)

    _merge(out, overrides)
    return out
