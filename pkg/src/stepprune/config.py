"""Config-file loading for the CLI.

Files may be TOML or JSON, selected by extension. Config values sit
between built-in defaults and explicit command-line flags: flags win.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .accounting import DEFAULT_PRICES, PriceTable

# key -> (expected types, description)
_KNOWN_KEYS: dict[str, tuple] = {
    "rho": ((int, float), "target keep ratio"),
    "k_recent": ((int,), "recency floor size"),
    "theta_hi": ((int, float), "score override threshold"),
    "seed": ((int,), "seed for randomized baselines"),
    "method": ((str,), "compression method name"),
    "scorer": ((str,), "scorer spec: lexical or portable:<dir>"),
    "rules": ((str,), "path to an atom rule-set JSON file"),
}


def _load_structured(path: str | Path) -> Any:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(path.read_text(encoding="utf-8"))


def load_run_config(path: str | Path) -> dict[str, Any]:
    """Read compression settings from a config file.

    Only known keys are accepted; a typo raises instead of being ignored.
    """
    raw = _load_structured(path)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a key-value table")
    out: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in _KNOWN_KEYS:
            known = ", ".join(sorted(_KNOWN_KEYS))
            raise ValueError(f"{path}: unknown config key {key!r}; known keys: {known}")
        types, description = _KNOWN_KEYS[key]
        if not isinstance(value, types) or isinstance(value, bool):
            raise ValueError(f"{path}: {key} ({description}) has invalid value {value!r}")
        out[key] = value
    return out


def load_prices(path: str | Path | None) -> PriceTable:
    """Read a price table, or return the built-in list prices when no path given."""
    if path is None:
        return DEFAULT_PRICES
    raw = _load_structured(path)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: price table must be a key-value table")
    return PriceTable.from_mapping(raw)
