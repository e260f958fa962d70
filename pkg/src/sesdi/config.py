"""Plain-text ``key=value`` run configuration and per-module seed derivation."""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from .errors import ParameterError


def module_seed(root_seed, label) -> int:
    """Deterministic 32-bit seed for ``label``, derived from the single root seed."""
    ss = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


def parse_config(text, allowed=None) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys raise when ``allowed`` is given."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ParameterError(f"config line {lineno}: empty key")
        if allowed is not None and key not in allowed:
            raise ParameterError(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise ParameterError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, allowed=None) -> dict[str, str]:
    return parse_config(Path(path).read_text(), allowed)


def format_config(values: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in values.items())
