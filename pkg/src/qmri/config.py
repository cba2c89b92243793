"""Flat `key = value` config files: parse, dump, and hash.

Values stay strings at this layer; each consumer coerces what it needs.
Lines starting with `#` are comments and ignored on load, which lets a
provenance record carry metadata alongside replayable keys.
"""

from __future__ import annotations

import hashlib

__all__ = ["parse_config", "parse_config_text", "dump_config", "config_hash"]


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config_text(fh.read())


def dump_config(cfg: dict, header: str | None = None) -> str:
    lines = [] if header is None else [f"# {header}"]
    for key in sorted(cfg):
        lines.append(f"{key} = {cfg[key]}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
