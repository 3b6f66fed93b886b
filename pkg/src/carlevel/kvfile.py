"""Line-oriented ``key = value`` text files.

Shared by dataset/chain sidecars, CLI config files and run manifests.
Keys are bare words; values are stored as strings and parsed by the
consumer. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ValidationError


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path, entries: dict, atomic: bool = False) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    text = "\n".join(lines) + "\n"
    path = Path(path)
    if atomic:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
    else:
        path.write_text(text)


def format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")] if text else []
