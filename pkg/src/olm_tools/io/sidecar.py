"""
Plain-text `key=value` sidecars that describe a stored tensor or model.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import fsspec

if TYPE_CHECKING:
    from collections.abc import Mapping

    from olm_tools.type import PathLike


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")


def format_value(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    text = str(value)
    if "\n" in text:
        msg = f"Sidecar values must fit on one line, got {text!r}"
        raise ValueError(msg)
    return text


def write_sidecar(path: PathLike, entries: Mapping[str, object]) -> None:
    lines = []
    for key, value in entries.items():
        if "=" in key or not key.strip():
            msg = f"Invalid sidecar key {key!r}"
            raise ValueError(msg)
        lines.append(f"{key}={format_value(value)}")
    with fsspec.open(str(path), mode="w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sidecar(path: PathLike) -> dict[str, str]:
    with fsspec.open(str(path), mode="r") as fh:
        text = fh.read()
    entries: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            msg = f"Line {number} of {path} is not a key=value pair: {line!r}"
            raise ValueError(msg)
        entries[key.strip()] = value.strip()
    return entries


def parse_ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v)
