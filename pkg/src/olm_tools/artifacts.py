"""
Layout of an experiment directory and the file helpers shared by the
pipeline stages and the report.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from pathlib import Path
from typing import TYPE_CHECKING, Any

import fsspec
import numpy as np

from olm_tools.measurement import MeasurementMatrix, load_measurement

if TYPE_CHECKING:
    from olm_tools.type import PathLike

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG_FILE = "config.toml"
MODEL_DIR = "model"
MEASUREMENT_DIR = "measurements"
STATS_DIR = "stats"
RECONSTRUCTION_DIR = "reconstructions"
DATA_DIR = "data"
CURVES_FILE = "curves.csv"
SWEEP_FILE = "sweep.json"
METRICS_FILE = "metrics.json"
ANALYSIS_FILE = "analysis.json"

_MEASUREMENT_NAME = re.compile(r"^(?P<method>.+)_k(?P<k>\d+)\.olmt$")


def checksum(path: PathLike) -> str:
    digest = hashlib.sha256()
    with fsspec.open(str(path), mode="rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def collect_checksums(directory: PathLike) -> dict[str, str]:
    """
    sha256 of every file below `directory` except the manifest, keyed by
    relative posix path.
    """
    root = Path(directory)
    return {
        path.relative_to(root).as_posix(): checksum(path)
        for path in sorted(root.rglob("*"))
        if path.is_file() and path.name != MANIFEST
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        number = float(value)
        if np.isfinite(number):
            return number
        return "nan" if np.isnan(number) else ("inf" if number > 0 else "-inf")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: PathLike, document: Any) -> None:
    """
    Write `document` as sorted, indented JSON. Non-finite floats are written as
    the strings "inf", "-inf" and "nan".
    """
    with fsspec.open(str(path), mode="w") as fh:
        json.dump(_jsonable(document), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path: PathLike) -> Any:
    with fsspec.open(str(path), mode="r") as fh:
        return json.load(fh)


def measurement_path(directory: PathLike, method: str, k: int) -> Path:
    return Path(directory) / MEASUREMENT_DIR / f"{method}_k{k}.olmt"


def load_measurements(directory: PathLike) -> dict[tuple[str, int], MeasurementMatrix]:
    """
    Every stored measurement matrix of an experiment, keyed by (method, k) and
    sorted.
    """
    folder = Path(directory) / MEASUREMENT_DIR
    found: dict[tuple[str, int], MeasurementMatrix] = {}
    if not folder.exists():
        return found
    for path in sorted(folder.glob("*.olmt")):
        match = _MEASUREMENT_NAME.match(path.name)
        if match is None:
            logger.warning("Ignoring unrecognized file %s", path)
            continue
        found[(match["method"], int(match["k"]))] = load_measurement(path)
    return dict(sorted(found.items()))

