from __future__ import annotations

import re
from pathlib import Path
from typing import TYPE_CHECKING

import fsspec
from fsspec.utils import infer_compression

from olm_tools.io import idx, olmt, pgm

if TYPE_CHECKING:
    from typing import Any

    import numpy as np
    import numpy.typing as npt

    from olm_tools.type import AccessMode, PathLike

_formats = (".olmt", ".pgm", ".idx")
# MNIST-style archive names carry the rank in the name instead of a suffix
_idx_name = re.compile(r"idx(\d)-ubyte$")


def split_format(path: PathLike) -> tuple[str, str | None]:
    """
    Return the format suffix of `path` and the compression its final suffix
    names, if any. `"train-images-idx3-ubyte.gz"` gives `(".idx", "gzip")`.
    """
    _, subpath = fsspec.core.split_protocol(str(path))
    name = Path(subpath).name
    compression = infer_compression(name)
    if compression is not None:
        name = Path(name).stem
    if _idx_name.search(name):
        return ".idx", compression
    suffix = Path(name).suffix
    if suffix not in _formats:
        msg = f"Cannot access file with extension {suffix!r}. Try one of {_formats}"
        raise ValueError(msg)
    return suffix, compression


def _idx_rank(path: PathLike) -> int:
    match = _idx_name.search(Path(str(path)).name.removesuffix(".gz"))
    if match is None:
        # rank lives in the last byte of the magic number
        return idx.read_bytes(path)[3]
    return int(match.group(1))


def access(path: PathLike, mode: AccessMode, data: npt.ArrayLike | None = None, **kwargs: Any) -> Any:
    """
    Read or write an array in one of the supported single-file formats.

    Parameters
    ----------
    path: str | Path
        The file to access. The format is chosen from the suffix: `.olmt`
        tensors, `.pgm` greyscale images, or IDX archives (`.idx` or the
        MNIST-style `*-idx3-ubyte` names), optionally gzip-compressed.
    mode: "r" | "w"
        Read the array at `path`, or write `data` to it.
    data: array-like, optional
        The array to write. Required when `mode` is "w".

    Returns
    -------
    The array read, or `None` when writing.
    """
    suffix, _ = split_format(path)
    if mode == "r":
        if suffix == ".olmt":
            return olmt.read_tensor(path)
        if suffix == ".pgm":
            return pgm.read_pgm(path)
        return idx.read_idx(path, rank=kwargs.get("rank") or _idx_rank(path))
    if mode == "w":
        if data is None:
            msg = f"Writing {path} requires `data`"
            raise ValueError(msg)
        if suffix == ".olmt":
            olmt.write_tensor(path, data)
        elif suffix == ".pgm":
            pgm.write_pgm(path, data)
        else:
            idx.write_idx(path, data)
        return None
    msg = f"Unsupported access mode {mode!r}; use 'r' or 'w'"
    raise ValueError(msg)


def read(path: PathLike, **kwargs: Any) -> np.ndarray[Any, Any]:
    """
    Read-only access to an array stored at `path`. See `access`.
    """
    return access(path, mode="r", **kwargs)


def write(path: PathLike, data: npt.ArrayLike) -> None:
    access(path, mode="w", data=data)
