from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Literal, Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt

if TYPE_CHECKING:
    from typing import Any


Tensor = npt.NDArray[np.float64]


@runtime_checkable
class Denoiser(Protocol):
    """
    Anything the samplers can drive: a map x̂(y) from noisy to denoised rows,
    written against the shared primitive interface of `olm_tools.ndgrad`.
    """

    @property
    def dim(self) -> int: ...

    def bind(self, ops: Any) -> Any:
        """
        Lift the model's parameters onto `ops` once, so repeated applications
        share them.
        """
        ...

    def apply(self, ops: Any, y: Any, params: Any = None) -> Any: ...


JSON = dict[str, "JSON"] | list["JSON"] | str | int | float | bool | None
Attrs = dict[str, JSON]
PathLike = Path | str
AccessMode = Literal["w", "r"]
ObjectiveTag = Literal["mse", "ssim"]
DatasetKind = Literal["gaussian2d", "ksparse2d", "manifold2d", "idx"]
InitMode = Literal["pca", "random"]
PriorKind = Literal["trained", "oracle"]
OLMVariant = Literal["olm", "olm_seq", "olm_noise", "olm_ssim"]
BaselineMethod = Literal["pca", "random", "ica"]
