from olm_tools.io.core import access, read, write
from olm_tools.io.olmt import read_tensor, write_tensor

__all__ = ["access", "read", "write", "read_tensor", "write_tensor"]
