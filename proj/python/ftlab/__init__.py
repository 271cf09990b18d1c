"""Desk-scale fine-tuning laboratory: SFT, DPO, synthetic-data RL and
data scaling-law measurement on a toy autoregressive transformer."""

from ._core import *  # noqa: F401,F403
from ._core import __all__ as _core_all

__all__ = list(_core_all)
__version__ = "0.1.0"
