"""Spatial pooler for video classification with a data-parallel overlap/inhibition backend."""

from htmsp.errors import ComputationError, ConfigError, HtmError, InputError
from htmsp.sp import SpConfig, SpState, init_sp, sp_step

__version__ = "0.1.0"

__all__ = ["ComputationError", "ConfigError", "HtmError", "InputError", "SpConfig", "SpState",
           "init_sp", "sp_step", "__version__"]
