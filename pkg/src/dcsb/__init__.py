"""Dual-coupling spin-boson dynamics in the noninteracting-blip approximation."""
from .bath import PhysParams
from .kernels import KernelConfig

__version__ = "0.1.0"
__all__ = ["PhysParams", "KernelConfig", "__version__"]
