"""Function signature recovery from disassembled stripped-binary functions."""

from ._accel import USE_NUMBA, backend
from .labels import NUM_CLASSES, PC_CLASSES, PT_CLASSES, TASKS, SignatureLabel

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "backend",
    "NUM_CLASSES",
    "PC_CLASSES",
    "PT_CLASSES",
    "TASKS",
    "SignatureLabel",
]
