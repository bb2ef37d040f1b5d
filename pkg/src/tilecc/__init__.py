"""Desk-scale math-to-kernel tensor compiler.

Parses tensor-expression programs, auto-schedules them (tiling, fusion,
rolling-update reduction fusion, data localization), lowers through a scalar
IR and two tile IRs with algebraic rewriting, tunes parameters against a
virtual-device cost model, and emits tile-language kernel text. Every stage
is executable by an interpreter so results check against a high-precision
reference instead of a GPU.
"""

__version__ = "0.1.0"

from .frontend.ast import BoundProgram, DimBinding, TensorProgram, bind_dims
from .frontend.elaborate import elaborate
from .frontend.oracle import oracle_eval, read_tensors, write_tensors
from .frontend.parser import parse_program, print_program
from .numerics import Precision

__all__ = [
    "BoundProgram",
    "DimBinding",
    "Precision",
    "TensorProgram",
    "bind_dims",
    "elaborate",
    "oracle_eval",
    "parse_program",
    "print_program",
    "read_tensors",
    "write_tensors",
    "__version__",
]
