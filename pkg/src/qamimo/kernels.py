"""Slot-loop backend selection.

The compiled extension is used when it imports; set ``QAMIMO_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _kernels_py
from ._kernels_py import CSIO, CSIO_LF, MWQ, PFS, PROPOSED

__all__ = ["run_block", "BACKEND", "python_run_block", "compiled_run_block",
           "PROPOSED", "CSIO", "CSIO_LF", "PFS", "MWQ", "SCHEDULER_CODES"]

SCHEDULER_CODES = {"proposed": PROPOSED, "csio": CSIO, "csio_lf": CSIO_LF,
                   "pfs": PFS, "mwq": MWQ}

python_run_block = _kernels_py.run_block

try:
    from ._kernels import run_block as compiled_run_block
except ImportError:  # extension not built
    compiled_run_block = None

if compiled_run_block is not None and not os.environ.get("QAMIMO_PURE_PYTHON"):
    run_block = compiled_run_block
    BACKEND = "cython"
else:
    run_block = python_run_block
    BACKEND = "python"
