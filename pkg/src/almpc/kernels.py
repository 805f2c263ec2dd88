"""Select the compiled kernels when available, else the numpy fallback.

Set ``ALMPC_PURE_PYTHON=1`` to force the fallback (used by the parity tests
and the benchmark).
"""
import os

from . import _kernels_py

BACKEND = "python"
admm_loop = _kernels_py.admm_loop
hit_and_run = _kernels_py.hit_and_run

if not os.environ.get("ALMPC_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        admm_loop = _compiled.admm_loop
        hit_and_run = _compiled.hit_and_run

SOLVED = _kernels_py.SOLVED
RUNNING = _kernels_py.RUNNING
PRIMAL_INFEASIBLE = _kernels_py.PRIMAL_INFEASIBLE
DUAL_INFEASIBLE = _kernels_py.DUAL_INFEASIBLE
UNBOUNDED_CHORD = _kernels_py.UNBOUNDED_CHORD
BIG = _kernels_py.BIG
