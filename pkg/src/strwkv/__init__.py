"""Linear-time bidirectional WKV kernels and a toy RWKV style-transfer stack."""
import os

import numba

# the bundled TBB is too old for numba; fall back to OpenMP/workqueue quietly
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"
if os.environ.get("STRWKV_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["STRWKV_THREADS"]), numba.config.NUMBA_NUM_THREADS)))

from . import autodiff, scan, shift, tensor, wkv  # noqa: E402,F401

__version__ = "0.1.0"
