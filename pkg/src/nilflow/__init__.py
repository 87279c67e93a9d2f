"""Flow of fiber metrics and torsion on a nilpotent bundle over the circle."""

import os

_threads = os.environ.get("NILFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
