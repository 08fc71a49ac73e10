"""Shared test configuration: pin BLAS to one thread before numpy loads,
so bitwise-reproducibility assertions hold."""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
