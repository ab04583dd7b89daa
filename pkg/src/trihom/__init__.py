"""Three-scale periodic homogenization engine for cardiac bidomain models.

Library layout:
    geometry     periodic voxel unit cells, measures, connectivity
    cellsolver   periodic corrector problems on active subdomains
    tensors      homogenized conductivity tensors and audits
    ionic        FitzHugh-Nagumo kinetics and structural audit
    macrosolver  macroscopic bidomain reaction-diffusion integrator
    microref     microscopic reference solver (validation oracle)
    nondim       physical-to-dimensionless scale derivation
    cli          batch front-end over one TOML run configuration
"""

import os as _os

# honor the THREADS cap before any numerical library spins up its pools
if "THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["THREADS"])

__version__ = "0.1.0"

from . import (cellsolver, errors, fem, geometry, io, ionic, macrosolver,
               microref, nondim, tensors)  # noqa: E402,F401
