"""Non-dimensionalization of the physical inputs.

Turns membrane and conductivity data into the dimensionless scale parameters
the rest of the pipeline consumes.  The scale parameter epsilon admits two
printed definitions (a square-root form from the membrane time constant and
a direct ratio form); both are computed and the discrepancy is reported
rather than silently resolved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonPositiveInput(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """Physical inputs: lengths in cm, resistivity in kOhm cm^2,
    capacitance in uF/cm^2, conductivities in mS/cm^2."""

    ell_mes: float
    ell_mic: float
    L: float
    R_m: float
    C_m: float
    lambda_i: float
    lambda_e: float
    delta_v: float = 1.0
    delta_w: float = 1.0

    def __post_init__(self):
        for name in ("ell_mes", "ell_mic", "L", "R_m", "C_m",
                     "lambda_i", "lambda_e", "delta_v", "delta_w"):
            if getattr(self, name) <= 0:
                raise NonPositiveInput(f"{name} must be positive")
        if not self.ell_mic < self.ell_mes:
            raise NonPositiveInput("ell_mic must be smaller than ell_mes")


@dataclass(frozen=True)
class DerivedScales:
    epsilon: float            # sqrt(ell_mes / (R_m lambda))
    epsilon_ratio: float      # L / (R_m lambda)
    epsilon_defect: float     # |difference between the two definitions|
    delta: float              # ell_mic / L
    tau: float                # membrane charging time R_m C_m
    lambda_total: float
    conductivity_scale: float  # 1 / lambda, multiplies the raw tensors


def derive_scales(p: PhysicalParams) -> DerivedScales:
    lam = p.lambda_i + p.lambda_e
    eps = float(np.sqrt(p.ell_mes / (p.R_m * lam)))
    eps_ratio = p.L / (p.R_m * lam)
    return DerivedScales(
        epsilon=eps,
        epsilon_ratio=eps_ratio,
        epsilon_defect=abs(eps - eps_ratio),
        delta=p.ell_mic / p.L,
        tau=p.R_m * p.C_m,
        lambda_total=lam,
        conductivity_scale=1.0 / lam,
    )


def rescale_current(value, p: PhysicalParams):
    """Physical membrane current density to its dimensionless form."""
    return np.asarray(value) * (p.R_m / p.delta_v)


def unscale_current(value, p: PhysicalParams):
    return np.asarray(value) * (p.delta_v / p.R_m)


def rescale_gate_rate(value, p: PhysicalParams):
    """Physical gating rate to its dimensionless form."""
    return np.asarray(value) * (p.R_m * p.C_m / p.delta_w)


def unscale_gate_rate(value, p: PhysicalParams):
    return np.asarray(value) * (p.delta_w / (p.R_m * p.C_m))


def rescale_conductivity(matrix, p: PhysicalParams):
    """Normalize a conductivity tensor by the total average eigenvalue."""
    return np.asarray(matrix, dtype=float) / (p.lambda_i + p.lambda_e)
