"""FitzHugh-Nagumo membrane kinetics and a numerical audit of its structure.

The ionic current splits into a cubic part in the potential and a linear
part in the gating variable; the gate follows a linear recovery law.  The
audit samples the structural growth/monotonicity bounds the analysis relies
on and reports the tightest constants seen, never universal claims.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GROWTH_EXPONENT = 4  # cubic nonlinearity


@dataclass(frozen=True)
class FhnParams:
    """Kinetic parameters; defaults are non-normative demo values."""

    a: float = 0.1
    b: float = 0.5
    lam: float = -1.0
    theta: float = 0.25

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("a and b must be nonnegative")
        if self.lam >= 0:
            raise ValueError("lam must be negative")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


def i1(v, p: FhnParams):
    """Cubic potential current lam * v (1 - v)(v - theta)."""
    v = np.asarray(v, dtype=float)
    return p.lam * v * (1.0 - v) * (v - p.theta)


def i2(w, p: FhnParams):
    """Linear gating current -lam * w."""
    return -p.lam * np.asarray(w, dtype=float)


def i_ion(v, w, p: FhnParams):
    """Total ionic current density, the sum of the two parts."""
    return i1(v, p) + i2(w, p)


def h_gate(v, w, p: FhnParams):
    """Gating rate a v - b w."""
    return p.a * np.asarray(v, dtype=float) - p.b * np.asarray(w, dtype=float)


def _i1_prime(v, p):
    v = np.asarray(v, dtype=float)
    return p.lam * (-3.0 * v * v + 2.0 * (1.0 + p.theta) * v - p.theta)


@dataclass
class AssumptionAudit:
    """Sampled witnesses for the structural bounds, r = 4 throughout."""

    box: tuple
    samples: int
    r: int = GROWTH_EXPONENT
    alpha1: float = None            # cubic growth, upper side
    cubic_lower_radius: float = None  # |v| beyond which the lower bound holds
    alpha2: float = None
    alpha3: float = None
    alpha4: float = None
    alpha5: float = None            # sampled min of the coercivity ratio
    beta1: float = None             # shift making the cubic part increasing
    beta2: float = 0.0
    monotone_after_shift: bool = None
    strong_monotonicity_C: float = None
    violations: list = field(default_factory=list)


def audit_assumptions(p: FhnParams, box=(-3.0, 3.0, -3.0, 3.0),
                      samples=201) -> AssumptionAudit:
    """Sample the growth and monotonicity structure over a (v, w) box.

    Reported constants are extrema over the sample set.  The cubic lower
    bound cannot hold near the zeros of the cubic, so the audit reports the
    radius beyond which it holds with the sampled constant instead.
    """
    vmin, vmax, wmin, wmax = box
    v = np.linspace(vmin, vmax, samples)
    w = np.linspace(wmin, wmax, samples)
    audit = AssumptionAudit(box=tuple(box), samples=samples)

    # upper growth of the cubic part: |I1| <= alpha1 (|v|^3 + 1)
    ratio_up = np.abs(i1(v, p)) / (np.abs(v) ** 3 + 1.0)
    audit.alpha1 = float(ratio_up.max())

    # lower growth holds outside a finite radius; find it on the sample grid
    big = np.linspace(1.0, 100.0, 4001)
    ok = np.abs(i1(big, p)) * audit.alpha1 >= np.abs(big) ** 3
    audit.cubic_lower_radius = float(big[np.argmax(ok)]) if ok.any() else np.inf
    if not ok.any():
        audit.violations.append("cubic lower bound never holds on [1, 100]")

    audit.alpha2 = float((np.abs(i2(w, p)) / (np.abs(w) + 1.0)).max())
    audit.alpha3 = max(p.a, p.b)

    # coercivity pairing: I2(w) v - alpha4 H(v, w) w >= alpha5 |w|^2.
    # alpha4 = |lam|/a cancels the cross term when a > 0.
    audit.alpha4 = (-p.lam / p.a) if p.a > 0 else 1.0
    V, W = np.meshgrid(v, w, indexing="ij")
    lhs = i2(W, p) * V - audit.alpha4 * h_gate(V, W, p) * W
    wsq = W ** 2
    mask = wsq > 1e-12
    audit.alpha5 = float((lhs[mask] / wsq[mask]).min()) if mask.any() else 0.0
    if audit.alpha5 < 0:
        audit.violations.append("coercivity pairing fails on the box")

    # beta1 shift making I1 + beta1 z strictly increasing on the box
    dmin = float(_i1_prime(v, p).min())
    audit.beta1 = max(0.0, -dmin) + 1e-9
    shifted_slope = _i1_prime(v, p) + audit.beta1
    audit.monotone_after_shift = bool((shifted_slope > 0).all())

    # strong monotonicity constant over sample pairs
    z1 = v[:, None]
    z2 = v[None, :]
    f1 = i1(z1, p) + audit.beta1 * z1
    f2 = i1(z2, p) + audit.beta1 * z2
    num = (1.0 + np.abs(z1) + np.abs(z2)) ** (audit.r - 2) * (z1 - z2) ** 2
    den = (f1 - f2) * (z1 - z2)
    off = ~np.eye(samples, dtype=bool)
    good = off & (den > 0)
    if np.any(off & ~good):
        audit.violations.append("shifted cubic not monotone at sample pairs")
        audit.strong_monotonicity_C = np.inf
    else:
        audit.strong_monotonicity_C = float((num[good] / den[good]).max())
    return audit
