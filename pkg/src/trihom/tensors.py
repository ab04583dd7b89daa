"""Homogenized conductivity tensors assembled from corrector fields.

Every level uses the same quadrature as the finite-element assembly, so a
vanishing corrector turns the tensor into the plain volume average of the
coefficient to machine precision.  Normalization constants follow the level:
the mesoscale tensors divide by the full cell volume while integrating over
the conducting part only, so perforations scale the result by the conducting
volume fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cellsolver, fem, geometry
from .errors import MissingCorrector, ResidualTooHigh, TrihomError

LEVEL_EXTRA_MESO = "extracellular_meso"
LEVEL_INTRA_MICRO = "intracellular_micro"
LEVEL_INTRA_TWO_LEVEL = "intracellular_two_level"

SYMMETRY_RTOL = 1e-8


@dataclass
class HomogenizedTensor:
    """Constant effective conductivity with provenance metadata.

    `axes` lists the cell axes the tensor covers; it is the full set unless
    blocked directions were deliberately excluded (perforated cells that only
    percolate along some axes).  Entries are symmetrized after assembly; the
    raw asymmetry defect is kept in the provenance.
    """

    entries: np.ndarray
    level: str
    axes: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        T = np.asarray(self.entries, dtype=float)
        scale = max(np.abs(T).max(), np.finfo(float).tiny)
        defect = float(np.abs(T - T.T).max())
        self.provenance.setdefault("asymmetry_defect", defect)
        if defect > SYMMETRY_RTOL * scale:
            raise TrihomError(
                f"homogenized tensor asymmetry {defect:.3e} exceeds "
                f"{SYMMETRY_RTOL:g} relative")
        T = 0.5 * (T + T.T)
        eigs = np.linalg.eigvalsh(T)
        if eigs.min() <= 0.0:
            raise TrihomError(
                f"homogenized tensor is not positive definite "
                f"(eigenvalues {eigs})")
        self.entries = T
        self.axes = tuple(int(a) for a in self.axes)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.entries)


@dataclass
class AuditReport:
    symmetry_defect: float
    eigenvalues: np.ndarray
    spd: bool
    reuss_lower: float = None
    voigt_upper: float = None
    bounds_ok: bool = None


def _homogenize(geom, coeff_values, correctors, level, norm_volume,
                expected_labels=None):
    if not correctors:
        raise MissingCorrector("no corrector fields supplied")
    directions = sorted(c.direction for c in correctors)
    if len(set(directions)) != len(directions):
        raise MissingCorrector(f"duplicate corrector directions {directions}")
    labels = correctors[0].active_labels
    for c in correctors:
        if c.active_labels != labels:
            raise MissingCorrector(
                "correctors were solved on different active subdomains")
        if c.residual > 10.0 * c.tol:
            raise ResidualTooHigh(
                f"corrector residual {c.residual:.3e} exceeds 10 x tol "
                f"{c.tol:g}")
    if expected_labels is not None and set(expected_labels) != set(labels):
        raise MissingCorrector(
            f"correctors solved on {labels}, expected {expected_labels}")
    active = geom.mask(labels)
    grid = fem.NodeGrid(geom.spec.resolution, geom.spec.lengths, periodic=True)
    d = geom.spec.dim
    nv = int(np.count_nonzero(active))
    M = coeff_values.reshape(-1, d, d)[active.reshape(-1)]
    vol = geom.spec.voxel_volume
    by_dir = {c.direction: c for c in correctors}
    axes = directions
    k = len(axes)
    T = np.zeros((k, k))
    for j, kdir in enumerate(axes):
        grads = fem.gradient_integrals(grid, by_dir[kdir].values, active)
        for i, p in enumerate(axes):
            plain = M[:, p, kdir].sum() * vol
            corr = float(np.einsum("vq,vq->", M[:, p, :], grads))
            T[i, j] = (plain + corr) / norm_volume
    residuals = {c.direction: c.residual for c in correctors}
    prov = {
        "geometry": geom.describe(),
        "active_labels": list(labels),
        "residuals": residuals,
        "active_volume_fraction": nv * vol / geom.spec.cell_volume,
    }
    return HomogenizedTensor(entries=T, level=level, axes=tuple(axes),
                             provenance=prov)


def homogenize_extracellular(geom, coeff, correctors) -> HomogenizedTensor:
    """Mesoscale effective tensor of the extracellular medium.

    Entries are (1/|cell|) int_active (m_pk + m_pq d(chi_k)/dy_q).
    """
    return _homogenize(geom, coeff.values, correctors, LEVEL_EXTRA_MESO,
                       geom.spec.cell_volume)


def homogenize_micro(geom, coeff, correctors) -> HomogenizedTensor:
    """Microscale tensor of the intracellular medium at one frozen meso point.

    Integration runs over the cytosol, normalization over the whole micro
    cell, exactly as the two-level derivation prescribes.
    """
    return _homogenize(geom, coeff.values, correctors, LEVEL_INTRA_MICRO,
                       geom.spec.cell_volume)


def homogenize_meso(geom, mtilde_field, correctors) -> HomogenizedTensor:
    """Two-level intracellular tensor from mesoscale correctors.

    `mtilde_field` carries the micro-homogenized coefficient per meso voxel
    (broadcast when it does not vary over the cell).
    """
    return _homogenize(geom, mtilde_field.values, correctors,
                       LEVEL_INTRA_TWO_LEVEL, geom.spec.cell_volume)


def volume_average_tensor(geom, coeff, active_labels, level="volume_average"):
    """Corrector-free volume average, the ablation baseline."""
    active = geom.mask(active_labels)
    d = geom.spec.dim
    M = coeff.values.reshape(-1, d, d)[active.reshape(-1)]
    T = M.sum(axis=0) * geom.spec.voxel_volume / geom.spec.cell_volume
    return HomogenizedTensor(entries=T, level=level, axes=tuple(range(d)),
                             provenance={"geometry": geom.describe(),
                                         "active_labels": list(active_labels),
                                         "residuals": {}})


def audit_tensor(tensor, phases=None) -> AuditReport:
    """Diagnostic report: symmetry defect, spectrum, mixture bounds.

    `phases` is an optional list of (volume_fraction, sigma) pairs for
    hole-free scalar two-phase cells; the eigenvalues are then checked
    against the harmonic (lower) and arithmetic (upper) mixture means.
    """
    T = np.asarray(tensor.entries if isinstance(tensor, HomogenizedTensor)
                   else tensor, dtype=float)
    defect = float(np.abs(T - T.T).max())
    if isinstance(tensor, HomogenizedTensor):
        defect = tensor.provenance.get("asymmetry_defect", defect)
    eigs = np.linalg.eigvalsh(0.5 * (T + T.T))
    report = AuditReport(symmetry_defect=defect, eigenvalues=eigs,
                         spd=bool(eigs.min() > 0.0))
    if phases:
        fractions = np.array([f for f, _ in phases], dtype=float)
        sigmas = np.array([s for _, s in phases], dtype=float)
        total = fractions.sum()
        voigt = float((fractions * sigmas).sum() / total)
        reuss = float(total / (fractions / sigmas).sum())
        tol = 1e-9 * max(voigt, 1.0)
        report.voigt_upper = voigt
        report.reuss_lower = reuss
        report.bounds_ok = bool(eigs.min() >= reuss - tol and
                                eigs.max() <= voigt + tol)
    return report


def effective_tensor(geom, coeff, active_labels, level=LEVEL_EXTRA_MESO,
                     directions=None, tol=cellsolver.DEFAULT_TOL):
    """Solve the correctors for the requested axes and assemble the tensor."""
    d = geom.spec.dim
    if directions is None or sorted(directions) == list(range(d)):
        correctors = cellsolver.solve_all_correctors(
            geom, coeff, active_labels, tol=tol)
    else:
        correctors = [cellsolver.solve_corrector(
                          cellsolver.CellProblem(geom, coeff, q, active_labels),
                          tol=tol)
                      for q in sorted(directions)]
    tensor = _homogenize(geom, coeff.values, correctors, level,
                         geom.spec.cell_volume)
    return tensor, correctors


@dataclass
class TwoLevelResult:
    tensor: HomogenizedTensor
    micro_tensors: dict
    meso_correctors: list
    mtilde_field: cellsolver.ConductivityField


def two_level_intracellular(geom_meso, geom_micro, meso_values,
                            micro_values=None, active_meso_labels=("INTRA",),
                            active_micro_labels=("CYTOSOL",),
                            directions=None,
                            tol=cellsolver.DEFAULT_TOL) -> TwoLevelResult:
    """Full intracellular upscaling: micro correctors, then meso correctors.

    meso_values: {meso label: scalar or matrix} conductivity of each meso
    phase; micro_values: optional {micro label: scalar} modulation applied on
    the micro cell (cytosol-only by default, holes stay undefined).  One
    micro solve runs per distinct meso phase value; phases sharing a value
    share the solve.  `directions` restricts the mesoscale corrector axes
    (perforated cells that percolate along some axes only); the micro stage
    always solves every axis because the meso coefficient needs the full
    matrix.
    """
    if micro_values is None:
        micro_values = {lbl: 1.0 for lbl in active_micro_labels}
    d = geom_meso.spec.dim
    micro_tensors = {}
    for label in active_meso_labels:
        phase = cellsolver._as_matrix(meso_values[label], d)
        key = phase.tobytes()
        if key in micro_tensors:
            continue
        coeff_z = cellsolver.ConductivityField.from_labels(
            geom_micro, {ml: phase * float(mv)
                         for ml, mv in micro_values.items()})
        thetas = cellsolver.solve_all_correctors(
            geom_micro, coeff_z, active_micro_labels, tol=tol)
        micro_tensors[key] = homogenize_micro(geom_micro, coeff_z, thetas)
    mtilde_map = {
        label: micro_tensors[
            cellsolver._as_matrix(meso_values[label], d).tobytes()].entries
        for label in active_meso_labels}
    mtilde_field = cellsolver.ConductivityField.from_labels(
        geom_meso, mtilde_map)
    if directions is None or sorted(directions) == list(range(d)):
        chis = cellsolver.solve_all_correctors(
            geom_meso, mtilde_field, active_meso_labels, tol=tol)
    else:
        chis = [cellsolver.solve_corrector(
                    cellsolver.CellProblem(geom_meso, mtilde_field, q,
                                           active_meso_labels), tol=tol)
                for q in sorted(directions)]
    tensor = homogenize_meso(geom_meso, mtilde_field, chis)
    return TwoLevelResult(tensor=tensor, micro_tensors=micro_tensors,
                          meso_correctors=chis, mtilde_field=mtilde_field)
