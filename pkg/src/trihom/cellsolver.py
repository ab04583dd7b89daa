"""Periodic corrector problems on the active subdomain of a unit cell.

For a canonical direction q the corrector is the zero-mean periodic field
chi satisfying int M (grad chi + e_q) . grad v = 0 for every periodic test
function v supported on the active voxels.  This single volume form carries
both the divergence source and the interior Neumann datum of the strong
formulation; voxels outside the active subdomain carry no DOFs, so holes are
genuine perforations rather than low-conductivity penalizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem, geometry
from .errors import DisconnectedSubdomain, InvalidShape, TrihomError

DEFAULT_TOL = 1e-10


@dataclass
class ConductivityField:
    """Per-voxel symmetric d x d conductivity with audited ellipticity bounds.

    `defined` marks voxels where the coefficient is meaningful; the audit of
    the spectral bounds alpha and beta runs over those voxels only.
    """

    values: np.ndarray
    defined: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        d = vals.shape[-1]
        if vals.shape[-2] != d:
            raise ValueError("coefficient entries must be square matrices")
        sym_defect = np.abs(vals - np.swapaxes(vals, -1, -2)).max()
        scale = max(np.abs(vals).max(), 1.0)
        if sym_defect > 1e-12 * scale:
            raise ValueError(
                f"conductivity matrices must be symmetric "
                f"(defect {sym_defect:.3e})")
        defined = np.asarray(self.defined, dtype=bool)
        if defined.any():
            eigs = np.linalg.eigvalsh(vals[defined])
            alpha = float(eigs.min())
            beta = float(eigs.max())
        else:
            alpha = beta = 0.0
        if defined.any() and alpha <= 0.0:
            raise ValueError(
                f"conductivity must be positive definite per voxel "
                f"(min eigenvalue {alpha:.3e})")
        self.values = vals
        self.defined = defined
        self.alpha = alpha
        self.beta = beta

    @property
    def dim(self):
        return self.values.shape[-1]

    @classmethod
    def constant(cls, geom, value):
        """Uniform coefficient over the whole cell."""
        mat = _as_matrix(value, geom.spec.dim)
        vals = np.broadcast_to(
            mat, geom.spec.resolution + (geom.spec.dim,) * 2).copy()
        return cls(values=vals, defined=np.ones(geom.spec.resolution, bool))

    @classmethod
    def from_labels(cls, geom, mapping):
        """Per-label coefficient; voxels of unmapped labels stay undefined."""
        d = geom.spec.dim
        vals = np.zeros(geom.spec.resolution + (d, d))
        vals[...] = np.eye(d)  # placeholder outside the defined set
        defined = np.zeros(geom.spec.resolution, dtype=bool)
        for label, value in mapping.items():
            mask = geom.labels == geom.label_value(label)
            vals[mask] = _as_matrix(value, d)
            defined |= mask
        return cls(values=vals, defined=defined)

    def scaled(self, factor):
        return ConductivityField(values=self.values * float(factor),
                                 defined=self.defined)


def _as_matrix(value, d):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise InvalidShape(f"expected scalar or {d}x{d} matrix")
    return arr


@dataclass
class CellProblem:
    """One corrector problem: geometry, coefficient, direction, active set."""

    geometry: geometry.UnitCellGeometry
    coefficient: ConductivityField
    direction: int
    active_labels: tuple

    def __post_init__(self):
        d = self.geometry.spec.dim
        if not 0 <= self.direction < d:
            raise InvalidShape(f"direction must lie in [0, {d})")
        if isinstance(self.active_labels, (str, int, np.integer)):
            self.active_labels = (self.active_labels,)
        self.active_labels = tuple(self.active_labels)
        mask = self.geometry.mask(self.active_labels)
        if not np.all(self.coefficient.defined[mask]):
            raise InvalidShape(
                "coefficient undefined on part of the active subdomain")

    def active_mask(self):
        return self.geometry.mask(self.active_labels)


@dataclass
class LinearSystem:
    matrix: object
    rhs: np.ndarray
    grid: fem.NodeGrid
    dof_of_node: np.ndarray
    n_dofs: int
    active_mask: np.ndarray


@dataclass
class CorrectorField:
    """Zero-mean periodic corrector on the cell's node grid.

    Values live on the periodic node grid (one entry per wrap class, so
    periodicity holds by representation); nodes without active support are
    zero and excluded from `node_mask`.
    """

    values: np.ndarray
    direction: int
    residual: float
    iterations: int
    active_labels: tuple
    tol: float
    node_mask: np.ndarray = field(repr=False, default=None)


def assemble(problem: CellProblem) -> LinearSystem:
    """Assemble the periodic stiffness system restricted to active voxels."""
    geom = problem.geometry
    active = problem.active_mask()
    if not geometry.is_connected(active, periodic=True):
        raise DisconnectedSubdomain(
            f"active subdomain {problem.active_labels} is not periodically "
            f"face-connected")
    grid = fem.NodeGrid(geom.spec.resolution, geom.spec.lengths, periodic=True)
    A, dof_of_node, n_dofs = fem.assemble_stiffness(
        grid, problem.coefficient.values, active=active)
    b = fem.assemble_direction_load(
        grid, problem.coefficient.values, problem.direction, active,
        dof_of_node, n_dofs)
    return LinearSystem(matrix=A, rhs=b, grid=grid, dof_of_node=dof_of_node,
                        n_dofs=n_dofs, active_mask=active)


def check_compatibility(system: LinearSystem) -> float:
    """Residual |sum_i b_i| of the pure-Neumann solvability condition."""
    return float(abs(system.rhs.sum()))


def solve_corrector(problem: CellProblem, tol=DEFAULT_TOL,
                    system: LinearSystem = None) -> CorrectorField:
    """Solve one corrector problem with projected, Jacobi-preconditioned CG."""
    active = problem.active_mask()
    if not geometry.percolates(active, problem.direction):
        raise DisconnectedSubdomain(
            f"active subdomain {problem.active_labels} does not percolate "
            f"along axis {problem.direction}; homogenization in that "
            f"direction is degenerate")
    if system is None:
        system = assemble(problem)
    bnorm = float(np.linalg.norm(system.rhs))
    if bnorm > 0.0:
        compat = check_compatibility(system)
        if compat > 1e-10 * bnorm:
            raise TrihomError(
                f"assembled load violates the compatibility condition "
                f"({compat:.3e} vs ||b|| {bnorm:.3e})")
    maxiter = max(200, int(50 * np.sqrt(system.n_dofs)))
    x, residual, iters = fem.cg(system.matrix, system.rhs, tol=tol,
                                maxiter=maxiter, project_mean=True)
    values = np.zeros(system.grid.n_nodes)
    node_mask = system.dof_of_node >= 0
    values[node_mask] = x
    # shift into the zero-mean periodic space: null volume average over the
    # active subdomain, evaluated with the assembly quadrature
    vol_active = float(np.count_nonzero(active)) * problem.geometry.spec.voxel_volume
    mean = fem.field_integral(system.grid, values, active) / vol_active
    values[node_mask] -= mean
    return CorrectorField(
        values=values.reshape(system.grid.node_shape),
        direction=problem.direction,
        residual=residual,
        iterations=iters,
        active_labels=problem.active_labels,
        tol=tol,
        node_mask=node_mask.reshape(system.grid.node_shape))


def solve_all_correctors(geom, coefficient, active_labels,
                         tol=DEFAULT_TOL) -> list:
    """Solve the d corrector problems sharing one assembled matrix."""
    d = geom.spec.dim
    problems = [CellProblem(geometry=geom, coefficient=coefficient,
                            direction=q, active_labels=active_labels)
                for q in range(d)]
    system = assemble(problems[0])
    out = []
    for q, problem in enumerate(problems):
        if q > 0:
            system.rhs = fem.assemble_direction_load(
                system.grid, coefficient.values, q, system.active_mask,
                system.dof_of_node, system.n_dofs)
        out.append(solve_corrector(problem, tol=tol, system=system))
    return out


def corrector_energy(problem: CellProblem, values) -> float:
    """Dirichlet energy int (grad chi + e_q) . M (grad chi + e_q).

    Evaluated per voxel with the exact Q1 quadrature; used by the
    variational-minimality checks.
    """
    geom = problem.geometry
    grid = fem.NodeGrid(geom.spec.resolution, geom.spec.lengths, periodic=True)
    active = problem.active_mask()
    G, L, vol = fem.element_matrices(grid.spacings)
    corners = grid.corner_node_ids()[active.reshape(-1)]
    M = problem.coefficient.values.reshape(-1, geom.spec.dim, geom.spec.dim)
    M = M[active.reshape(-1)]
    V = np.asarray(values).ravel()[corners]
    q = problem.direction
    quad = np.einsum("vpq,pqab,va,vb->", M, G, V, V)
    lin = 2.0 * np.einsum("vp,pa,va->", M[:, :, q], L, V)
    const = M[:, q, q].sum() * vol
    return float(quad + lin + const)
