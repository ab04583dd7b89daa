"""Microscopic bidomain reference solver on a small 2D cell arrangement.

Desk-scale oracle for the homogenized model: the unit cell is tiled a few
times over the unit square, the intracellular and extracellular potentials
live on separate voxel submeshes with duplicated nodes along the membrane
staircase, and the transmembrane potential on the membrane nodes couples the
two quasi-static conduction solves through the dynamic membrane condition.
Optional insulating holes inside the intracellular medium exercise the
micro-level no-flux condition.

One semi-implicit step solves both conduction problems and the membrane
potential together (reaction explicit), so the scheme is a direct discrete
transcription of the coupled system rather than an operator split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, geometry
from .errors import GridMismatch, InvalidShape, NonFinite
from .ionic import FhnParams, h_gate, i_ion
from .macrosolver import Stimulus

SUPPORTED_EPSILON = (0.5, 0.25, 0.125)
MAX_GRID = 512


@dataclass(frozen=True)
class MicroConfig:
    epsilon: float
    cell: geometry.UnitCellGeometry          # meso unit cell (unit lengths)
    sigma_i: float
    sigma_e: float
    dt: float
    t_end: float
    ionic: FhnParams = field(default_factory=FhnParams)
    stimulus: Stimulus = None
    micro_shape: geometry.ShapeSpec = None   # optional holes in the cytosol
    micro_cells_per_cell: int = 4            # Z cells per Y cell per axis
    v0: float = 0.0
    w0: float = 0.0
    snapshot_every: int = 0

    def __post_init__(self):
        if not any(abs(self.epsilon - e) < 1e-12 for e in SUPPORTED_EPSILON):
            raise InvalidShape(
                f"epsilon must be one of {SUPPORTED_EPSILON}")
        if self.cell.spec.dim != 2:
            raise InvalidShape("the reference solver is 2D only")
        if any(abs(l - 1.0) > 1e-12 for l in self.cell.spec.lengths):
            raise InvalidShape("reference solver expects a unit meso cell")
        if self.dt <= 0 or self.t_end < 0:
            raise InvalidShape("dt must be positive, t_end nonnegative")
        n = self.n_cells * self.cell.spec.resolution[0]
        if n > MAX_GRID:
            raise InvalidShape(
                f"fine grid {n} exceeds the desk-scale cap {MAX_GRID}")

    @property
    def n_cells(self):
        return int(round(1.0 / self.epsilon))


@dataclass
class MicroState:
    u_i: np.ndarray   # intracellular DOFs
    u_e: np.ndarray   # extracellular DOFs
    v: np.ndarray     # membrane nodes
    w: np.ndarray
    t: float


@dataclass
class MicroRun:
    config: MicroConfig
    final: MicroState
    times: list
    v_snapshots: list          # membrane v at snapshot times
    membrane_coords: np.ndarray
    membrane_area: np.ndarray
    summary: list              # (t, v_min, v_max, mean_u_e, current_balance)


class MicroSolver:
    def __init__(self, config: MicroConfig):
        self.config = config
        cell = config.cell
        r = cell.spec.resolution[0]
        n_cells = config.n_cells
        m = n_cells * r
        self.grid = fem.NodeGrid((m, m), (1.0, 1.0), periodic=False)
        labels = np.tile(cell.labels, (n_cells, n_cells))
        intra = labels == geometry.LEGENDS[geometry.MESO]["INTRA"]
        extra = ~intra
        if config.micro_shape is not None:
            intra = intra & ~self._hole_mask(m)
        self.omega_i = intra
        self.omega_e = extra
        self._build_system()

    def _hole_mask(self, m):
        cfg = self.config
        h = 1.0 / m
        c = (np.arange(m) + 0.5) * h
        X, Y = np.meshgrid(c, c, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        # micro coordinate z = x / (eps * delta), one period per micro cell
        scale = cfg.epsilon / cfg.micro_cells_per_cell
        z = (pts / scale) % 1.0
        F = cfg.micro_shape.implicit(z, (1.0, 1.0))
        return F < 0.0

    def _build_system(self):
        cfg = self.config
        grid = self.grid
        m = grid.resolution[0]
        d = 2
        eye = np.eye(d)
        coeff_i = np.broadcast_to(cfg.sigma_i * eye, (m * m, d, d))
        coeff_e = np.broadcast_to(cfg.sigma_e * eye, (m * m, d, d))
        K_i, dof_i, n_i = fem.assemble_stiffness(grid, coeff_i,
                                                 active=self.omega_i)
        K_e, dof_e, n_e = fem.assemble_stiffness(grid, coeff_e,
                                                 active=self.omega_e)
        self.n_i, self.n_e = n_i, n_e
        self.dof_i, self.dof_e = dof_i, dof_e

        membrane_nodes = np.nonzero((dof_i >= 0) & (dof_e >= 0))[0]
        self.membrane_nodes = membrane_nodes
        self.n_m = membrane_nodes.size
        if self.n_m == 0:
            raise InvalidShape("cell arrangement has no membrane")
        self.membrane_coords = grid.node_coords()[membrane_nodes]
        self.membrane_area = self._membrane_areas()

        rows = np.arange(self.n_m)
        J = sp.coo_matrix(
            (np.concatenate([np.ones(self.n_m), -np.ones(self.n_m)]),
             (np.concatenate([rows, rows]),
              np.concatenate([dof_i[membrane_nodes],
                              n_i + dof_e[membrane_nodes]]))),
            shape=(self.n_m, n_i + n_e)).tocsr()
        self.J = J
        A = sp.diags(self.membrane_area)
        c = cfg.epsilon / cfg.dt
        S = sp.bmat([[K_i, None], [None, K_e]], format="csr") \
            + c * (J.T @ A @ J)
        mass_e, _, _ = fem.lumped_mass(grid, active=self.omega_e,
                                       dof_of_node=dof_e, n_dofs=n_e)
        constraint = np.concatenate([np.zeros(n_i), mass_e])
        bordered = sp.bmat(
            [[S, constraint[:, None]], [constraint[None, :], None]],
            format="csc")
        self.lu = spla.splu(bordered)
        self.K_blocks = (K_i, K_e)
        self.mass_e = mass_e

    def _membrane_areas(self):
        """Lumped membrane measure per node from the staircase facet areas."""
        omega_i, omega_e = self.omega_i, self.omega_e
        grid = self.grid
        res = grid.resolution
        area = np.zeros(grid.n_nodes)
        node_shape = grid.node_shape
        for ax in range(2):
            h_face = grid.spacings[1 - ax]
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[ax] = slice(0, res[ax] - 1)
            hi[ax] = slice(1, res[ax])
            faces = ((omega_i[tuple(lo)] & omega_e[tuple(hi)]) |
                     (omega_e[tuple(lo)] & omega_i[tuple(hi)]))
            vi, vj = np.nonzero(faces)
            if ax == 0:
                # face between voxels (i, j) and (i+1, j): nodes (i+1, j/j+1)
                n1 = np.ravel_multi_index((vi + 1, vj), node_shape)
                n2 = np.ravel_multi_index((vi + 1, vj + 1), node_shape)
            else:
                n1 = np.ravel_multi_index((vi, vj + 1), node_shape)
                n2 = np.ravel_multi_index((vi + 1, vj + 1), node_shape)
            np.add.at(area, n1, 0.5 * h_face)
            np.add.at(area, n2, 0.5 * h_face)
        return area[self.membrane_nodes]

    # -- stepping -----------------------------------------------------------

    def initial_state(self) -> MicroState:
        cfg = self.config
        return MicroState(u_i=np.zeros(self.n_i), u_e=np.zeros(self.n_e),
                          v=np.full(self.n_m, float(cfg.v0)),
                          w=np.full(self.n_m, float(cfg.w0)), t=0.0)

    def applied_current(self, t):
        stim = self.config.stimulus
        if stim is None or not stim.active(t):
            return 0.0
        return stim.amplitude * stim.indicator(self.membrane_coords)

    def micro_step(self, state: MicroState) -> MicroState:
        cfg = self.config
        reaction = i_ion(state.v, state.w, cfg.ionic) - self.applied_current(state.t)
        g = self.membrane_area * (cfg.epsilon / cfg.dt * state.v
                                  - cfg.epsilon * reaction)
        rhs = np.concatenate([self.J.T @ g, [0.0]])
        sol = self.lu.solve(rhs)
        u = sol[:-1]
        u_i, u_e = u[:self.n_i], u[self.n_i:]
        v_new = self.J @ u
        w_new = state.w + cfg.dt * h_gate(v_new, state.w, cfg.ionic)
        if not (np.isfinite(u).all() and np.isfinite(w_new).all()):
            raise NonFinite("non-finite microscopic field; reduce dt")
        return MicroState(u_i=u_i, u_e=u_e, v=v_new, w=w_new, t=state.t + cfg.dt)

    def current_balance(self, prev: MicroState, new: MicroState):
        """Net membrane current relative to the gross current flow.

        Zero in exact arithmetic (sum the two conduction equations); the
        denominator uses the un-cancelled term magnitudes so the measure
        stays meaningful when the net current itself is tiny.
        """
        cfg = self.config
        reaction = i_ion(prev.v, prev.w, cfg.ionic) - self.applied_current(prev.t)
        i_m = cfg.epsilon * ((new.v - prev.v) / cfg.dt + reaction)
        total = float(self.membrane_area @ i_m)
        gross = cfg.epsilon * (np.abs(new.v - prev.v) / cfg.dt
                               + np.abs(reaction))
        scale = float(self.membrane_area @ gross)
        return abs(total) / max(scale, 1e-300)

    def mean_u_e(self, state):
        return float(self.mass_e @ state.u_e) / float(self.mass_e.sum())

    def run(self) -> MicroRun:
        cfg = self.config
        state = self.initial_state()
        n_steps = int(round(cfg.t_end / cfg.dt))
        cadence = cfg.snapshot_every if cfg.snapshot_every > 0 else max(n_steps, 1)
        times, snaps, summary = [], [], []

        def record(st, balance):
            times.append(st.t)
            snaps.append(st.v.copy())
            summary.append((st.t, float(st.v.min()), float(st.v.max()),
                            self.mean_u_e(st), balance))

        record(state, 0.0)
        for k in range(1, n_steps + 1):
            new = self.micro_step(state)
            if k % cadence == 0 or k == n_steps:
                record(new, self.current_balance(state, new))
            state = new
        return MicroRun(config=cfg, final=state, times=times,
                        v_snapshots=snaps,
                        membrane_coords=self.membrane_coords,
                        membrane_area=self.membrane_area, summary=summary)


def compare_to_macro(micro: MicroRun, macro, times=None) -> list:
    """Membrane-weighted L2 error of micro v against the macro field.

    `macro` is a MacroRun whose snapshots cover the requested times; its
    nodal field is interpolated at the membrane node coordinates (the last
    axis of the macro domain is matched to the micro x2 axis when the macro
    run is one-dimensional).
    """
    macro_times = np.asarray(macro.times)
    if times is None:
        times = [t for t in micro.times
                 if np.min(np.abs(macro_times - t)) < 1e-9]
    if not times:
        raise GridMismatch("no common snapshot times")
    coords = micro.membrane_coords
    area = micro.membrane_area
    rows = []
    dim = macro.config.dim
    shape = tuple(n + 1 for n in macro.config.resolution)
    axes = [np.arange(n + 1) * (l / n) for n, l in
            zip(macro.config.resolution, macro.config.lengths)]
    for t in times:
        mi = int(np.argmin(np.abs(np.asarray(micro.times) - t)))
        ma = int(np.argmin(np.abs(macro_times - t)))
        if (abs(micro.times[mi] - t) > 1e-9 or
                abs(macro_times[ma] - t) > 1e-9):
            raise GridMismatch(f"time {t} missing from one trajectory")
        v_mic = micro.v_snapshots[mi]
        v_mac = macro.snapshots[ma][1].reshape(shape)
        if dim == 1:
            v_interp = np.interp(coords[:, 1], axes[0], v_mac)
        else:
            from scipy.interpolate import RegularGridInterpolator
            itp = RegularGridInterpolator(axes, v_mac, bounds_error=False,
                                          fill_value=None)
            v_interp = itp(coords)
        diff = v_mic - v_interp
        err = float(np.sqrt((area * diff ** 2).sum() / area.sum()))
        rows.append((t, err))
    return rows
