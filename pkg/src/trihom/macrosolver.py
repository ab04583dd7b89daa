"""Macroscopic bidomain reaction-diffusion solver on a box domain.

Parabolic-elliptic reformulation with the extracellular potential eliminated
per step: summing the two conduction equations cancels the membrane terms
and leaves a compatible pure-Neumann solve for u_e; the transmembrane
potential then advances with implicit diffusion and explicit reaction, and
the gate follows with a forward update.  Spatial discretization reuses the
multilinear elements of the cell solver on a non-periodic node grid, which
keeps every diffusion operator symmetric with exact zero row sums (discrete
conservation, no-flux boundaries are natural).

The intracellular potential is not stored: it is v + u_e by definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import NonFinite
from .ionic import FhnParams, h_gate, i_ion

DEFAULT_ELLIPTIC_TOL = 1e-8


@dataclass(frozen=True)
class Stimulus:
    """Applied current pulse: a box or ellipse region active on a time window."""

    center: tuple
    amplitude: float
    t_on: float
    t_off: float
    kind: str = "box"
    half_widths: tuple = ()
    radii: tuple = ()

    def active(self, t):
        return self.t_on <= t < self.t_off

    def indicator(self, coords):
        c = np.asarray(self.center, dtype=float)
        if self.kind == "box":
            hw = np.asarray(self.half_widths, dtype=float)
            return np.all(np.abs(coords - c) <= hw, axis=-1)
        if self.kind == "ellipse":
            r = np.asarray(self.radii, dtype=float)
            return (((coords - c) / r) ** 2).sum(axis=-1) <= 1.0
        raise ValueError(f"unknown stimulus kind {self.kind!r}")


@dataclass(frozen=True)
class MacroConfig:
    lengths: tuple
    resolution: tuple
    dt: float
    t_end: float
    tensor_i: np.ndarray
    tensor_e: np.ndarray
    mu_m: float
    ionic: FhnParams = field(default_factory=FhnParams)
    stimulus: Stimulus = None
    v0: object = 0.0
    w0: object = 0.0
    elliptic_tol: float = DEFAULT_ELLIPTIC_TOL
    snapshot_every: int = 0
    activation_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "lengths",
                           tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "resolution",
                           tuple(int(n) for n in self.resolution))
        object.__setattr__(self, "tensor_i",
                           np.atleast_2d(np.asarray(self.tensor_i, float)))
        object.__setattr__(self, "tensor_e",
                           np.atleast_2d(np.asarray(self.tensor_e, float)))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if any(n < 16 for n in self.resolution):
            raise ValueError("macroscopic grid needs at least 16 per axis")
        if self.mu_m <= 0:
            raise ValueError("mu_m must be positive")
        d = len(self.resolution)
        for name in ("tensor_i", "tensor_e"):
            T = getattr(self, name)
            if T.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
            if np.abs(T - T.T).max() > 1e-10 * max(np.abs(T).max(), 1.0):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(T).min() <= 0:
                raise ValueError(f"{name} must be positive definite")

    @property
    def dim(self):
        return len(self.resolution)


@dataclass
class MacroState:
    u_e: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: float

    @property
    def u_i(self):
        return self.v + self.u_e


@dataclass
class MacroRun:
    config: MacroConfig
    final: MacroState
    times: list
    summary: list              # rows (t, v_min, v_max, mean_u_e, act_frac)
    snapshots: list            # (t, v, u_e, w) at the configured cadence
    activation: np.ndarray     # first threshold-crossing time, inf if never
    velocities: dict           # axis -> estimated front speed (or None)


class MacroSolver:
    """Operator cache plus the time stepping for one configuration."""

    def __init__(self, config: MacroConfig):
        self.config = config
        self.grid = fem.NodeGrid(config.resolution, config.lengths,
                                 periodic=False)
        nv = int(np.prod(config.resolution))
        d = config.dim
        coeff_i = np.broadcast_to(config.tensor_i, (nv, d, d))
        coeff_e = np.broadcast_to(config.tensor_e, (nv, d, d))
        self.K_i, dof, n = fem.assemble_stiffness(self.grid, coeff_i)
        K_e, _, _ = fem.assemble_stiffness(self.grid, coeff_e, dof_of_node=dof,
                                           n_dofs=n)
        self.K_ie = (self.K_i + K_e).tocsr()
        self.mass, _, _ = fem.lumped_mass(self.grid, dof_of_node=dof, n_dofs=n)
        self.total_mass = float(self.mass.sum())
        P = sp.diags(config.mu_m / config.dt * self.mass) + self.K_i
        self.parabolic_lu = spla.splu(P.tocsc())
        self.coords = self.grid.node_coords()
        self.diag_ie = self.K_ie.diagonal()
        self.n_nodes = n

    # -- fields -----------------------------------------------------------

    def node_field(self, value):
        if callable(value):
            out = np.asarray(value(self.coords), dtype=float)
        else:
            arr = np.asarray(value, dtype=float)
            out = (np.full(self.n_nodes, float(arr)) if arr.ndim == 0
                   else arr.reshape(self.n_nodes).astype(float))
        return out

    def applied_current(self, t):
        stim = self.config.stimulus
        if stim is None or not stim.active(t):
            return None
        return stim.amplitude * stim.indicator(self.coords).astype(float)

    def mean(self, u):
        return float(self.mass @ u) / self.total_mass

    # -- solves ------------------------------------------------------------

    def initial_state(self) -> MacroState:
        v = self.node_field(self.config.v0)
        w = self.node_field(self.config.w0)
        u_e = self.elliptic_solve(v)
        return MacroState(u_e=u_e, v=v, w=w, t=0.0)

    def elliptic_solve(self, v, x0=None):
        """Solve div((Ti+Te) grad u_e) = -div(Ti grad v), zero mean."""
        rhs = -(self.K_i @ v)
        u, _, _ = fem.cg(self.K_ie, rhs, tol=self.config.elliptic_tol,
                         maxiter=max(400, int(60 * np.sqrt(self.n_nodes))),
                         x0=x0, project_mean=True, diag=self.diag_ie)
        return u - self.mean(u)

    def step(self, state: MacroState) -> MacroState:
        cfg = self.config
        u_e = self.elliptic_solve(state.v, x0=state.u_e)
        reaction = i_ion(state.v, state.w, cfg.ionic)
        iapp = self.applied_current(state.t)
        if iapp is not None:
            reaction = reaction - iapp
        rhs = (cfg.mu_m / cfg.dt * self.mass * state.v
               - self.K_i @ u_e
               - cfg.mu_m * self.mass * reaction)
        v_new = self.parabolic_lu.solve(rhs)
        w_new = state.w + cfg.dt * h_gate(v_new, state.w, cfg.ionic)
        if not (np.isfinite(v_new).all() and np.isfinite(w_new).all()
                and np.isfinite(u_e).all()):
            raise NonFinite("non-finite macroscopic field; reduce dt")
        return MacroState(u_e=u_e, v=v_new, w=w_new, t=state.t + cfg.dt)

    # -- trajectory ---------------------------------------------------------

    def run(self) -> MacroRun:
        cfg = self.config
        state = self.initial_state()
        n_steps = int(round(cfg.t_end / cfg.dt))
        activation = np.full(self.n_nodes, np.inf)
        thr = cfg.activation_threshold
        times, summary, snapshots = [], [], []

        def record(st):
            times.append(st.t)
            act_frac = float(np.mean(np.isfinite(activation)))
            summary.append((st.t, float(st.v.min()), float(st.v.max()),
                            self.mean(st.u_e), act_frac))
            snapshots.append((st.t, st.v.copy(), st.u_e.copy(), st.w.copy()))

        hit = state.v >= thr
        activation[hit] = 0.0
        record(state)
        cadence = cfg.snapshot_every if cfg.snapshot_every > 0 else n_steps
        for k in range(1, n_steps + 1):
            state = self.step(state)
            newly = (state.v >= thr) & ~np.isfinite(activation)
            activation[newly] = state.t
            if k % cadence == 0 or k == n_steps:
                record(state)
        velocities = {ax: self.velocity_along_axis(activation, ax)
                      for ax in range(cfg.dim)}
        return MacroRun(config=cfg, final=state, times=times, summary=summary,
                        snapshots=snapshots, activation=activation,
                        velocities=velocities)

    def velocity_along_axis(self, activation, axis, window=(0.35, 0.85)):
        """Front speed from a linear fit of activation time on the center line."""
        shape = self.grid.node_shape
        act = activation.reshape(shape)
        idx = [s // 2 for s in shape]
        idx[axis] = slice(None)
        line = act[tuple(idx)]
        coords = np.arange(shape[axis]) * self.grid.spacings[axis]
        L = self.config.lengths[axis]
        sel = (np.isfinite(line) & (coords >= window[0] * L)
               & (coords <= window[1] * L))
        if np.count_nonzero(sel) < 4:
            return None
        t_act = line[sel]
        s = coords[sel]
        if t_act.max() - t_act.min() <= 0:
            return None
        slope = np.polyfit(t_act, s, 1)[0]
        return float(abs(slope))


def elliptic_solve(state: MacroState, config: MacroConfig):
    return MacroSolver(config).elliptic_solve(state.v, x0=state.u_e)


def step(state: MacroState, config: MacroConfig) -> MacroState:
    return MacroSolver(config).step(state)


def run(config: MacroConfig) -> MacroRun:
    return MacroSolver(config).run()
