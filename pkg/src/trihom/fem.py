"""Multilinear (Q1) finite elements on axis-aligned voxel grids.

Shared numerical kernel for the cell-problem solver, the macroscopic
reaction-diffusion solver and the microscopic reference solver.  Elements are
the voxels themselves; coefficients are constant per voxel; all element
integrals are evaluated exactly for the multilinear basis, so a vanishing
corrector reproduces plain volume averages to machine precision.

Node grids come in two flavours: periodic (opposite faces identified, one DOF
per wrap class, used by the unit-cell solver) and plain (n+1 nodes per axis,
natural boundary conditions, used by the macroscopic/microscopic solvers).
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from .errors import NoConvergence

# 1D linear-element blocks on [0,1]: stiffness, mass, and mixed
# (derivative on first index) integrals.
_K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
_M1 = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
_D1 = np.array([[-0.5, -0.5], [0.5, 0.5]])
_I1 = np.array([0.5, 0.5])
_DI1 = np.array([-1.0, 1.0])


def corner_offsets(dim):
    """Local corner multi-indices of a voxel, in assembly order."""
    return list(itertools.product((0, 1), repeat=dim))


def element_matrices(spacings):
    """Exact Q1 element integrals for a voxel with edge lengths `spacings`.

    Returns (G, L, vol) where
      G[p, q, a, b] = integral of d(phi_a)/dx_p * d(phi_b)/dx_q,
      L[p, a]       = integral of d(phi_a)/dx_p,
      vol           = voxel volume.
    """
    h = np.asarray(spacings, dtype=float)
    d = len(h)
    corners = corner_offsets(d)
    nb = len(corners)
    G = np.zeros((d, d, nb, nb))
    L = np.zeros((d, nb))
    for p in range(d):
        for q in range(d):
            for ia, a in enumerate(corners):
                for ib, b in enumerate(corners):
                    val = 1.0
                    for m in range(d):
                        am, bm = a[m], b[m]
                        if m == p and m == q:
                            val *= _K1[am, bm] / h[m]
                        elif m == p:
                            val *= _D1[am, bm]
                        elif m == q:
                            val *= _D1[bm, am]
                        else:
                            val *= _M1[am, bm] * h[m]
                    G[p, q, ia, ib] = val
    for p in range(d):
        for ia, a in enumerate(corners):
            val = 1.0
            for m in range(d):
                if m == p:
                    val *= _DI1[a[m]]
                else:
                    val *= _I1[a[m]] * h[m]
            L[p, ia] = val
    return G, L, float(np.prod(h))


class NodeGrid:
    """Node bookkeeping for a voxel grid, periodic or plain."""

    def __init__(self, resolution, lengths, periodic):
        self.resolution = tuple(int(n) for n in resolution)
        self.lengths = tuple(float(x) for x in lengths)
        self.periodic = bool(periodic)
        self.dim = len(self.resolution)
        self.spacings = tuple(
            l / n for l, n in zip(self.lengths, self.resolution)
        )
        if periodic:
            self.node_shape = self.resolution
        else:
            self.node_shape = tuple(n + 1 for n in self.resolution)
        self.n_nodes = int(np.prod(self.node_shape))

    def corner_node_ids(self):
        """Global (raveled) node id of every corner of every voxel.

        Returns an int array of shape (n_voxels, 2**dim) following the
        corner order of `corner_offsets`.
        """
        res = self.resolution
        axes = [np.arange(n) for n in res]
        grids = np.meshgrid(*axes, indexing="ij")
        out = np.empty((int(np.prod(res)), 2 ** self.dim), dtype=np.int64)
        for ic, off in enumerate(corner_offsets(self.dim)):
            idx = []
            for m in range(self.dim):
                im = grids[m] + off[m]
                if self.periodic:
                    im = im % res[m]
                idx.append(im)
            out[:, ic] = np.ravel_multi_index(
                tuple(i.ravel() for i in idx), self.node_shape
            )
        return out

    def node_coords(self):
        """Physical coordinates of every node, shape (n_nodes, dim)."""
        axes = []
        for m in range(self.dim):
            n = self.node_shape[m]
            axes.append(np.arange(n) * self.spacings[m])
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def assemble_stiffness(grid, coeff, active=None, dof_of_node=None, n_dofs=None):
    """Assemble the stiffness matrix sum_vox int (M grad u . grad v).

    coeff: (n_voxels, d, d) per-voxel constant coefficient.
    active: optional boolean mask over voxels; inactive voxels carry no DOFs.
    dof_of_node / n_dofs: optional node -> DOF compression (int array with -1
    for absent nodes).  When omitted, every grid node is a DOF.

    Returns (A_csr, dof_of_node, n_dofs).
    """
    G, _, _ = element_matrices(grid.spacings)
    corners = grid.corner_node_ids()
    nv = corners.shape[0]
    coeff = coeff.reshape(nv, grid.dim, grid.dim)
    if active is not None:
        sel = np.asarray(active).reshape(nv)
        corners = corners[sel]
        coeff = coeff[sel]
    if dof_of_node is None:
        dof_of_node = np.full(grid.n_nodes, -1, dtype=np.int64)
        used = np.unique(corners)
        dof_of_node[used] = np.arange(used.size)
        n_dofs = used.size
    dofs = dof_of_node[corners]
    nb = corners.shape[1]
    rows, cols, vals = [], [], []
    for a in range(nb):
        for b in range(nb):
            rows.append(dofs[:, a])
            cols.append(dofs[:, b])
            vals.append(np.einsum("vpq,pq->v", coeff, G[:, :, a, b]))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dofs, n_dofs),
    ).tocsr()
    A.sum_duplicates()
    return A, dof_of_node, n_dofs


def assemble_direction_load(grid, coeff, direction, active, dof_of_node, n_dofs):
    """RHS of a corrector problem: b_v = -int (M e_q) . grad phi_v."""
    _, L, _ = element_matrices(grid.spacings)
    corners = grid.corner_node_ids()
    nv = corners.shape[0]
    coeff = coeff.reshape(nv, grid.dim, grid.dim)
    if active is not None:
        sel = np.asarray(active).reshape(nv)
        corners = corners[sel]
        coeff = coeff[sel]
    dofs = dof_of_node[corners]
    b = np.zeros(n_dofs)
    col = coeff[:, :, direction]  # (nv, d) = M e_q per voxel
    for a in range(corners.shape[1]):
        np.add.at(b, dofs[:, a], -col @ L[:, a])
    return b


def lumped_mass(grid, active=None, dof_of_node=None, n_dofs=None):
    """Row-sum lumped mass vector over the active voxels."""
    _, _, vol = element_matrices(grid.spacings)
    corners = grid.corner_node_ids()
    if active is not None:
        corners = corners[np.asarray(active).reshape(-1)]
    if dof_of_node is None:
        dof_of_node = np.full(grid.n_nodes, -1, dtype=np.int64)
        used = np.unique(corners)
        dof_of_node[used] = np.arange(used.size)
        n_dofs = used.size
    m = np.zeros(n_dofs)
    w = vol / corners.shape[1]
    for a in range(corners.shape[1]):
        np.add.at(m, dof_of_node[corners[:, a]], w)
    return m, dof_of_node, n_dofs


def gradient_integrals(grid, nodal, active=None):
    """Per-voxel exact integrals of the Q1 field gradient.

    nodal: values on the full node grid (raveled or grid-shaped).
    Returns (n_active_voxels, d) with entries int_vox d(field)/dx_q.
    """
    _, L, _ = element_matrices(grid.spacings)
    corners = grid.corner_node_ids()
    if active is not None:
        corners = corners[np.asarray(active).reshape(-1)]
    vals = np.asarray(nodal).ravel()[corners]  # (nv, nb)
    return vals @ L.T


def field_integral(grid, nodal, active=None):
    """Exact integral of a Q1 nodal field over the (active) voxels."""
    _, _, vol = element_matrices(grid.spacings)
    corners = grid.corner_node_ids()
    if active is not None:
        corners = corners[np.asarray(active).reshape(-1)]
    vals = np.asarray(nodal).ravel()[corners]
    return float(vals.mean(axis=1).sum() * vol)


def cg(A, b, *, tol=1e-10, maxiter=None, x0=None, project_mean=False,
       diag=None):
    """Diagonally preconditioned conjugate gradients.

    With project_mean=True the solve is restricted to the zero-mean subspace
    (pure-Neumann / periodic systems whose kernel is the constants): the
    iterate and the preconditioned residual are re-projected every iteration
    to suppress floating-point drift along the kernel.

    Returns (x, rel_residual, iterations); raises NoConvergence at the cap.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = max(200, int(50 * np.sqrt(n)))
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    if diag is None:
        diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    def project(v):
        v -= v.mean()
        return v

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if project_mean:
        project(x)
    r = b - A @ x
    if project_mean:
        project(r)
    z = inv_diag * r
    if project_mean:
        project(z)
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise NoConvergence(
                "CG breakdown: operator not positive definite on subspace",
                iterations=k, residual=float(np.linalg.norm(r)) / bnorm)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project_mean:
            project(x)
            project(r)
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            # guard against recurrence drift with one true-residual check
            r_true = b - A @ x
            if project_mean:
                project(r_true)
            res_true = float(np.linalg.norm(r_true)) / bnorm
            if res_true <= tol:
                return x, res_true, k
            r = r_true
        z = inv_diag * r
        if project_mean:
            project(z)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise NoConvergence(
        f"CG did not reach tol={tol:g} in {maxiter} iterations",
        iterations=maxiter,
        residual=float(np.linalg.norm(b - A @ x)) / bnorm)
