"""Meshes, P1 elements and the assembled discrete operators.

Supported meshes: intervals in 1d and structured triangulations of a
rectangle in 2d (each grid cell split into two triangles).  Displacement
fields are nodal with d components; tensor fields (q, z, stresses) carry
one value per element, where the P1 symmetric gradient is constant.

The assembled objects are
  K_D   stiffness from <D grad^s u, grad^s v>            (free dofs)
  M_u   consistent displacement mass, M_rho = rho * M_u  (free dofs)
  Bsym  nodal -> per-element symmetric gradient (Voigt storage)
  W     element measures; the quad-point mass is W applied blockwise
  K_lap componentwise scalar H^1-seminorm stiffness      (all nodes)

The discrete divergence is defined through the exact adjoint
-div_h := -Bsym^T W, so integration by parts holds to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .tensors import MaterialModel, Rank4Tensor, voigt_dim

__all__ = [
    "Mesh",
    "FeSpace",
    "DiscreteOperators",
    "build_mesh",
    "make_space",
    "assemble_operators",
    "h_inner",
    "apply_dirichlet",
    "pointwise_block_operator",
]

_SQRT2 = np.sqrt(2.0)

_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")


@dataclass
class Mesh:
    dim: int
    coords: np.ndarray          # (n_nodes, dim)
    elems: np.ndarray           # (n_elems, dim + 1), positive orientation
    dirichlet_nodes: np.ndarray  # sorted node indices on Gamma_D
    dirichlet_sides: tuple

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]


def build_mesh(dim, extents, resolution, dirichlet_sides) -> Mesh:
    """Structured mesh of an interval or rectangle with tagged boundary.

    ``dirichlet_sides`` selects whole boundary sides for Gamma_D; the rest
    of the boundary is Gamma_N.  At least one side is required (positive
    boundary measure).
    """
    if dim not in (1, 2):
        raise ValueError("meshing supports dim in {1, 2}")
    sides = tuple(dirichlet_sides)
    valid = _SIDES_1D if dim == 1 else _SIDES_2D
    if not sides:
        raise ValueError("Gamma_D must contain at least one boundary side")
    for s in sides:
        if s not in valid:
            raise ValueError(f"unknown boundary side {s!r} for dim={dim}")

    if dim == 1:
        (a, b) = extents
        n = int(resolution)
        if n < 1 or b <= a:
            raise ValueError("invalid 1d mesh specification")
        coords = np.linspace(a, b, n + 1)[:, None]
        elems = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        dir_nodes = []
        if "left" in sides:
            dir_nodes.append(0)
        if "right" in sides:
            dir_nodes.append(n)
        return Mesh(1, coords, elems, np.array(sorted(dir_nodes)), sides)

    (ax, bx), (ay, by) = extents
    nx, ny = (int(r) for r in (resolution if np.ndim(resolution) else (resolution, resolution)))
    if nx < 1 or ny < 1 or bx <= ax or by <= ay:
        raise ValueError("invalid 2d mesh specification")
    xs = np.linspace(ax, bx, nx + 1)
    ys = np.linspace(ay, by, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    coords = np.stack([X.ravel(), Y.ravel()], axis=1)

    def nid(i, j):
        return i * (ny + 1) + j

    elems = []
    for i in range(nx):
        for j in range(ny):
            n00, n10 = nid(i, j), nid(i + 1, j)
            n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
            elems.append((n00, n10, n11))
            elems.append((n00, n11, n01))
    elems = np.array(elems, dtype=int)

    dir_mask = np.zeros(coords.shape[0], dtype=bool)
    tol = 1e-12 * max(bx - ax, by - ay)
    if "left" in sides:
        dir_mask |= np.abs(coords[:, 0] - ax) < tol
    if "right" in sides:
        dir_mask |= np.abs(coords[:, 0] - bx) < tol
    if "bottom" in sides:
        dir_mask |= np.abs(coords[:, 1] - ay) < tol
    if "top" in sides:
        dir_mask |= np.abs(coords[:, 1] - by) < tol
    return Mesh(2, coords, elems, np.flatnonzero(dir_mask), sides)


@dataclass
class FeSpace:
    """Dof bookkeeping: nodal displacement dofs and per-element tensor dofs."""

    mesh: Mesh
    free_nodes: np.ndarray = field(init=False)
    free_dofs: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = np.ones(self.mesh.n_nodes, dtype=bool)
        mask[self.mesh.dirichlet_nodes] = False
        self.free_nodes = np.flatnonzero(mask)
        d = self.mesh.dim
        # dof layout: node-major, component-minor
        self.free_dofs = (self.free_nodes[:, None] * d + np.arange(d)).ravel()

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def n_full(self) -> int:
        return self.mesh.n_nodes * self.mesh.dim

    @property
    def n_free(self) -> int:
        return self.free_dofs.size

    @property
    def tensor_len(self) -> int:
        return voigt_dim(self.mesh.dim)

    @property
    def n_quad(self) -> int:
        return self.mesh.n_elems

    @property
    def n_q(self) -> int:
        return self.mesh.n_elems * self.tensor_len


def make_space(mesh: Mesh) -> FeSpace:
    return FeSpace(mesh)


def apply_dirichlet(space: FeSpace, fld: np.ndarray, mode: str) -> np.ndarray:
    """Restrict a full nodal field to free dofs or prolong by zero."""
    if mode == "restrict":
        if fld.shape[-1] != space.n_full:
            raise ValueError("expected a full-layout field")
        return fld[..., space.free_dofs]
    if mode == "prolong_zero":
        if fld.shape[-1] != space.n_free:
            raise ValueError("expected a free-layout field")
        out = np.zeros(fld.shape[:-1] + (space.n_full,))
        out[..., space.free_dofs] = fld
        return out
    raise ValueError(f"unknown mode {mode!r}")


def _element_geometry(mesh: Mesh):
    """Per-element measure and P1 shape-function gradients."""
    coords, elems = mesh.coords, mesh.elems
    if mesh.dim == 1:
        h = coords[elems[:, 1], 0] - coords[elems[:, 0], 0]
        if np.any(h <= 0):
            raise ValueError("degenerate 1d element")
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]  # (ne,2,1)
        return h, grads
    p0 = coords[elems[:, 0]]
    p1 = coords[elems[:, 1]]
    p2 = coords[elems[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (
        p2[:, 0] - p0[:, 0]
    )
    if np.any(det <= 0):
        raise ValueError("degenerate or negatively oriented triangle")
    area = 0.5 * det
    # grad of barycentric functions
    g = np.empty((mesh.n_elems, 3, 2))
    g[:, 0, 0] = p1[:, 1] - p2[:, 1]
    g[:, 0, 1] = p2[:, 0] - p1[:, 0]
    g[:, 1, 0] = p2[:, 1] - p0[:, 1]
    g[:, 1, 1] = p0[:, 0] - p2[:, 0]
    g[:, 2, 0] = p0[:, 1] - p1[:, 1]
    g[:, 2, 1] = p1[:, 0] - p0[:, 0]
    g /= det[:, None, None]
    return area, g


@dataclass
class DiscreteOperators:
    """Assembled matrices on free dofs plus quadrature-point structure."""

    space: FeSpace
    material: MaterialModel
    M_u: sp.csr_matrix
    M_rho: sp.csr_matrix
    K_D: sp.csr_matrix
    Bsym: sp.csr_matrix           # (n_q, n_free)
    W: np.ndarray                 # (n_elems,) element measures
    K_lap: sp.csr_matrix          # (n_full, n_full), componentwise Laplacian
    lumped: bool = False

    @property
    def n_free(self) -> int:
        return self.space.n_free

    @property
    def n_q(self) -> int:
        return self.space.n_q

    def quad_weights(self) -> np.ndarray:
        """Quadrature weights repeated per tensor component (diag of M_q)."""
        return np.repeat(self.W, self.space.tensor_len)

    def W_diag(self) -> sp.csr_matrix:
        return sp.diags(self.quad_weights()).tocsr()

    def div_adjoint(self, tau: np.ndarray) -> np.ndarray:
        """Dual vector of -div tau on free dofs: Bsym^T (W tau)."""
        return self.Bsym.T @ (self.quad_weights() * tau)

    def strain(self, u_free: np.ndarray) -> np.ndarray:
        """Per-element symmetric gradient of a free-layout nodal field."""
        return self.Bsym @ u_free


def pointwise_block_operator(ops: DiscreteOperators, blocks: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal sparse matrix from per-element m x m blocks.

    ``blocks`` is either a single (m, m) matrix applied at every element or
    an (n_elems, m, m) array.
    """
    ne, m = ops.space.n_quad, ops.space.tensor_len
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape == (m, m):
        blocks = np.broadcast_to(blocks, (ne, m, m))
    if blocks.shape != (ne, m, m):
        raise ValueError(f"expected blocks of shape {(ne, m, m)}, got {blocks.shape}")
    return _bsr_blockdiag(blocks)


def _bsr_blockdiag(blocks: np.ndarray) -> sp.csr_matrix:
    ne, m, _ = blocks.shape
    indptr = np.arange(ne + 1)
    indices = np.arange(ne)
    return sp.bsr_matrix((blocks, indices, indptr), shape=(ne * m, ne * m)).tocsr()


def assemble_operators(
    space: FeSpace, material: MaterialModel, lumped_mass: bool = False
) -> DiscreteOperators:
    """Assemble mass, stiffness and strain operators for a P1 space."""
    mesh = space.mesh
    if material.dim != mesh.dim:
        raise ValueError("material dimension does not match the mesh")
    d = mesh.dim
    m = space.tensor_len
    nloc = d + 1
    w, grads = _element_geometry(mesh)

    # local scalar mass matrix on the reference simplex (exact for P1 * P1)
    loc_mass = (np.ones((nloc, nloc)) + np.eye(nloc)) / ((nloc) * (nloc + 1))

    rows_m, cols_m, vals_m = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    rows_l, cols_l, vals_l = [], [], []

    for e in range(mesh.n_elems):
        nodes = mesh.elems[e]
        ge = grads[e]  # (nloc, d)
        # scalar mass, replicated per displacement component
        me = w[e] * loc_mass
        if lumped_mass:
            me = np.diag(me.sum(axis=1))
        for a in range(nloc):
            for b in range(nloc):
                for c in range(d):
                    rows_m.append(nodes[a] * d + c)
                    cols_m.append(nodes[b] * d + c)
                    vals_m.append(me[a, b])
        # scalar Laplacian, replicated per component
        le = w[e] * (ge @ ge.T)
        for a in range(nloc):
            for b in range(nloc):
                for c in range(d):
                    rows_l.append(nodes[a] * d + c)
                    cols_l.append(nodes[b] * d + c)
                    vals_l.append(le[a, b])
        # symmetric gradient rows (constant per element)
        base = e * m
        for a in range(nloc):
            for c in range(d):
                col = nodes[a] * d + c
                if d == 1:
                    rows_b.append(base)
                    cols_b.append(col)
                    vals_b.append(ge[a, 0])
                else:
                    # normal components
                    rows_b.append(base + c)
                    cols_b.append(col)
                    vals_b.append(ge[a, c])
                    # shear component, sqrt(2)-weighted storage
                    other = 1 - c
                    rows_b.append(base + 2)
                    cols_b.append(col)
                    vals_b.append(ge[a, other] / _SQRT2)

    n_full = space.n_full
    M_full = sp.csr_matrix((vals_m, (rows_m, cols_m)), shape=(n_full, n_full))
    K_lap = sp.csr_matrix((vals_l, (rows_l, cols_l)), shape=(n_full, n_full))
    B_full = sp.csr_matrix((vals_b, (rows_b, cols_b)), shape=(space.n_q, n_full))

    fd = space.free_dofs
    M_u = M_full[fd][:, fd].tocsr()
    Bsym = B_full[:, fd].tocsr()

    wq = np.repeat(w, m)
    D_blk = _bsr_blockdiag(np.broadcast_to(material.D.mat, (mesh.n_elems, m, m)).copy())
    K_D = (Bsym.T @ sp.diags(wq) @ D_blk @ Bsym).tocsr()
    K_D = 0.5 * (K_D + K_D.T)

    return DiscreteOperators(
        space=space,
        material=material,
        M_u=M_u,
        M_rho=(material.rho * M_u).tocsr(),
        K_D=K_D,
        Bsym=Bsym,
        W=w,
        K_lap=K_lap,
        lumped=lumped_mass,
    )


def h_inner(ops: DiscreteOperators, x1, x2) -> float:
    """Discrete scalar product of two (u, v, q) triples:

    <D grad^s u1, grad^s u2> + <v1, v2> + <q1, q2>.
    """
    u1, v1, q1 = x1
    u2, v2, q2 = x2
    if u1.shape != u2.shape or v1.shape != v2.shape or q1.shape != q2.shape:
        raise ValueError("triple layouts do not match")
    wq = ops.quad_weights()
    return float(u1 @ (ops.K_D @ u2) + v1 @ (ops.M_u @ v2) + q1 @ (wq * q2))
