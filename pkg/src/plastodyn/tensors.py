"""Symmetric-tensor algebra in weighted Voigt storage.

A symmetric d x d tensor is stored as a vector of length m = d(d+1)/2,
ordered [11, 22, ..., dd, sqrt(2)*offdiag...].  The sqrt(2) weight on the
shear entries makes the Euclidean dot product of two stored vectors equal
to the Frobenius inner product of the full matrices, so every adjoint
identity used downstream is exact in storage coordinates.

Rank-4 tensors (elasticity, hardening and the derived coupling tensors)
are dense m x m matrices acting on this storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SymTensor2",
    "Rank4Tensor",
    "MaterialModel",
    "voigt_dim",
    "voigt_identity",
    "deviator",
    "dev_projector",
    "apply_rank4",
    "coercivity_constant",
    "derive_coupling_tensors",
    "isotropic_rank4",
    "sym_matrix_to_voigt",
    "voigt_to_sym_matrix",
]

_SQRT2 = np.sqrt(2.0)

# off-diagonal index pairs per dimension, fixed once
_OFFDIAG = {1: [], 2: [(0, 1)], 3: [(0, 1), (0, 2), (1, 2)]}


def voigt_dim(dim: int) -> int:
    """Length of the stored vector for a symmetric dim x dim tensor."""
    if dim not in (1, 2, 3):
        raise ValueError(f"spatial dimension must be 1, 2 or 3, got {dim}")
    return dim * (dim + 1) // 2


def voigt_identity(dim: int) -> np.ndarray:
    """Stored vector of the identity matrix."""
    e = np.zeros(voigt_dim(dim))
    e[:dim] = 1.0
    return e


def sym_matrix_to_voigt(mat: np.ndarray) -> np.ndarray:
    """Convert a symmetric matrix (last two axes) to weighted Voigt storage."""
    mat = np.asarray(mat, dtype=float)
    dim = mat.shape[-1]
    if mat.shape[-2] != dim:
        raise ValueError("expected square matrix on the last two axes")
    if not np.allclose(mat, np.swapaxes(mat, -1, -2), atol=1e-12 * (1 + np.abs(mat).max())):
        raise ValueError("matrix is not symmetric")
    comps = [mat[..., i, i] for i in range(dim)]
    comps += [_SQRT2 * mat[..., i, j] for i, j in _OFFDIAG[dim]]
    return np.stack(comps, axis=-1)


def voigt_to_sym_matrix(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`sym_matrix_to_voigt`."""
    vec = np.asarray(vec, dtype=float)
    m = vec.shape[-1]
    dim = {1: 1, 3: 2, 6: 3}.get(m)
    if dim is None:
        raise ValueError(f"storage length {m} is not a valid Voigt size")
    out = np.zeros(vec.shape[:-1] + (dim, dim))
    for i in range(dim):
        out[..., i, i] = vec[..., i]
    for k, (i, j) in enumerate(_OFFDIAG[dim]):
        out[..., i, j] = out[..., j, i] = vec[..., dim + k] / _SQRT2
    return out


@dataclass
class SymTensor2:
    """A single symmetric tensor value in weighted Voigt storage."""

    entries: np.ndarray
    dim: int

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape != (voigt_dim(self.dim),):
            raise ValueError(
                f"expected {voigt_dim(self.dim)} entries for dim={self.dim}, "
                f"got shape {self.entries.shape}"
            )

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "SymTensor2":
        mat = np.asarray(mat, dtype=float)
        return cls(sym_matrix_to_voigt(mat), mat.shape[-1])

    def to_matrix(self) -> np.ndarray:
        return voigt_to_sym_matrix(self.entries)

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))


def deviator(t: np.ndarray, dim: int) -> np.ndarray:
    """t - (tr t / d) I, acting on the last storage axis."""
    t = np.asarray(t, dtype=float)
    tr = t[..., :dim].sum(axis=-1)
    out = t.copy()
    out[..., :dim] -= tr[..., None] / dim
    return out


def dev_projector(dim: int) -> np.ndarray:
    """Matrix of the deviatoric projection in storage coordinates."""
    m = voigt_dim(dim)
    e = voigt_identity(dim)
    return np.eye(m) - np.outer(e, e) / dim


@dataclass
class Rank4Tensor:
    """Linear map on symmetric tensors, stored as a dense m x m matrix."""

    mat: np.ndarray
    dim: int
    symmetric: bool = field(default=False)

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=float)
        m = voigt_dim(self.dim)
        if self.mat.shape != (m, m):
            raise ValueError(f"expected {(m, m)} coefficient matrix, got {self.mat.shape}")
        if self.symmetric and not np.allclose(self.mat, self.mat.T, atol=1e-12):
            raise ValueError("symmetry flag set but coefficient matrix is not symmetric")

    @classmethod
    def identity(cls, dim: int) -> "Rank4Tensor":
        return cls(np.eye(voigt_dim(dim)), dim, symmetric=True)

    def transpose(self) -> "Rank4Tensor":
        return Rank4Tensor(self.mat.T.copy(), self.dim, symmetric=self.symmetric)

    def __matmul__(self, other: "Rank4Tensor") -> "Rank4Tensor":
        return Rank4Tensor(self.mat @ other.mat, self.dim)

    def inv(self) -> "Rank4Tensor":
        return Rank4Tensor(np.linalg.inv(self.mat), self.dim, symmetric=self.symmetric)


def apply_rank4(G: Rank4Tensor, t: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Apply G (or its adjoint) to tensors stored along the last axis."""
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != G.mat.shape[1]:
        raise ValueError(
            f"storage length {t.shape[-1]} does not match tensor of dim {G.dim}"
        )
    mat = G.mat.T if adjoint else G.mat
    return t @ mat.T


def coercivity_constant(G: Rank4Tensor, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a symmetric rank-4 tensor.

    Raises ValueError on asymmetric input (beyond ``tol``).
    """
    if not np.allclose(G.mat, G.mat.T, atol=tol * (1 + np.abs(G.mat).max())):
        raise ValueError("coercivity constant is only defined for symmetric tensors")
    return float(np.linalg.eigvalsh(0.5 * (G.mat + G.mat.T)).min())


@dataclass
class MaterialModel:
    """Elasticity tensor C, hardening B and the derived coupling tensors.

    D = B (C+B)^{-1} C and E = C (C+B)^{-1}; both are precomputed together
    with (C+B) and its inverse.  rho is the mass density, gamma_yield the
    uni-axial yield stress.
    """

    C: Rank4Tensor
    B: Rank4Tensor
    D: Rank4Tensor
    E: Rank4Tensor
    E_adj: Rank4Tensor
    CpB: Rank4Tensor
    CpB_inv: Rank4Tensor
    rho: float
    gamma_yield: float

    @property
    def dim(self) -> int:
        return self.C.dim


def derive_coupling_tensors(
    C: Rank4Tensor,
    B: Rank4Tensor,
    rho: float,
    gamma: float,
    coercivity_tol: float = 1e-10,
) -> MaterialModel:
    """Build a MaterialModel from C and B, checking symmetry and coercivity."""
    if C.dim != B.dim:
        raise ValueError("C and B must share the spatial dimension")
    if rho <= 0:
        raise ValueError("density must be positive")
    if gamma <= 0:
        raise ValueError("yield stress must be positive")
    for name, G in (("C", C), ("B", B)):
        if coercivity_constant(G, tol=coercivity_tol) <= coercivity_tol:
            raise ValueError(f"{name} is not coercive")

    CpB = Rank4Tensor(C.mat + B.mat, C.dim, symmetric=True)
    CpB_inv = CpB.inv()
    D = Rank4Tensor(B.mat @ CpB_inv.mat @ C.mat, C.dim)
    # D is symmetric up to roundoff; symmetrize so downstream checks are exact
    D = Rank4Tensor(0.5 * (D.mat + D.mat.T), C.dim, symmetric=True)
    E = Rank4Tensor(C.mat @ CpB_inv.mat, C.dim)
    if coercivity_constant(D, tol=coercivity_tol) <= coercivity_tol:
        raise ValueError("derived tensor D is not coercive")
    return MaterialModel(
        C=C,
        B=B,
        D=D,
        E=E,
        E_adj=E.transpose(),
        CpB=CpB,
        CpB_inv=CpB_inv,
        rho=float(rho),
        gamma_yield=float(gamma),
    )


def isotropic_rank4(dim: int, lam: float, mu: float) -> Rank4Tensor:
    """Isotropic tensor tau -> 2 mu tau + lam tr(tau) I.

    Coercive iff mu > 0 and 2*mu + dim*lam > 0.
    """
    m = voigt_dim(dim)
    e = voigt_identity(dim)
    mat = 2.0 * mu * np.eye(m) + lam * np.outer(e, e)
    return Rank4Tensor(mat, dim, symmetric=True)
