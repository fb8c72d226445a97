"""Nonlinear elliptic sub-solver and resolvent operations on state triples.

A state triple x = (u, v, q) collects a nodal displacement-like field, a
nodal velocity-like field and a per-element tensor field.  The composite
evolution operator acts on such triples; its resolvent reduces to one
nonlinear elliptic solve

    K_D u + Bsym^T W E R0(E^T grad^s (u - h1) + h3)
        = M (h2 / lam + (h1 - u) / lam^2)

for a monotone Lipschitz pointwise map R0 (projection, its smoothed
variant, or zero).  The solver works in the increment delta = u - h1,
which keeps the velocity slot (u - h1)/lam well conditioned for small
lam.  Directional derivatives and their adjoints reuse the same linear
operator with the pointwise derivative frozen at the base point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import DiscreteOperators, pointwise_block_operator
from .flow_rule import (
    FlowRuleParams,
    project_K,
    project_K_deriv_matrices,
    smooth_resolvent,
    smooth_resolvent_deriv_matrices,
)

__all__ = [
    "TripleField",
    "PointwiseMap",
    "NewtonSettings",
    "solve_T",
    "apply_resolvent",
    "apply_A_s",
    "solve_T_deriv",
    "apply_resolvent_deriv",
]


@dataclass
class TripleField:
    """State triple (u, v, q): two nodal fields plus a per-element field."""

    u: np.ndarray
    v: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.q = np.asarray(self.q, dtype=float)

    @classmethod
    def zeros(cls, ops: DiscreteOperators) -> "TripleField":
        return cls(
            np.zeros(ops.n_free), np.zeros(ops.n_free), np.zeros(ops.n_q)
        )

    def copy(self) -> "TripleField":
        return TripleField(self.u.copy(), self.v.copy(), self.q.copy())

    def astuple(self):
        return (self.u, self.v, self.q)

    def __add__(self, other: "TripleField") -> "TripleField":
        return TripleField(self.u + other.u, self.v + other.v, self.q + other.q)

    def __sub__(self, other: "TripleField") -> "TripleField":
        return TripleField(self.u - other.u, self.v - other.v, self.q - other.q)

    def __mul__(self, c: float) -> "TripleField":
        return TripleField(c * self.u, c * self.v, c * self.q)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(
            np.sqrt(self.u @ self.u + self.v @ self.v + self.q @ self.q)
        )


@dataclass(frozen=True)
class PointwiseMap:
    """Monotone Lipschitz pointwise map R0 on per-element tensors.

    kind "yosida" is the projection onto the admissible set (the resolvent
    of the flow-rule operator), "smooth" its C^1 smoothing, "zero" the zero
    map (purely linear elliptic problem, used for oracles).
    """

    kind: str
    params: Optional[FlowRuleParams] = None

    def __post_init__(self):
        if self.kind not in ("yosida", "smooth", "zero"):
            raise ValueError(f"unknown pointwise map kind {self.kind!r}")
        if self.kind != "zero" and self.params is None:
            raise ValueError("flow-rule parameters required for this kind")

    def apply(self, t: np.ndarray, dim: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "yosida":
            return project_K(t, self.params.gamma, dim)
        return smooth_resolvent(t, self.params.gamma, self.params.s, dim)

    def deriv_matrices(self, t: np.ndarray, dim: int) -> np.ndarray:
        """Pointwise (generalized) derivative as per-element m x m blocks."""
        m = t.shape[-1]
        if self.kind == "zero":
            return np.zeros(t.shape[:-1] + (m, m))
        if self.kind == "yosida":
            return project_K_deriv_matrices(t, self.params.gamma, dim)
        return smooth_resolvent_deriv_matrices(
            t, self.params.gamma, self.params.s, dim
        )


@dataclass
class NewtonSettings:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    max_iter: int = 50
    linesearch: bool = True
    max_backtracks: int = 30

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


def _field(ops: DiscreteOperators, flat: np.ndarray) -> np.ndarray:
    return flat.reshape(ops.space.n_quad, ops.space.tensor_len)


def _apply_blockwise(mat: np.ndarray, flat: np.ndarray, ops) -> np.ndarray:
    """Apply one m x m matrix at every element of a flat tensor field."""
    return (_field(ops, flat) @ mat.T).ravel()


def _div_E(ops: DiscreteOperators, p_flat: np.ndarray) -> np.ndarray:
    """Bsym^T W E p for a flat per-element field p."""
    Ep = _apply_blockwise(ops.material.E.mat, p_flat, ops)
    return ops.div_adjoint(Ep)


def _strain_E_adj(ops: DiscreteOperators, u_free: np.ndarray) -> np.ndarray:
    """E^T grad^s u as a flat per-element field."""
    return _apply_blockwise(ops.material.E.mat.T, ops.strain(u_free), ops)


def _linearized_matrix(
    ops: DiscreteOperators, lam: float, dR_blocks: np.ndarray
) -> sp.csr_matrix:
    """K_D + Bsym^T W E dR E^T Bsym + M / lam^2 with frozen pointwise dR."""
    E = ops.material.E.mat
    blocks = ops.W[:, None, None] * (E @ dR_blocks @ E.T)
    Jnl = ops.Bsym.T @ pointwise_block_operator(ops, blocks) @ ops.Bsym
    return (ops.K_D + Jnl + ops.M_u / lam**2).tocsr()


def _solve_T_delta(
    h: TripleField,
    R0: PointwiseMap,
    lam: float,
    ops: DiscreteOperators,
    settings: NewtonSettings,
    delta0: Optional[np.ndarray] = None,
):
    """Newton solve for delta = u - h1 of the elliptic sub-problem."""
    if lam <= 0:
        raise ValueError("resolvent parameter lambda must be positive")
    dim = ops.material.dim

    const = ops.K_D @ h.u - (ops.M_u @ h.v) / lam

    def residual(delta):
        theta = _strain_E_adj(ops, delta) + h.q
        p = R0.apply(_field(ops, theta), dim).ravel()
        res = (
            ops.K_D @ delta
            + (ops.M_u @ delta) / lam**2
            + _div_E(ops, p)
            + const
        )
        return res, theta

    delta = np.zeros(ops.n_free) if delta0 is None else delta0.copy()
    res, theta = residual(delta)
    rnorm = np.linalg.norm(res)
    tol = settings.abs_tol + settings.rel_tol * np.linalg.norm(const)

    for _ in range(settings.max_iter):
        if rnorm <= tol:
            return delta, theta
        dR = R0.deriv_matrices(_field(ops, theta), dim)
        J = _linearized_matrix(ops, lam, dR)
        step = spla.spsolve(J.tocsc(), -res)
        t = 1.0
        for _ in range(settings.max_backtracks):
            cand = delta + t * step
            res_new, theta_new = residual(cand)
            rnew = np.linalg.norm(res_new)
            if rnew < rnorm or not settings.linesearch:
                break
            t *= 0.5
        delta, res, theta, rnorm = cand, res_new, theta_new, rnew
    if rnorm > tol:
        raise RuntimeError(
            f"elliptic Newton solve did not converge: residual {rnorm:.3e}, "
            f"tolerance {tol:.3e}"
        )
    return delta, theta


def solve_T(
    h: TripleField,
    R0: PointwiseMap,
    lam: float,
    ops: DiscreteOperators,
    settings: NewtonSettings,
) -> np.ndarray:
    """Solution u of the nonlinear elliptic sub-problem for data h."""
    delta, _ = _solve_T_delta(h, R0, lam, ops, settings)
    return h.u + delta


def apply_resolvent(
    h: TripleField,
    kind: str,
    params: FlowRuleParams,
    ops: DiscreteOperators,
    settings: NewtonSettings,
) -> TripleField:
    """Resolvent of the composite operator at parameter params.lam.

    Returns (u, (u - h1)/lam, R0(E^T grad^s (u - h1) + h3)) with u from
    :func:`solve_T`; the velocity slot is formed from the increment
    directly, so no cancellation occurs for small lam.
    """
    R0 = PointwiseMap(kind, params)
    delta, theta = _solve_T_delta(h, R0, params.lam, ops, settings)
    dim = ops.material.dim
    q = R0.apply(_field(ops, theta), dim).ravel()
    return TripleField(h.u + delta, delta / params.lam, q)


def apply_A_s(
    x: TripleField,
    params: FlowRuleParams,
    ops: DiscreteOperators,
    settings: NewtonSettings,
) -> TripleField:
    """Smoothed Yosida-type operator (1/lam)(I - resolvent) applied to x."""
    R0 = PointwiseMap("smooth", params)
    lam = params.lam
    delta, theta = _solve_T_delta(x, R0, lam, ops, settings)
    dim = ops.material.dim
    p = R0.apply(_field(ops, theta), dim).ravel()
    return TripleField(
        -delta / lam,
        (lam * x.v - delta) / lam**2,
        (x.q - p) / lam,
    )


def solve_T_deriv(
    h: TripleField,
    g: TripleField,
    base_u: np.ndarray,
    R0: PointwiseMap,
    lam: float,
    ops: DiscreteOperators,
    mode: str = "jvp",
    settings: Optional[NewtonSettings] = None,
) -> np.ndarray:
    """Directional derivative (or its adjoint) of the elliptic solution map.

    The pointwise derivative of R0 is frozen at the converged base point;
    jvp solves the tangent equation for eta, vjp the same system with the
    transposed pointwise blocks.
    """
    if mode not in ("jvp", "vjp"):
        raise ValueError(f"unknown mode {mode!r}")
    dim = ops.material.dim
    theta = _strain_E_adj(ops, base_u - h.u) + h.q
    dR = R0.deriv_matrices(_field(ops, theta), dim)
    if mode == "vjp":
        dR = np.swapaxes(dR, -1, -2)
    J = _linearized_matrix(ops, lam, dR)

    # dR applied to E^T grad^s g1 - g3
    arg = _field(ops, _strain_E_adj(ops, g.u) - g.q)
    p = np.einsum("eij,ej->ei", dR, arg).ravel()
    rhs = (ops.M_u @ g.v) / lam + (ops.M_u @ g.u) / lam**2 + _div_E(ops, p)
    return spla.spsolve(J.tocsc(), rhs)


def apply_resolvent_deriv(
    h: TripleField,
    g: TripleField,
    kind: str,
    params: FlowRuleParams,
    ops: DiscreteOperators,
    mode: str = "jvp",
    settings: Optional[NewtonSettings] = None,
    base_u: Optional[np.ndarray] = None,
) -> TripleField:
    """Derivative of the resolvent map in direction g (jvp) or its adjoint (vjp).

    The adjoint is taken in the triple inner product of :func:`fem.h_inner`.
    Because the velocity couplings of the composite operator are skew, the
    adjoint equals the derivative conjugated by the velocity sign flip
    S = diag(I, -I, I): the velocity slot of the data enters negated and
    the velocity slot of the result is negated, on top of transposing the
    pointwise derivative blocks.  This makes the pairing
    <R'(h) g, xi> = <g, R'(h)* xi> exact up to roundoff.
    """
    if mode not in ("jvp", "vjp"):
        raise ValueError(f"unknown mode {mode!r}")
    if settings is None:
        settings = NewtonSettings()
    R0 = PointwiseMap(kind, params)
    lam = params.lam
    if base_u is None:
        base_u = solve_T(h, R0, lam, ops, settings)
    data = g if mode == "jvp" else TripleField(g.u, -g.v, g.q)
    eta = solve_T_deriv(
        h, data, base_u, R0, lam, ops, mode=mode, settings=settings
    )

    dim = ops.material.dim
    theta = _strain_E_adj(ops, base_u - h.u) + h.q
    dR = R0.deriv_matrices(_field(ops, theta), dim)
    if mode == "vjp":
        dR = np.swapaxes(dR, -1, -2)
    arg = _field(ops, _strain_E_adj(ops, eta - data.u) + data.q)
    p = np.einsum("eij,ej->ei", dR, arg).ravel()
    v_out = (eta - data.u) / lam
    if mode == "vjp":
        v_out = -v_out
    return TripleField(eta, v_out, p)
