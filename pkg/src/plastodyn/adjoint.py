"""Tracking objective, exact discrete adjoint and the reduced gradient.

The objective is the time integral of half the squared triple-norm
distance to a desired trajectory, expressed in the plastic-strain
variable z = (C+B)^{-1}(C grad^s u - q):

    Psi = 1/2 int_0^T |(u, v, z) - (u_d, v_d, z_d)|_H^2 dt.

The adjoint is the exact transpose of the discretized forward scheme:
each backward step solves the transposed extended step Jacobian, so the
resulting control gradient matches finite differences of the discrete
objective to solver precision.  The continuous counterpart is the usual
backward-in-time costate system with terminal value zero; the extended
multiplier blocks correspond to the costate triple and the auxiliary
elliptic adjoint variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .evolution import (
    ControlTrajectory,
    StateTrajectory,
    TimeGrid,
    _step_jacobian,
    solve_state,
    z_from_q,
)
from .fem import DiscreteOperators
from .flow_rule import FlowRuleParams
from .resolvent import NewtonSettings, PointwiseMap, TripleField, _field
from .tensors import MaterialModel, apply_rank4

__all__ = [
    "TrackingTarget",
    "AdjointTrajectory",
    "ControlSpaceMetric",
    "Scenario",
    "tracking_objective",
    "tracking_gradient_H",
    "solve_adjoint",
    "build_control_metric",
    "xc_riesz_apply_inverse",
    "reduced_gradient",
    "fd_check",
]


@dataclass
class TrackingTarget:
    """Grid-aligned desired trajectory (u_d, v_d, z_d)."""

    u_d: np.ndarray  # (n_nodes, n_free)
    v_d: np.ndarray
    z_d: np.ndarray  # (n_nodes, n_q)

    @classmethod
    def zeros(cls, grid: TimeGrid, ops: DiscreteOperators) -> "TrackingTarget":
        nn = grid.n_nodes
        return cls(
            np.zeros((nn, ops.n_free)),
            np.zeros((nn, ops.n_free)),
            np.zeros((nn, ops.n_q)),
        )

    @classmethod
    def from_trajectory(
        cls, traj: StateTrajectory, material: MaterialModel, ops: DiscreteOperators
    ) -> "TrackingTarget":
        u = np.stack([x.u for x in traj.states])
        v = np.stack([x.v for x in traj.states])
        z = np.stack(
            [z_from_q(x.u, x.q, material, ops) for x in traj.states]
        )
        return cls(u, v, z)


def _mismatch(x: TripleField, target_k, material, ops):
    """(u - u_d, v - v_d, z - z_d) at one time node."""
    u_d, v_d, z_d = target_k
    z = z_from_q(x.u, x.q, material, ops)
    return x.u - u_d, x.v - v_d, z - z_d


def tracking_objective(
    traj: StateTrajectory,
    target: TrackingTarget,
    material: MaterialModel,
    ops: DiscreteOperators,
) -> float:
    """Trapezoidal time integral of half the squared triple-norm mismatch."""
    if target.u_d.shape[0] != traj.grid.n_nodes:
        raise ValueError("target does not match the time grid")
    w = traj.grid.trapezoid_weights()
    wq = ops.quad_weights()
    total = 0.0
    for k, x in enumerate(traj.states):
        du, dv, dz = _mismatch(x, (target.u_d[k], target.v_d[k], target.z_d[k]), material, ops)
        val = du @ (ops.K_D @ du) + dv @ (ops.M_u @ dv) + dz @ (wq * dz)
        total += 0.5 * w[k] * val
    return float(total)


def _tracking_grad_euclid(x, target_k, material, ops):
    """Euclidean gradient of the integrand with respect to (u, v, q)."""
    du, dv, dz = _mismatch(x, target_k, material, ops)
    wq = ops.quad_weights()
    wdz = wq * dz
    # dz/du = E^T grad^s, dz/dq = -(C+B)^{-1}, both pointwise per element
    g_u = ops.K_D @ du + ops.Bsym.T @ apply_rank4(material.E, _field(ops, wdz)).ravel()
    g_v = ops.M_u @ dv
    g_q = -apply_rank4(material.CpB_inv, _field(ops, wdz)).ravel()
    return g_u, g_v, g_q


def tracking_gradient_H(
    x_k: TripleField,
    target_k,
    material: MaterialModel,
    ops: DiscreteOperators,
) -> TripleField:
    """Triple-norm Riesz representative of the integrand's derivative.

    The u slot requires one auxiliary stiffness solve; the v and q slots
    are pointwise.  Pairing the result with any direction in the triple
    inner product reproduces the directional derivative of the integrand.
    """
    du, dv, dz = _mismatch(x_k, target_k, material, ops)
    wq = ops.quad_weights()
    load = ops.Bsym.T @ apply_rank4(material.E, _field(ops, wq * dz)).ravel()
    u_hat = du + spla.spsolve(ops.K_D.tocsc(), load)
    q_slot = -apply_rank4(material.CpB_inv, _field(ops, dz)).ravel()
    return TripleField(u_hat, dv, q_slot)


@dataclass
class AdjointTrajectory:
    """Backward multipliers of the discrete forward scheme.

    phi holds the costate triple per time node with phi[-1] = 0 exactly;
    eta_star the auxiliary elliptic adjoint variable; control_load the
    Euclidean gradient of the tracking term with respect to the nodal
    control values (zero in the first row, since the implicit scheme
    never evaluates the control at t = 0).
    """

    grid: TimeGrid
    phi: List[TripleField]
    eta_star: List[np.ndarray]
    r_star: List[np.ndarray]
    control_load: np.ndarray  # (n_nodes, n_free)


def solve_adjoint(
    base: StateTrajectory,
    target: TrackingTarget,
    ops: DiscreteOperators,
    settings: Optional[NewtonSettings] = None,
) -> AdjointTrajectory:
    """Exact discrete adjoint of the forward solve for the tracking term.

    Each backward step solves the transposed extended step Jacobian
    rebuilt at the converged forward state.  Only the backward-Euler
    scheme is supported.
    """
    if base.scheme != "implicit_euler":
        raise ValueError("the adjoint is implemented for implicit_euler only")
    material = ops.material
    params = base.params
    R0 = PointwiseMap(base.kind, params)
    grid = base.grid
    dt = grid.dt
    rho = material.rho
    n, nq = ops.n_free, ops.n_q
    w = grid.trapezoid_weights()

    sigma_next = np.zeros(2 * n + nq)  # state-slot rows of sigma_{k+1}
    load = np.zeros((grid.n_nodes, n))
    phi = [None] * grid.n_nodes
    eta_star = [None] * grid.n_nodes
    r_star = [None] * grid.n_nodes
    phi[-1] = TripleField.zeros(ops)
    eta_star[-1] = np.zeros(n)
    r_star[-1] = np.zeros(nq)

    for k in range(grid.n_steps, 0, -1):
        x = base.states[k]
        delta = base.deltas[k]
        theta = (
            apply_rank4(material.E, _field(ops, ops.strain(delta)), adjoint=True).ravel()
            + x.q
        )
        g_u, g_v, g_q = _tracking_grad_euclid(
            x, (target.u_d[k], target.v_d[k], target.z_d[k]), material, ops
        )
        rhs = np.concatenate(
            [
                sigma_next[:n] - w[k] * g_u,
                sigma_next[n : 2 * n] - w[k] * g_v,
                sigma_next[2 * n :] - w[k] * g_q,
                np.zeros(n),
            ]
        )
        A = _step_jacobian(ops, params, R0, dt, theta)
        sigma = spla.splu(A.T.tocsc()).solve(rhs)
        load[k] = -(dt / rho) * sigma[n : 2 * n]
        phi[k - 1] = TripleField(
            -sigma[:n] / dt, -sigma[n : 2 * n] / dt, -sigma[2 * n : 2 * n + nq] / dt
        )
        eta_star[k - 1] = -sigma[2 * n + nq :] / dt
        dR = R0.deriv_matrices(_field(ops, theta), material.dim)
        arg = (
            apply_rank4(material.E, _field(ops, ops.strain(eta_star[k - 1])), adjoint=True).ravel()
            + apply_rank4(material.CpB, _field(ops, phi[k - 1].q)).ravel()
        )
        r_star[k - 1] = np.einsum("eji,ej->ei", dR, _field(ops, arg)).ravel()
        sigma_next = sigma[: 2 * n + nq]

    return AdjointTrajectory(grid, phi, eta_star, r_star, load)


# ---------------------------------------------------------------------------
# control space metric


@dataclass
class ControlSpaceMetric:
    """Assembled space-time inner product on the control trajectory.

    variant "h1_time_h1_space_zero_ends": H^1 seminorm in time with zero
    values at t = 0 and t = T, plus the componentwise spatial H^1
    seminorm; the dofs are the interior time nodes.  variant
    "h1_time_l2_space": full H^1(0,T) norm in time with a spatial L^2
    pairing; all time nodes are dofs.
    """

    variant: str
    grid: TimeGrid
    n_free: int
    matrix: sp.csc_matrix
    lu: Any = field(repr=False, default=None)

    @property
    def zero_ends(self) -> bool:
        return self.variant == "h1_time_h1_space_zero_ends"

    def _stack(self, f: np.ndarray) -> np.ndarray:
        return f[1:-1].ravel() if self.zero_ends else f.ravel()

    def _unstack(self, vec: np.ndarray) -> np.ndarray:
        nn = self.grid.n_nodes
        out = np.zeros((nn, self.n_free))
        if self.zero_ends:
            out[1:-1] = vec.reshape(nn - 2, self.n_free)
        else:
            out[:] = vec.reshape(nn, self.n_free)
        return out

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Metric times control values, returned in full node layout."""
        return self._unstack(self.matrix @ self._stack(f))

    def solve(self, load: np.ndarray) -> np.ndarray:
        """Riesz representative of a full-layout load vector."""
        return self._unstack(self.lu.solve(self._stack(load)))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(self._stack(f) @ (self.matrix @ self._stack(g)))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(f, f), 0.0)))

    def project(self, f: np.ndarray) -> np.ndarray:
        """Zero out non-dof rows (end values for the zero-ends variant)."""
        return self._unstack(self._stack(f))


def build_control_metric(
    variant: str, grid: TimeGrid, ops: DiscreteOperators
) -> ControlSpaceMetric:
    dt = grid.dt
    nn = grid.n_nodes
    fd = ops.space.free_dofs
    if variant == "h1_time_h1_space_zero_ends":
        ni = nn - 2
        if ni < 1:
            raise ValueError("zero-ends control space needs at least 2 time steps")
        A_t = (
            sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(ni, ni)) / dt
        )
        K_lap = ops.K_lap[fd][:, fd]
        G = sp.kron(A_t, ops.M_u) + dt * sp.kron(sp.identity(ni), K_lap)
    elif variant == "h1_time_l2_space":
        A_t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(nn, nn)).tolil()
        A_t[0, 0] = 1.0
        A_t[-1, -1] = 1.0
        A_t = (A_t / dt).tocsr()
        W_t = sp.diags(grid.trapezoid_weights())
        G = sp.kron(A_t + W_t, ops.M_u)
    else:
        raise ValueError(f"unknown control space variant {variant!r}")
    G = G.tocsc()
    return ControlSpaceMetric(variant, grid, ops.n_free, G, spla.splu(G))


def xc_riesz_apply_inverse(
    residual: np.ndarray, metric: ControlSpaceMetric
) -> np.ndarray:
    """Solve the metric system for a full-node-layout load array."""
    return metric.solve(np.asarray(residual, dtype=float))


def reduced_gradient(
    f: ControlTrajectory,
    adjoint: AdjointTrajectory,
    alpha: float,
    metric: ControlSpaceMetric,
) -> ControlTrajectory:
    """Metric gradient of the reduced objective at f.

    Equals f plus 1/alpha times the Riesz representative of the tracking
    term's control load; it vanishes exactly when the discrete gradient
    equation (tracking load balanced by alpha times the metric image of
    f) holds.
    """
    if alpha <= 0:
        raise ValueError("Tikhonov weight alpha must be positive")
    grad = metric.project(f.f) + xc_riesz_apply_inverse(adjoint.control_load, metric) / alpha
    return ControlTrajectory(f.grid, grad, f.space_id)


# ---------------------------------------------------------------------------
# problem bundle and finite-difference verification


@dataclass
class Scenario:
    """Everything needed to evaluate the reduced objective and gradient."""

    ops: DiscreteOperators
    grid: TimeGrid
    params: FlowRuleParams
    initial: TripleField
    target: TrackingTarget
    alpha: float
    metric: ControlSpaceMetric
    scheme: str = "implicit_euler"
    kind: str = "smooth"
    newton: NewtonSettings = field(default_factory=NewtonSettings)

    @property
    def material(self) -> MaterialModel:
        return self.ops.material

    def solve_forward(self, f: ControlTrajectory) -> StateTrajectory:
        return solve_state(
            f, self.initial, self.params, self.ops,
            scheme=self.scheme, kind=self.kind, settings=self.newton,
        )

    def reduced_value(self, f: ControlTrajectory, traj: Optional[StateTrajectory] = None):
        if traj is None:
            traj = self.solve_forward(f)
        value = tracking_objective(traj, self.target, self.material, self.ops)
        value += 0.5 * self.alpha * self.metric.inner(f.f, f.f)
        return value, traj


@dataclass
class FdReport:
    eps: float
    errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(self.errors.max())


def fd_check(
    f: ControlTrajectory,
    scenario: Scenario,
    n_directions: int = 5,
    eps: float = 1e-5,
    seed: int = 0,
) -> FdReport:
    """Central-difference verification of the reduced gradient.

    Compares alpha-weighted metric pairings of the adjoint gradient with
    central differences of the reduced objective along random directions.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("finite-difference step must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    base = scenario.solve_forward(f)
    adj = solve_adjoint(base, scenario.target, scenario.ops, scenario.newton)
    grad = reduced_gradient(f, adj, scenario.alpha, scenario.metric)

    errors = []
    for _ in range(n_directions):
        g = scenario.metric.project(rng.normal(size=f.f.shape))
        g /= max(scenario.metric.norm(g), 1e-30)
        deriv = scenario.alpha * scenario.metric.inner(grad.f, g)
        fp = ControlTrajectory(f.grid, f.f + eps * g, f.space_id)
        fm = ControlTrajectory(f.grid, f.f - eps * g, f.space_id)
        vp, _ = scenario.reduced_value(fp)
        vm, _ = scenario.reduced_value(fm)
        fd = (vp - vm) / (2.0 * eps)
        errors.append(abs(fd - deriv) / max(abs(fd), 1e-30))
    return FdReport(eps, np.array(errors))
