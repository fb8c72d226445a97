"""Time integration of the regularized plasticity evolution.

The semi-discrete system is

    x' = Q [ R f - A_lam(x) ],    x = (u, v, q),

with Q = diag(I, (1/rho) I, C+B), R f = (0, f, 0) and A_lam the
(possibly smoothed) Yosida-type regularization of the composite
operator.  Each implicit step is solved by a monolithic Newton method in
the extended unknowns (u, v, q, delta), where delta is the increment of
the elliptic sub-problem at the new state.  Carrying delta as an
explicit unknown avoids the catastrophic cancellation that evaluating
(w - u) / lam would incur for small lam.

Component form of the right side (kind "smooth"):

    u' = delta / lam
    v' = f / rho + (delta - lam v) / (rho lam^2)
    q' = (1 / lam) (C+B) (pbar - q),   pbar = R_s(E^T grad^s delta + q).

The same module provides the z <-> q change of variables, the
integration operator, the forward sensitivity solve, energy diagnostics,
dense reference integrators and the lambda-convergence study.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import DiscreteOperators, pointwise_block_operator
from .flow_rule import FlowRuleParams
from .resolvent import NewtonSettings, PointwiseMap, TripleField, _field
from .tensors import MaterialModel, apply_rank4

__all__ = [
    "TimeGrid",
    "StateTrajectory",
    "ControlTrajectory",
    "q_from_z",
    "z_from_q",
    "integrate_F",
    "solve_state",
    "solve_state_jvp",
    "elastic_energy",
    "trajectory_h1_distance",
    "convergence_study",
    "solve_elastic_reference",
    "solve_regularized_reference",
    "state_residuals",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T_final] with n_steps intervals."""

    T_final: float
    n_steps: int

    def __post_init__(self):
        if self.T_final <= 0 or self.n_steps < 1:
            raise ValueError("need T_final > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.T_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T_final, self.n_steps + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass
class StateTrajectory:
    grid: TimeGrid
    states: List[TripleField]
    initial: TripleField
    params: FlowRuleParams
    scheme: str
    kind: str
    deltas: List[np.ndarray] = field(default_factory=list)  # per node, [0] for t=0

    def __post_init__(self):
        if len(self.states) != self.grid.n_nodes:
            raise ValueError("state count does not match the time grid")


@dataclass
class ControlTrajectory:
    """Nodal volume-force field per time node plus control-space tag."""

    grid: TimeGrid
    f: np.ndarray  # (n_nodes, n_free)
    space_id: str = "h1_time_h1_space_zero_ends"

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape[0] != self.grid.n_nodes:
            raise ValueError("control values do not match the time grid")

    @classmethod
    def zeros(cls, grid: TimeGrid, n_free: int, space_id="h1_time_h1_space_zero_ends"):
        return cls(grid, np.zeros((grid.n_nodes, n_free)), space_id)

    def copy(self) -> "ControlTrajectory":
        return ControlTrajectory(self.grid, self.f.copy(), self.space_id)


def q_from_z(u, z, material: MaterialModel, ops: DiscreteOperators):
    """Change of variables q = C grad^s u - (C+B) z, per element."""
    eps = _field(ops, ops.strain(u))
    zf = _field(ops, np.asarray(z, dtype=float).ravel())
    q = apply_rank4(material.C, eps) - apply_rank4(material.CpB, zf)
    return q.ravel()


def z_from_q(u, q, material: MaterialModel, ops: DiscreteOperators):
    """Inverse change of variables z = (C+B)^{-1} (C grad^s u - q)."""
    eps = _field(ops, ops.strain(u))
    qf = _field(ops, np.asarray(q, dtype=float).ravel())
    z = apply_rank4(material.CpB_inv, apply_rank4(material.C, eps) - qf)
    return z.ravel()


def integrate_F(f: ControlTrajectory, rho: Optional[float] = None) -> ControlTrajectory:
    """Cumulative trapezoidal integral of the control in time.

    With a density rho the result is divided by rho (momentum version).
    """
    t = f.grid.times
    F = scipy.integrate.cumulative_trapezoid(f.f, t, axis=0, initial=0.0)
    if rho is not None:
        if rho <= 0:
            raise ValueError("density must be positive")
        F = F / rho
    return ControlTrajectory(f.grid, F, f.space_id)


def elastic_energy(x: TripleField, material: MaterialModel, ops: DiscreteOperators) -> float:
    """Quadratic energy 1/2 <D grad^s u, grad^s u> + rho/2 |v|^2 + 1/2 <(C+B)^{-1} q, q>."""
    wq = ops.quad_weights()
    qf = _field(ops, x.q)
    qq = float((apply_rank4(material.CpB_inv, qf).ravel() * wq) @ x.q)
    return 0.5 * float(
        x.u @ (ops.K_D @ x.u) + material.rho * x.v @ (ops.M_u @ x.v) + qq
    )


# ---------------------------------------------------------------------------
# per-step Newton in the extended variables (u, v, q, delta)


def _block_ops(ops: DiscreteOperators):
    """Sparse per-element applications of E, E^T and (C+B)."""
    mat = ops.material
    ne = ops.space.n_quad
    Ef = pointwise_block_operator(ops, mat.E.mat)
    Ea = pointwise_block_operator(ops, mat.E.mat.T)
    CpB = pointwise_block_operator(ops, mat.CpB.mat)
    return Ef, Ea, CpB


def _step_system(ops, params, R0, c, x_prev_extras, y, fvec):
    """Residual of one implicit stage at extended state y = (u, v, q, delta).

    c is the implicit weight (dt for backward Euler, dt/2 for the
    trapezoidal scheme); x_prev_extras = (b_u, b_v, b_q) collects all
    explicit data, so F = stage(y) - b.
    """
    lam = params.lam
    rho = ops.material.rho
    u, v, q, delta = y
    b_u, b_v, b_q = x_prev_extras
    dim = ops.material.dim

    theta = (
        apply_rank4(ops.material.E, _field(ops, ops.strain(delta)), adjoint=True).ravel()
        + q
    )
    pbar = R0.apply(_field(ops, theta), dim).ravel()

    F_u = u - c * delta / lam - b_u
    F_v = v - c * (fvec / rho + (delta - lam * v) / (rho * lam**2)) - b_v
    F_q = (
        q
        - (c / lam) * apply_rank4(ops.material.CpB, _field(ops, pbar - q)).ravel()
        - b_q
    )
    wq = ops.quad_weights()
    Ep = apply_rank4(ops.material.E, _field(ops, pbar)).ravel()
    F_d = (
        ops.K_D @ (delta + u)
        + ops.Bsym.T @ (wq * Ep)
        + (ops.M_u @ delta) / lam**2
        - (ops.M_u @ v) / lam
    )
    return F_u, F_v, F_q, F_d, theta, pbar


def _step_jacobian(ops, params, R0, c, theta):
    """Sparse extended Jacobian at the given frozen pointwise state."""
    lam = params.lam
    rho = ops.material.rho
    n, nq = ops.n_free, ops.n_q
    dim = ops.material.dim
    mat = ops.material

    dR = R0.deriv_matrices(_field(ops, theta), dim)  # (ne, m, m)
    E, CpB = mat.E.mat, mat.CpB.mat
    wq_blocks = ops.W[:, None, None]

    I_n = sp.identity(n, format="csr")
    I_q = sp.identity(nq, format="csr")
    m = ops.space.tensor_len
    eye_m = np.eye(m)

    # F_q blocks
    A_qq = I_q + (c / lam) * pointwise_block_operator(ops, CpB @ (eye_m - dR))
    A_qd = -(c / lam) * (
        pointwise_block_operator(ops, CpB @ dR @ E.T) @ ops.Bsym
    )
    # F_delta blocks
    Wdiag = sp.diags(ops.quad_weights())
    P_dR = ops.Bsym.T @ Wdiag @ pointwise_block_operator(ops, E @ dR)
    A_dq = P_dR
    A_dd = (
        ops.K_D
        + ops.Bsym.T @ pointwise_block_operator(ops, wq_blocks * (E @ dR @ E.T)) @ ops.Bsym
        + ops.M_u / lam**2
    )

    A = sp.bmat(
        [
            [I_n, None, None, -(c / lam) * I_n],
            [None, (1.0 + c / (rho * lam)) * I_n, None, -(c / (rho * lam**2)) * I_n],
            [None, None, A_qq, A_qd],
            [ops.K_D, -ops.M_u / lam, A_dq, A_dd],
        ],
        format="csc",
    )
    return A


def _newton_step(ops, params, R0, c, b, fvec, y0, settings):
    """Solve one implicit stage by Newton; returns (u, v, q, delta)."""
    y = [comp.copy() for comp in y0]
    scale = max(1.0, np.linalg.norm(np.concatenate(b)))
    tol = settings.abs_tol + settings.rel_tol * scale
    res = _step_system(ops, params, R0, c, b, y, fvec)
    F = np.concatenate(res[:4])
    rnorm = np.linalg.norm(F)
    n, nq = ops.n_free, ops.n_q
    for _ in range(settings.max_iter):
        if rnorm <= tol:
            return tuple(y), res[4]
        A = _step_jacobian(ops, params, R0, c, res[4])
        lu = spla.splu(A)
        step = lu.solve(-F)
        du, dv = step[:n], step[n : 2 * n]
        dq, dd = step[2 * n : 2 * n + nq], step[2 * n + nq :]
        t = 1.0
        for _ in range(settings.max_backtracks):
            cand = [y[0] + t * du, y[1] + t * dv, y[2] + t * dq, y[3] + t * dd]
            res_new = _step_system(ops, params, R0, c, b, cand, fvec)
            rnew = np.linalg.norm(np.concatenate(res_new[:4]))
            if rnew < rnorm or not settings.linesearch:
                break
            t *= 0.5
        y, res, rnorm = cand, res_new, rnew
        F = np.concatenate(res[:4])
    if rnorm > tol:
        raise RuntimeError(
            f"time-step Newton did not converge: residual {rnorm:.3e}, "
            f"tolerance {tol:.3e}; consider a smaller dt or larger lambda"
        )
    return tuple(y), res[4]


def _explicit_rate(ops, params, R0, x, delta, fvec):
    """Right side Q [R f - A(x)] evaluated from a known increment delta."""
    lam = params.lam
    rho = ops.material.rho
    dim = ops.material.dim
    theta = (
        apply_rank4(ops.material.E, _field(ops, ops.strain(delta)), adjoint=True).ravel()
        + x.q
    )
    pbar = R0.apply(_field(ops, theta), dim).ravel()
    G_u = delta / lam
    G_v = fvec / rho + (delta - lam * x.v) / (rho * lam**2)
    G_q = apply_rank4(ops.material.CpB, _field(ops, pbar - x.q)).ravel() / lam
    return G_u, G_v, G_q


def _t_increment(ops, params, R0, x, settings):
    """Increment delta of the elliptic sub-problem at state x."""
    from .resolvent import _solve_T_delta

    delta, _ = _solve_T_delta(x, R0, params.lam, ops, settings)
    return delta


def solve_state(
    f: ControlTrajectory,
    initial: TripleField,
    params: FlowRuleParams,
    ops: DiscreteOperators,
    scheme: str = "implicit_euler",
    kind: str = "smooth",
    settings: Optional[NewtonSettings] = None,
) -> StateTrajectory:
    """Integrate the regularized evolution for the given control.

    scheme "implicit_euler" evaluates the control at the end of each step
    (fully implicit); "crank_nicolson" averages the right side between
    the step ends.  kind selects the pointwise map (smoothed by default,
    "yosida" for the plain projection-based regularization).
    """
    if scheme not in ("implicit_euler", "crank_nicolson"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if settings is None:
        settings = NewtonSettings()
    R0 = PointwiseMap(kind, params)
    grid = f.grid
    dt = grid.dt

    x = initial.copy()
    states = [x.copy()]
    delta_prev = _t_increment(ops, params, R0, x, settings)
    deltas = [delta_prev.copy()]
    y = (x.u.copy(), x.v.copy(), x.q.copy(), delta_prev.copy())

    for k in range(grid.n_steps):
        if scheme == "implicit_euler":
            c = dt
            b = (x.u, x.v, x.q)
        else:
            c = 0.5 * dt
            G_u, G_v, G_q = _explicit_rate(ops, params, R0, x, delta_prev, f.f[k])
            b = (x.u + c * G_u, x.v + c * G_v, x.q + c * G_q)
        y, theta = _newton_step(ops, params, R0, c, b, f.f[k + 1], y, settings)
        x = TripleField(y[0].copy(), y[1].copy(), y[2].copy())
        delta_prev = y[3].copy()
        states.append(x)
        deltas.append(delta_prev.copy())

    return StateTrajectory(grid, states, initial.copy(), params, scheme, kind, deltas)


def state_residuals(traj: StateTrajectory, f: ControlTrajectory, ops: DiscreteOperators,
                    settings: Optional[NewtonSettings] = None) -> np.ndarray:
    """Euclidean norms of the per-step scheme residuals (diagnostic)."""
    if settings is None:
        settings = NewtonSettings()
    R0 = PointwiseMap(traj.kind, traj.params)
    dt = traj.grid.dt
    out = []
    for k in range(traj.grid.n_steps):
        x0, x1 = traj.states[k], traj.states[k + 1]
        d1 = traj.deltas[k + 1]
        if traj.scheme == "implicit_euler":
            c, b = dt, (x0.u, x0.v, x0.q)
        else:
            c = 0.5 * dt
            G = _explicit_rate(ops, traj.params, R0, x0, traj.deltas[k], f.f[k])
            b = (x0.u + c * G[0], x0.v + c * G[1], x0.q + c * G[2])
        res = _step_system(
            ops, traj.params, R0, c, b, (x1.u, x1.v, x1.q, d1), f.f[k + 1]
        )
        out.append(np.linalg.norm(np.concatenate(res[:4])))
    return np.array(out)


def solve_state_jvp(
    g: ControlTrajectory,
    base: StateTrajectory,
    ops: DiscreteOperators,
    settings: Optional[NewtonSettings] = None,
) -> List[TripleField]:
    """Forward sensitivity of the trajectory in control direction g.

    Integrates the linearized scheme with all pointwise derivatives
    frozen along the base trajectory; the initial perturbation is zero.
    Only the backward-Euler scheme is supported (it is the default for
    the smoothed forward solve that optimization uses).
    """
    if base.scheme != "implicit_euler":
        raise ValueError("sensitivities are implemented for implicit_euler only")
    if settings is None:
        settings = NewtonSettings()
    params = base.params
    R0 = PointwiseMap(base.kind, params)
    dt = base.grid.dt
    rho = ops.material.rho
    n, nq = ops.n_free, ops.n_q

    eta = TripleField.zeros(ops)
    out = [eta.copy()]
    for k in range(base.grid.n_steps):
        delta = base.deltas[k + 1]
        x1 = base.states[k + 1]
        theta = (
            apply_rank4(ops.material.E, _field(ops, ops.strain(delta)), adjoint=True).ravel()
            + x1.q
        )
        A = _step_jacobian(ops, params, R0, dt, theta)
        rhs = np.concatenate(
            [eta.u, eta.v + (dt / rho) * g.f[k + 1], eta.q, np.zeros(n)]
        )
        sol = spla.splu(A).solve(rhs)
        eta = TripleField(sol[:n], sol[n : 2 * n], sol[2 * n : 2 * n + nq])
        out.append(eta.copy())
    return out


def trajectory_h1_distance(states1, states2, grid: TimeGrid, ops: DiscreteOperators) -> float:
    """Discrete H^1-in-time norm (triple inner product in space) of the difference."""
    from .fem import h_inner

    dt = grid.dt
    w = grid.trapezoid_weights()
    diff = [
        (a.u - b.u, a.v - b.v, a.q - b.q) for a, b in zip(states1, states2)
    ]
    l2 = sum(wk * h_inner(ops, d, d) for wk, d in zip(w, diff))
    h1 = 0.0
    for k in range(grid.n_steps):
        dd = tuple((diff[k + 1][i] - diff[k][i]) / dt for i in range(3))
        h1 += dt * h_inner(ops, dd, dd)
    return float(np.sqrt(l2 + h1))


def convergence_study(
    f: ControlTrajectory,
    initial: TripleField,
    params_list,
    ops: DiscreteOperators,
    scheme: str = "implicit_euler",
    settings: Optional[NewtonSettings] = None,
):
    """Solve with a strictly decreasing lambda sequence (projection kind)
    and report successive trajectory distances in the H^1 norm.
    """
    lams = [p.lam for p in params_list]
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda sequence must be strictly decreasing")
    trajectories = [
        solve_state(f, initial, p, ops, scheme=scheme, kind="yosida", settings=settings)
        for p in params_list
    ]
    distances = [
        trajectory_h1_distance(a.states, b.states, f.grid, ops)
        for a, b in zip(trajectories, trajectories[1:])
    ]
    return {"lambdas": lams, "distances": distances, "trajectories": trajectories}


# ---------------------------------------------------------------------------
# dense reference integrators (independent code path for validation)


def _dense_blocks(ops: DiscreteOperators):
    mat = ops.material
    n, nq = ops.n_free, ops.n_q
    ne, m = ops.space.n_quad, ops.space.tensor_len
    K = ops.K_D.toarray()
    M = ops.M_u.toarray()
    Bs = ops.Bsym.toarray()
    wq = ops.quad_weights()
    E_blk = np.kron(np.eye(ne), mat.E.mat)
    Ea_blk = np.kron(np.eye(ne), mat.E.mat.T)
    C_blk = np.kron(np.eye(ne), mat.C.mat)
    CpBi_blk = np.kron(np.eye(ne), mat.CpB_inv.mat)
    P = Bs.T @ np.diag(wq) @ E_blk
    return K, M, Bs, P, E_blk, Ea_blk, C_blk, CpBi_blk


def solve_elastic_reference(
    f: ControlTrajectory,
    initial: TripleField,
    ops: DiscreteOperators,
    scheme: str = "crank_nicolson",
) -> List[TripleField]:
    """Dense integrator for the exact (non-regularized) elastic system

        u' = v,  rho M v' = -(K_D u + Bsym^T W E q) + M f,  q' = C grad^s v.

    This is the flow-rule-free limit; the trapezoidal scheme conserves
    the quadratic energy of :func:`elastic_energy` exactly because the
    right side is skew in the energy metric.
    """
    mat = ops.material
    rho = mat.rho
    n, nq = ops.n_free, ops.n_q
    K, M, Bs, P, E_blk, Ea_blk, C_blk, _ = _dense_blocks(ops)
    Minv = np.linalg.inv(M)

    N = 2 * n + nq
    A = np.zeros((N, N))
    A[:n, n : 2 * n] = np.eye(n)
    A[n : 2 * n, :n] = -(Minv @ K) / rho
    A[n : 2 * n, 2 * n :] = -(Minv @ P) / rho
    A[2 * n :, n : 2 * n] = C_blk @ Bs
    Bf = np.zeros((N, n))
    Bf[n : 2 * n] = np.eye(n) / rho

    dt = f.grid.dt
    y = np.concatenate([initial.u, initial.v, initial.q])
    out = [initial.copy()]
    if scheme == "crank_nicolson":
        lhs = np.eye(N) - 0.5 * dt * A
        rhs_mat = np.eye(N) + 0.5 * dt * A
        lhs_inv = np.linalg.inv(lhs)
        for k in range(f.grid.n_steps):
            load = 0.5 * dt * Bf @ (f.f[k] + f.f[k + 1])
            y = lhs_inv @ (rhs_mat @ y + load)
            out.append(TripleField(y[:n], y[n : 2 * n], y[2 * n :]))
    elif scheme == "implicit_euler":
        lhs_inv = np.linalg.inv(np.eye(N) - dt * A)
        for k in range(f.grid.n_steps):
            y = lhs_inv @ (y + dt * Bf @ f.f[k + 1])
            out.append(TripleField(y[:n], y[n : 2 * n], y[2 * n :]))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return out


def solve_regularized_reference(
    f: ControlTrajectory,
    initial: TripleField,
    lam: float,
    ops: DiscreteOperators,
    scheme: str = "implicit_euler",
) -> List[TripleField]:
    """Dense integrator for the regularized evolution in the linear regime.

    When the pointwise map never leaves its identity region (yield stress
    effectively infinite) the regularized operator is linear; this routine
    builds its dense matrix independently of the sparse Newton solver and
    steps it with plain dense factorizations, providing an oracle for the
    forward solver.
    """
    mat = ops.material
    rho = mat.rho
    n, nq = ops.n_free, ops.n_q
    K, M, Bs, P, E_blk, Ea_blk, C_blk, _ = _dense_blocks(ops)
    wq = ops.quad_weights()

    # delta = S (M v / lam - K u - P q)
    K_E = Bs.T @ np.diag(wq) @ E_blk @ Ea_blk @ Bs
    S = np.linalg.inv(K + K_E + M / lam**2)
    Dmat = S @ np.hstack([-K, M / lam, -P])  # delta as linear map of (u,v,q)

    N = 2 * n + nq
    # rate G = Q [R f - A x]; rows of A x expressed through delta
    G = np.zeros((N, N))
    G[:n] = Dmat / lam
    G[n : 2 * n] = Dmat / (rho * lam**2)
    G[n : 2 * n, n : 2 * n] -= np.eye(n) / (rho * lam)
    G[2 * n :] = (C_blk @ Bs @ Dmat) / lam
    Bf = np.zeros((N, n))
    Bf[n : 2 * n] = np.eye(n) / rho

    dt = f.grid.dt
    y = np.concatenate([initial.u, initial.v, initial.q])
    out = [initial.copy()]
    if scheme == "implicit_euler":
        lhs_inv = np.linalg.inv(np.eye(N) - dt * G)
        for k in range(f.grid.n_steps):
            y = lhs_inv @ (y + dt * Bf @ f.f[k + 1])
            out.append(TripleField(y[:n], y[n : 2 * n], y[2 * n :]))
    elif scheme == "crank_nicolson":
        lhs_inv = np.linalg.inv(np.eye(N) - 0.5 * dt * G)
        rhs_mat = np.eye(N) + 0.5 * dt * G
        for k in range(f.grid.n_steps):
            y = lhs_inv @ (rhs_mat @ y + 0.5 * dt * Bf @ (f.f[k] + f.f[k + 1]))
            out.append(TripleField(y[:n], y[n : 2 * n], y[2 * n :]))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return out
