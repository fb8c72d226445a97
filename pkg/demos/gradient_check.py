"""Adjoint gradient verification.

Sets up a tracking-type control problem (match the response to a known
half-sine body force), computes the reduced gradient with the exact
discrete adjoint, and compares directional derivatives against central
finite differences of the reduced objective.

    python3 demos/gradient_check.py
"""

import numpy as np

from plastodyn import (
    ControlTrajectory,
    FlowRuleParams,
    NewtonSettings,
    Scenario,
    TimeGrid,
    TrackingTarget,
    TripleField,
    assemble_operators,
    build_control_metric,
    build_mesh,
    derive_coupling_tensors,
    fd_check,
    isotropic_rank4,
    make_space,
    solve_state,
)

# ---------------------------------------------------------------------------
# a genuinely plastic setup: moderate yield stress, strong target force
gamma = 0.35
material = derive_coupling_tensors(
    isotropic_rank4(2, 1.0, 1.0), isotropic_rank4(2, 0.5, 0.5),
    rho=1.0, gamma=gamma,
)
mesh = build_mesh(2, ((0.0, 1.0), (0.0, 1.0)), (3, 3), ("left",))
ops = assemble_operators(make_space(mesh), material)
grid = TimeGrid(0.5, 10)
params = FlowRuleParams(gamma=gamma, lam=0.1, s=0.05)
newton = NewtonSettings(abs_tol=1e-12, rel_tol=1e-11)

# target: the response to a half-sine pulse in the x direction
shape = np.zeros(ops.n_free)
shape[0::2] = 1.0
envelope = np.sin(np.pi * grid.times / grid.T_final)
f_ref = ControlTrajectory(grid, 1.2 * envelope[:, None] * shape[None, :])
ref = solve_state(f_ref, TripleField.zeros(ops), params, ops, settings=newton)

scenario = Scenario(
    ops=ops,
    grid=grid,
    params=params,
    initial=TripleField.zeros(ops),
    target=TrackingTarget.from_trajectory(ref, material, ops),
    alpha=1e-3,
    metric=build_control_metric("h1_time_h1_space_zero_ends", grid, ops),
    newton=newton,
)
print(f"scenario: {ops.n_free} displacement dofs, {grid.n_steps} time steps")

# ---------------------------------------------------------------------------
# sweep the finite-difference step: truncation error shrinks, then roundoff
# takes over; the adjoint gradient itself is exact to solver tolerance
f0 = ControlTrajectory.zeros(grid, ops.n_free)
for eps in (1e-3, 1e-4, 1e-5):
    report = fd_check(f0, scenario, n_directions=5, eps=eps, seed=0)
    print(f"eps = {eps:7.0e}: relative errors "
          + ", ".join(f"{e:.2e}" for e in report.errors))
