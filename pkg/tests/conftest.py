"""Shared fixtures: small meshes, materials and tracking scenarios."""

import numpy as np
import pytest

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
    isotropic_rank4,
    make_space,
    q_from_z,
    solve_state,
)


def make_material(dim=2, gamma=0.6, rho=1.0):
    return derive_coupling_tensors(
        isotropic_rank4(dim, 1.0, 1.0),
        isotropic_rank4(dim, 0.5, 0.5),
        rho=rho,
        gamma=gamma,
    )


def make_ops(dim=2, res=3, gamma=0.6, rho=1.0, sides=("left",)):
    if dim == 1:
        mesh = build_mesh(1, (0.0, 1.0), res, sides)
    else:
        mesh = build_mesh(2, ((0.0, 1.0), (0.0, 1.0)), (res, res), sides)
    return assemble_operators(make_space(mesh), make_material(dim, gamma, rho))


def prestressed_initial(ops, magnitude=0.5):
    import scipy.sparse.linalg as spla

    b = np.zeros(ops.n_free)
    b[0 :: ops.space.dim] = magnitude
    u0 = spla.spsolve(ops.K_D.tocsc(), ops.M_u @ b)
    q0 = q_from_z(u0, np.zeros(ops.n_q), ops.material, ops)
    return TripleField(u0, np.zeros(ops.n_free), q0)


def sine_control(grid, ops, magnitude=0.5):
    shape = np.zeros(ops.n_free)
    shape[0 :: ops.space.dim] = 1.0
    env = np.sin(np.pi * grid.times / grid.T_final)
    return ControlTrajectory(grid, magnitude * env[:, None] * shape[None, :])


def make_scenario(
    gamma=0.6,
    lam=0.1,
    s=0.05,
    res=3,
    n_steps=10,
    alpha=1e-3,
    initial=None,
    target_control_mag=0.5,
    kind="smooth",
):
    """Tracking scenario on the unit square; target from a known control."""
    ops = make_ops(res=res, gamma=gamma)
    grid = TimeGrid(0.5, n_steps)
    params = FlowRuleParams(gamma=gamma, lam=lam, s=s)
    newton = NewtonSettings(abs_tol=1e-12, rel_tol=1e-11)
    if initial is None:
        initial = TripleField.zeros(ops)
    metric = build_control_metric("h1_time_h1_space_zero_ends", grid, ops)
    if target_control_mag is None:
        target = TrackingTarget.zeros(grid, ops)
    else:
        f_ref = sine_control(grid, ops, target_control_mag)
        ref = solve_state(f_ref, initial, params, ops, kind=kind, settings=newton)
        target = TrackingTarget.from_trajectory(ref, ops.material, ops)
    return Scenario(
        ops=ops,
        grid=grid,
        params=params,
        initial=initial,
        target=target,
        alpha=alpha,
        metric=metric,
        kind=kind,
        newton=newton,
    )


@pytest.fixture(scope="session")
def ops2d():
    return make_ops()


@pytest.fixture(scope="session")
def params_default():
    return FlowRuleParams(gamma=0.6, lam=0.1, s=0.05)


@pytest.fixture(scope="session")
def newton_tight():
    return NewtonSettings(abs_tol=1e-12, rel_tol=1e-11)


@pytest.fixture(scope="session")
def elastic_scenario():
    """Yield stress far above reachable stress: linear-quadratic regime."""
    return make_scenario(gamma=1e8)


@pytest.fixture(scope="session")
def plastic_scenario():
    return make_scenario(gamma=0.35, target_control_mag=1.5)
