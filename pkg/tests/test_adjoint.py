"""Tracking objective, exact discrete adjoint and reduced gradient."""

import numpy as np
import pytest

from plastodyn import (
    ControlTrajectory,
    TrackingTarget,
    TripleField,
    build_control_metric,
    fd_check,
    h_inner,
    reduced_gradient,
    solve_adjoint,
    solve_state_jvp,
    tracking_gradient_H,
    tracking_objective,
    xc_riesz_apply_inverse,
)
from plastodyn.adjoint import _tracking_grad_euclid

from conftest import make_scenario, sine_control

rng = np.random.default_rng(17)


def test_tracking_objective_zero_at_target(elastic_scenario):
    sc = elastic_scenario
    f_ref = sine_control(sc.grid, sc.ops, 0.5)
    traj = sc.solve_forward(f_ref)
    target = TrackingTarget.from_trajectory(traj, sc.material, sc.ops)
    assert tracking_objective(traj, target, sc.material, sc.ops) == pytest.approx(0.0, abs=1e-20)
    # away from the target the objective is positive
    traj0 = sc.solve_forward(ControlTrajectory.zeros(sc.grid, sc.ops.n_free))
    assert tracking_objective(traj0, target, sc.material, sc.ops) > 0


def test_tracking_gradient_H_is_riesz_representative(elastic_scenario):
    """Pairing the triple-norm representative reproduces the Euclidean one."""
    sc = elastic_scenario
    ops = sc.ops
    x = TripleField(rng.normal(size=ops.n_free), rng.normal(size=ops.n_free),
                    rng.normal(size=ops.n_q))
    target_k = (rng.normal(size=ops.n_free), rng.normal(size=ops.n_free),
                rng.normal(size=ops.n_q))
    riesz = tracking_gradient_H(x, target_k, sc.material, ops)
    g_u, g_v, g_q = _tracking_grad_euclid(x, target_k, sc.material, ops)
    d = TripleField(rng.normal(size=ops.n_free), rng.normal(size=ops.n_free),
                    rng.normal(size=ops.n_q))
    lhs = h_inner(ops, riesz.astuple(), d.astuple())
    rhs = g_u @ d.u + g_v @ d.v + g_q @ d.q
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_adjoint_is_exact_transpose(plastic_scenario):
    """The control load pairs with any direction exactly like the forward
    sensitivity pairs with the tracking gradient."""
    sc = plastic_scenario
    f = sine_control(sc.grid, sc.ops, 0.4)
    base = sc.solve_forward(f)
    adj = solve_adjoint(base, sc.target, sc.ops, sc.newton)
    g = ControlTrajectory(sc.grid, rng.normal(size=f.f.shape))
    sens = solve_state_jvp(g, base, sc.ops, settings=sc.newton)
    w = sc.grid.trapezoid_weights()
    dPsi = 0.0
    for k, eta in enumerate(sens):
        g_u, g_v, g_q = _tracking_grad_euclid(
            base.states[k],
            (sc.target.u_d[k], sc.target.v_d[k], sc.target.z_d[k]),
            sc.material, sc.ops,
        )
        dPsi += w[k] * (g_u @ eta.u + g_v @ eta.v + g_q @ eta.q)
    paired = float(np.sum(adj.control_load * g.f))
    assert abs(paired - dPsi) / max(abs(dPsi), 1e-30) < 1e-10


def test_adjoint_vanishes_on_exact_target(elastic_scenario):
    sc = elastic_scenario
    f_ref = sine_control(sc.grid, sc.ops, 0.5)
    base = sc.solve_forward(f_ref)
    target = TrackingTarget.from_trajectory(base, sc.material, sc.ops)
    adj = solve_adjoint(base, target, sc.ops, sc.newton)
    assert np.allclose(adj.control_load, 0.0, atol=1e-14)
    assert max(p.u @ p.u for p in adj.phi) == pytest.approx(0.0, abs=1e-24)


@pytest.mark.parametrize("variant", ["h1_time_h1_space_zero_ends",
                                     "h1_time_l2_space"])
def test_control_metric_consistency(elastic_scenario, variant):
    sc = elastic_scenario
    metric = build_control_metric(variant, sc.grid, sc.ops)
    f = rng.normal(size=(sc.grid.n_nodes, sc.ops.n_free))
    g = rng.normal(size=f.shape)
    # symmetry and positivity on the dof subspace
    assert metric.inner(f, g) == pytest.approx(metric.inner(g, f), rel=1e-11)
    assert metric.norm(f) > 0
    # solve is the inverse of apply on projected fields
    back = metric.solve(metric.apply(f))
    assert np.allclose(back, metric.project(f), atol=1e-8)
    # project is idempotent
    assert np.allclose(metric.project(metric.project(f)), metric.project(f))
    # the Riesz solve agrees with the exposed helper
    assert np.allclose(xc_riesz_apply_inverse(metric.apply(f), metric),
                       metric.project(f), atol=1e-8)


def test_zero_ends_metric_ignores_end_values(elastic_scenario):
    sc = elastic_scenario
    metric = sc.metric
    f = rng.normal(size=(sc.grid.n_nodes, sc.ops.n_free))
    g = f.copy()
    g[0] += 5.0
    g[-1] -= 3.0
    assert metric.norm(f - g) == pytest.approx(0.0, abs=1e-14)
    proj = metric.project(g)
    assert np.allclose(proj[0], 0.0) and np.allclose(proj[-1], 0.0)


def test_reduced_gradient_fd(elastic_scenario):
    f = ControlTrajectory.zeros(elastic_scenario.grid, elastic_scenario.ops.n_free)
    report = fd_check(f, elastic_scenario, n_directions=3, eps=1e-4, seed=1)
    assert report.max_error < 1e-6


def test_reduced_gradient_fd_plastic(plastic_scenario):
    f = sine_control(plastic_scenario.grid, plastic_scenario.ops, 0.3)
    report = fd_check(f, plastic_scenario, n_directions=3, eps=1e-4, seed=2)
    assert report.max_error < 1e-5


def test_fd_check_eps_validation(elastic_scenario):
    f = ControlTrajectory.zeros(elastic_scenario.grid, elastic_scenario.ops.n_free)
    with pytest.raises(ValueError):
        fd_check(f, elastic_scenario, eps=1e-2)
    with pytest.raises(ValueError):
        fd_check(f, elastic_scenario, eps=1e-8)


def test_reduced_gradient_requires_positive_alpha(elastic_scenario):
    sc = elastic_scenario
    f = ControlTrajectory.zeros(sc.grid, sc.ops.n_free)
    base = sc.solve_forward(f)
    adj = solve_adjoint(base, sc.target, sc.ops, sc.newton)
    with pytest.raises(ValueError):
        reduced_gradient(f, adj, 0.0, sc.metric)
