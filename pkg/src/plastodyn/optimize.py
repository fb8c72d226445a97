"""Reduced-problem driver: metric quasi-Newton descent and continuation.

The reduced objective F(f) = Psi(S(f)) + alpha/2 |f|_Xc^2 is minimized
with a limited-memory BFGS method whose inner products are taken in the
control-space metric, globalized by Armijo backtracking.  A continuation
loop re-solves with a decreasing sequence of regularization parameters,
warm-starting each stage from the previous optimum.

Only stationarity is certified (vanishing reduced gradient); the method
does not certify global optimality of the nonconvex reduced problem.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .adjoint import Scenario, reduced_gradient, solve_adjoint
from .evolution import ControlTrajectory, StateTrajectory
from .flow_rule import FlowRuleParams

__all__ = [
    "OptimizerConfig",
    "ContinuationSchedule",
    "OptimizeHistory",
    "StageResult",
    "evaluate_reduced",
    "minimize",
    "continuation_run",
]


@dataclass
class OptimizerConfig:
    max_outer_iter: int = 50
    grad_tol: float = 1e-8
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    memory: int = 8

    def __post_init__(self):
        if not 0.0 < self.armijo_c1 < 0.5:
            raise ValueError("Armijo constant must lie in (0, 1/2)")
        if self.grad_tol <= 0:
            raise ValueError("gradient tolerance must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass
class OptimizeHistory:
    values: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def n_iters(self) -> int:
        return len(self.steps)


def evaluate_reduced(
    f: ControlTrajectory, scenario: Scenario
) -> Tuple[float, StateTrajectory]:
    """Reduced objective value and the forward trajectory for reuse."""
    return scenario.reduced_value(f)


def _gradient(f, scenario, traj):
    adj = solve_adjoint(traj, scenario.target, scenario.ops, scenario.newton)
    grad = reduced_gradient(f, adj, scenario.alpha, scenario.metric)
    return grad


def minimize(
    f0: ControlTrajectory,
    scenario: Scenario,
    config: Optional[OptimizerConfig] = None,
) -> Tuple[ControlTrajectory, OptimizeHistory]:
    """Metric limited-memory BFGS with Armijo backtracking.

    The objective history is non-increasing by construction; iteration
    stops when the metric norm of the reduced gradient falls below
    config.grad_tol or the iteration cap is reached.  Rejected curvature
    pairs are skipped, falling back to steepest descent in the metric
    when no pairs are available.
    """
    if config is None:
        config = OptimizerConfig()
    metric = scenario.metric
    alpha = scenario.alpha
    inner = metric.inner

    f = ControlTrajectory(f0.grid, metric.project(f0.f), f0.space_id)
    value, traj = scenario.reduced_value(f)
    grad = _gradient(f, scenario, traj)
    gnorm = metric.norm(grad.f)

    hist = OptimizeHistory(values=[value], grad_norms=[gnorm])
    pairs = []  # (s, y) arrays in full node layout

    for _ in range(config.max_outer_iter):
        if gnorm <= config.grad_tol:
            hist.converged = True
            hist.message = "gradient tolerance reached"
            return f, hist

        # Riesz gradient of F in the metric is alpha * reduced gradient
        g_vec = alpha * grad.f
        if pairs:
            # two-loop recursion with metric inner products
            q = g_vec.copy()
            rhos, coeffs = [], []
            for s_i, y_i in reversed(pairs):
                rho = 1.0 / inner(y_i, s_i)
                a = rho * inner(s_i, q)
                q -= a * y_i
                rhos.append(rho)
                coeffs.append(a)
            s_l, y_l = pairs[-1]
            r = q * (inner(s_l, y_l) / inner(y_l, y_l))
            for (s_i, y_i), rho, a in zip(pairs, reversed(rhos), reversed(coeffs)):
                b = rho * inner(y_i, r)
                r += (a - b) * s_i
            d = -r
        else:
            d = -g_vec
        slope = inner(g_vec, d)
        if slope >= 0:
            d = -g_vec
            slope = -inner(g_vec, g_vec)

        t = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            f_try = ControlTrajectory(f.grid, f.f + t * d, f.space_id)
            v_try, traj_try = scenario.reduced_value(f_try)
            if v_try <= value + config.armijo_c1 * t * slope:
                accepted = True
                break
            t *= config.backtrack_factor
        if not accepted:
            hist.message = "line search failed; returning last iterate"
            return f, hist

        grad_new = _gradient(f_try, scenario, traj_try)
        s_vec = f_try.f - f.f
        y_vec = alpha * (grad_new.f - grad.f)
        sy = inner(s_vec, y_vec)
        if sy > 1e-12 * metric.norm(s_vec) * metric.norm(y_vec):
            pairs.append((s_vec, y_vec))
            if len(pairs) > config.memory:
                pairs.pop(0)

        f, value, traj, grad = f_try, v_try, traj_try, grad_new
        gnorm = metric.norm(grad.f)
        hist.values.append(value)
        hist.grad_norms.append(gnorm)
        hist.steps.append(t)

    hist.converged = gnorm <= config.grad_tol
    hist.message = (
        "gradient tolerance reached" if hist.converged else "iteration cap reached"
    )
    return f, hist


@dataclass
class ContinuationSchedule:
    """Strictly decreasing (lambda, s) stages for the regularization.

    Validation enforces s in (0,1) per stage and requires the smoothing
    width to decrease at least as fast as lambda between stages, so the
    smoothing gap vanishes relative to the regularization.
    """

    stages: List[Tuple[float, float]]
    warm_start: bool = True

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        for lam, s in self.stages:
            if lam <= 0:
                raise ValueError("lambda must be positive")
            if not 0.0 < s < 1.0:
                raise ValueError("smoothing parameter s must lie in (0, 1)")
        for (l0, s0), (l1, s1) in zip(self.stages, self.stages[1:]):
            if not (l1 < l0 and s1 < s0):
                raise ValueError("stages must decrease strictly in both parameters")
            if s1 / s0 > l1 / l0 + 1e-12:
                raise ValueError(
                    "smoothing must decrease at least as fast as lambda"
                )

    @classmethod
    def default(cls, lambdas) -> "ContinuationSchedule":
        """Default coupling s = lambda / 2 (a choice; no rate is canonical)."""
        return cls([(lam, lam / 2.0) for lam in lambdas])


@dataclass
class StageResult:
    lam: float
    s: float
    value: float
    grad_norm: float
    control: ControlTrajectory
    history: OptimizeHistory


def continuation_run(
    f0: ControlTrajectory,
    scenario: Scenario,
    schedule: ContinuationSchedule,
    config: Optional[OptimizerConfig] = None,
):
    """Run minimize per stage with warm starts; report values and distances."""
    results: List[StageResult] = []
    distances: List[float] = []
    f = f0
    prev = None
    for lam, s in schedule.stages:
        params = FlowRuleParams(
            gamma=scenario.params.gamma, lam=lam, s=s
        )
        stage_scen = dataclasses.replace(scenario, params=params)
        start = f if (schedule.warm_start or prev is None) else f0
        f_opt, hist = minimize(start, stage_scen, config)
        results.append(
            StageResult(lam, s, hist.values[-1], hist.grad_norms[-1], f_opt, hist)
        )
        if prev is not None:
            distances.append(scenario.metric.norm(f_opt.f - prev.f))
        prev = f_opt
        f = f_opt
    return {"stages": results, "control_distances": distances}
