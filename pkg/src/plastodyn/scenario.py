"""Scenario files: parsing, validation and assembly of runtime objects.

A scenario is an INI-style text file with the sections

    [mesh] [material] [time] [regularization] [initial] [objective]
    [control] [optimizer] [continuation] [newton] [output]

Every value has a default, so a minimal file only overrides what it
needs.  Validation reports the violated requirement by name (positive
boundary measure, smoothing range, positive Tikhonov weight, ...).  The
derived per-element field q0 is always recomputed from (u0, z0), never
read from a file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from .adjoint import Scenario, TrackingTarget, build_control_metric
from .evolution import ControlTrajectory, TimeGrid, q_from_z, solve_state
from .fem import DiscreteOperators, assemble_operators, build_mesh, make_space
from .flow_rule import FlowRuleParams
from .optimize import ContinuationSchedule, OptimizerConfig
from .resolvent import NewtonSettings, TripleField
from .tensors import derive_coupling_tensors, isotropic_rank4, voigt_dim

__all__ = ["ScenarioConfig", "ScenarioError", "load_scenario", "build_runtime"]


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario file."""


@dataclass
class ScenarioConfig:
    """Validated raw scenario values (no assembled objects)."""

    dim: int = 2
    extent_x: Tuple[float, float] = (0.0, 1.0)
    extent_y: Tuple[float, float] = (0.0, 1.0)
    resolution: Tuple[int, ...] = (4, 4)
    dirichlet: Tuple[str, ...] = ("left",)

    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    hardening_lambda: float = 0.5
    hardening_mu: float = 0.5
    rho: float = 1.0
    yield_stress: float = 0.6

    t_final: float = 0.5
    n_steps: int = 16
    scheme: str = "implicit_euler"

    kind: str = "smooth"
    lambda_s: float = 0.05
    s: float = 0.025

    initial_preset: str = "rest"
    initial_magnitude: float = 0.1

    target_preset: str = "uncontrolled"
    target_magnitude: float = 1.0
    alpha: float = 1e-2

    control_space: str = "h1_time_h1_space_zero_ends"
    control_initial: str = "zero"

    max_iter: int = 50
    grad_tol: float = 1e-8
    memory: int = 8
    armijo_c1: float = 1e-4

    continuation_lambdas: Tuple[float, ...] = (0.2, 0.1, 0.05)

    newton_abs_tol: float = 1e-12
    newton_rel_tol: float = 1e-11
    newton_max_iter: int = 50

    snapshots: int = 5


def _floats(s: str) -> List[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s: str) -> List[int]:
    return [int(x) for x in s.replace(",", " ").split()]


def load_scenario(path: str) -> ScenarioConfig:
    """Parse and validate a scenario file; defaults fill missing entries."""
    parser = configparser.ConfigParser(strict=False)
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file {path!r}: {exc}") from exc
    if not read:
        raise ScenarioError(f"cannot read scenario file {path!r}")

    cfg = ScenarioConfig()

    def get(section, key, conv, default):
        if parser.has_option(section, key):
            try:
                return conv(parser.get(section, key))
            except (ValueError, TypeError) as exc:
                raise ScenarioError(
                    f"[{section}] {key}: cannot parse value ({exc})"
                ) from exc
        return default

    cfg.dim = get("mesh", "dim", int, cfg.dim)
    ex = get("mesh", "extent_x", _floats, list(cfg.extent_x))
    ey = get("mesh", "extent_y", _floats, list(cfg.extent_y))
    cfg.extent_x, cfg.extent_y = tuple(ex), tuple(ey)
    res = get("mesh", "resolution", _ints, list(cfg.resolution))
    cfg.resolution = tuple(res)
    dir_raw = get(
        "mesh", "dirichlet", lambda s: [x.strip() for x in s.split(",") if x.strip()],
        list(cfg.dirichlet),
    )
    cfg.dirichlet = tuple(dir_raw)

    cfg.lame_lambda = get("material", "lame_lambda", float, cfg.lame_lambda)
    cfg.lame_mu = get("material", "lame_mu", float, cfg.lame_mu)
    cfg.hardening_lambda = get("material", "hardening_lambda", float, cfg.hardening_lambda)
    cfg.hardening_mu = get("material", "hardening_mu", float, cfg.hardening_mu)
    cfg.rho = get("material", "rho", float, cfg.rho)
    cfg.yield_stress = get("material", "yield_stress", float, cfg.yield_stress)

    cfg.t_final = get("time", "t_final", float, cfg.t_final)
    cfg.n_steps = get("time", "n_steps", int, cfg.n_steps)
    cfg.scheme = get("time", "scheme", str, cfg.scheme)

    cfg.kind = get("regularization", "kind", str, cfg.kind)
    cfg.lambda_s = get("regularization", "lambda_s", float, cfg.lambda_s)
    cfg.s = get("regularization", "s", float, cfg.s)

    cfg.initial_preset = get("initial", "preset", str, cfg.initial_preset)
    cfg.initial_magnitude = get("initial", "magnitude", float, cfg.initial_magnitude)

    cfg.target_preset = get("objective", "target", str, cfg.target_preset)
    cfg.target_magnitude = get("objective", "target_magnitude", float, cfg.target_magnitude)
    cfg.alpha = get("objective", "alpha", float, cfg.alpha)

    cfg.control_space = get("control", "space", str, cfg.control_space)
    cfg.control_initial = get("control", "initial", str, cfg.control_initial)

    cfg.max_iter = get("optimizer", "max_iter", int, cfg.max_iter)
    cfg.grad_tol = get("optimizer", "grad_tol", float, cfg.grad_tol)
    cfg.memory = get("optimizer", "memory", int, cfg.memory)
    cfg.armijo_c1 = get("optimizer", "armijo_c1", float, cfg.armijo_c1)

    lams = get("continuation", "lambdas", _floats, list(cfg.continuation_lambdas))
    cfg.continuation_lambdas = tuple(lams)

    cfg.newton_abs_tol = get("newton", "abs_tol", float, cfg.newton_abs_tol)
    cfg.newton_rel_tol = get("newton", "rel_tol", float, cfg.newton_rel_tol)
    cfg.newton_max_iter = get("newton", "max_iter", int, cfg.newton_max_iter)

    cfg.snapshots = get("output", "snapshots", int, cfg.snapshots)

    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.dim not in (1, 2):
        raise ScenarioError("mesh: spatial dimension must be 1 or 2")
    if not cfg.dirichlet:
        raise ScenarioError(
            "mesh: at least one Dirichlet side is required "
            "(the clamped part of the boundary must have positive measure)"
        )
    if cfg.rho <= 0:
        raise ScenarioError("material: density rho must be positive")
    if cfg.yield_stress <= 0:
        raise ScenarioError("material: yield stress must be positive")
    if cfg.lame_mu <= 0 or 2 * cfg.lame_mu + cfg.dim * cfg.lame_lambda <= 0:
        raise ScenarioError("material: elasticity tensor is not coercive")
    if cfg.hardening_mu <= 0 or 2 * cfg.hardening_mu + cfg.dim * cfg.hardening_lambda <= 0:
        raise ScenarioError("material: hardening tensor is not coercive")
    if cfg.t_final <= 0 or cfg.n_steps < 1:
        raise ScenarioError("time: need t_final > 0 and n_steps >= 1")
    if cfg.scheme not in ("implicit_euler", "crank_nicolson"):
        raise ScenarioError(f"time: unknown scheme {cfg.scheme!r}")
    if cfg.kind not in ("smooth", "yosida"):
        raise ScenarioError(f"regularization: unknown kind {cfg.kind!r}")
    if cfg.lambda_s <= 0:
        raise ScenarioError("regularization: lambda_s must be positive")
    if not 0.0 < cfg.s < 1.0:
        raise ScenarioError(
            "regularization: smoothing parameter s must lie in the open interval (0, 1)"
        )
    if cfg.initial_preset not in ("rest", "prestressed", "plastic-seed"):
        raise ScenarioError(f"initial: unknown preset {cfg.initial_preset!r}")
    if cfg.target_preset not in ("zero", "uncontrolled", "sine_forced"):
        raise ScenarioError(f"objective: unknown target preset {cfg.target_preset!r}")
    if cfg.alpha <= 0:
        raise ScenarioError("objective: Tikhonov weight alpha must be positive")
    if cfg.control_space not in ("h1_time_h1_space_zero_ends", "h1_time_l2_space"):
        raise ScenarioError(f"control: unknown space variant {cfg.control_space!r}")
    if cfg.control_initial != "zero":
        raise ScenarioError(f"control: unknown initial guess {cfg.control_initial!r}")
    lams = cfg.continuation_lambdas
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise ScenarioError("continuation: lambdas must be strictly decreasing")


def _element_centroids(mesh) -> np.ndarray:
    return mesh.coords[mesh.elems].mean(axis=1)


def _initial_state(cfg: ScenarioConfig, ops: DiscreteOperators) -> TripleField:
    material = ops.material
    n, nq = ops.n_free, ops.n_q
    m = voigt_dim(cfg.dim)
    u0 = np.zeros(n)
    z0 = np.zeros(nq)
    if cfg.initial_preset == "prestressed":
        # static elastic equilibrium under a constant body force in the
        # first coordinate direction, plastic strain zero
        b = np.zeros(n)
        b[0 :: cfg.dim] = cfg.initial_magnitude
        u0 = spla.spsolve(ops.K_D.tocsc(), ops.M_u @ b)
    elif cfg.initial_preset == "plastic-seed":
        cent = _element_centroids(ops.space.mesh)
        profile = np.sin(np.pi * cent[:, 0])
        seed = np.zeros((ops.space.n_quad, m))
        if cfg.dim == 2:
            seed[:, 0] = profile / np.sqrt(2.0)
            seed[:, 1] = -profile / np.sqrt(2.0)
        else:
            seed[:, 0] = profile
        z0 = (cfg.initial_magnitude * seed).ravel()
    q0 = q_from_z(u0, z0, material, ops)
    return TripleField(u0, np.zeros(n), q0)


def _sine_control(grid: TimeGrid, ops: DiscreteOperators, magnitude: float) -> ControlTrajectory:
    """Half-sine pulse in time, constant in space, first coordinate direction."""
    n = ops.n_free
    shape = np.zeros(n)
    shape[0 :: ops.space.dim] = 1.0
    t = grid.times
    envelope = np.sin(np.pi * t / grid.T_final)
    return ControlTrajectory(grid, magnitude * envelope[:, None] * shape[None, :])


def build_runtime(cfg: ScenarioConfig):
    """Assemble mesh, operators, target, metric and the Scenario bundle."""
    if cfg.dim == 1:
        extents = cfg.extent_x
        resolution = cfg.resolution[0]
    else:
        extents = (cfg.extent_x, cfg.extent_y)
        resolution = cfg.resolution if len(cfg.resolution) == 2 else cfg.resolution[0]
    mesh = build_mesh(cfg.dim, extents, resolution, cfg.dirichlet)
    space = make_space(mesh)
    material = derive_coupling_tensors(
        isotropic_rank4(cfg.dim, cfg.lame_lambda, cfg.lame_mu),
        isotropic_rank4(cfg.dim, cfg.hardening_lambda, cfg.hardening_mu),
        rho=cfg.rho,
        gamma=cfg.yield_stress,
    )
    ops = assemble_operators(space, material)

    grid = TimeGrid(cfg.t_final, cfg.n_steps)
    params = FlowRuleParams(gamma=cfg.yield_stress, lam=cfg.lambda_s, s=cfg.s)
    newton = NewtonSettings(
        abs_tol=cfg.newton_abs_tol,
        rel_tol=cfg.newton_rel_tol,
        max_iter=cfg.newton_max_iter,
    )
    initial = _initial_state(cfg, ops)
    metric = build_control_metric(cfg.control_space, grid, ops)

    if cfg.target_preset == "zero":
        target = TrackingTarget.zeros(grid, ops)
    else:
        if cfg.target_preset == "uncontrolled":
            f_ref = ControlTrajectory.zeros(grid, ops.n_free, cfg.control_space)
        else:
            f_ref = _sine_control(grid, ops, cfg.target_magnitude)
        ref = solve_state(
            f_ref, initial, params, ops,
            scheme="implicit_euler", kind=cfg.kind, settings=newton,
        )
        target = TrackingTarget.from_trajectory(ref, material, ops)

    scenario = Scenario(
        ops=ops,
        grid=grid,
        params=params,
        initial=initial,
        target=target,
        alpha=cfg.alpha,
        metric=metric,
        scheme=cfg.scheme,
        kind=cfg.kind,
        newton=newton,
    )
    f0 = ControlTrajectory.zeros(grid, ops.n_free, cfg.control_space)
    opt_config = OptimizerConfig(
        max_outer_iter=cfg.max_iter,
        grad_tol=cfg.grad_tol,
        memory=cfg.memory,
        armijo_c1=cfg.armijo_c1,
    )
    schedule = ContinuationSchedule.default(cfg.continuation_lambdas)
    return {
        "config": cfg,
        "scenario": scenario,
        "f0": f0,
        "optimizer": opt_config,
        "schedule": schedule,
    }
