"""Command line driver and result export (CSV and legacy VTK ASCII).

Subcommands
-----------
forward       solve the state system for the scenario's initial control
lambda_study  trajectory convergence under a decreasing lambda sequence
gradcheck     finite-difference verification of the reduced gradient
optimize      minimize the reduced tracking objective
continuation  staged optimization with decreasing regularization

Exit codes: 0 on success, 1 on solver failure (Newton breakdown), 2 on
usage or scenario validation errors.  All floating point output carries
17 significant digits, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from .adjoint import fd_check
from .evolution import (
    ControlTrajectory,
    StateTrajectory,
    convergence_study,
    elastic_energy,
    z_from_q,
)
from .fem import DiscreteOperators, apply_dirichlet
from .flow_rule import FlowRuleParams
from .optimize import continuation_run, minimize
from .scenario import ScenarioError, build_runtime, load_scenario

__all__ = ["main", "run_command", "export_results"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: str, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def _timeseries_rows(traj: StateTrajectory, ops: DiscreteOperators):
    material = ops.material
    for t, x in zip(traj.grid.times, traj.states):
        yield (
            t,
            elastic_energy(x, material, ops),
            float(np.linalg.norm(x.u)),
            float(np.linalg.norm(x.v)),
            float(np.linalg.norm(x.q)),
        )


def _vtk_header(fh, ops: DiscreteOperators) -> None:
    mesh = ops.space.mesh
    n_nodes, dim = mesh.n_nodes, mesh.dim
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write("elastoplastic state snapshot\n")
    fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {n_nodes} double\n")
    for p in mesh.coords:
        xyz = [p[0], p[1] if dim > 1 else 0.0, 0.0]
        fh.write(" ".join(_fmt(c) for c in xyz) + "\n")
    ne, nloc = mesh.elems.shape
    fh.write(f"CELLS {ne} {ne * (nloc + 1)}\n")
    for e in mesh.elems:
        fh.write(str(nloc) + " " + " ".join(str(i) for i in e) + "\n")
    cell_type = 5 if dim == 2 else 3
    fh.write(f"CELL_TYPES {ne}\n")
    fh.write("\n".join([str(cell_type)] * ne) + "\n")


def _vtk_point_vectors(fh, name, fld_full, dim):
    fh.write(f"VECTORS {name} double\n")
    vals = fld_full.reshape(-1, dim)
    for row in vals:
        xyz = [row[0], row[1] if dim > 1 else 0.0, 0.0]
        fh.write(" ".join(_fmt(c) for c in xyz) + "\n")


def _vtk_cell_field(fh, name, fld, m):
    vals = fld.reshape(-1, m)
    fh.write(f"{name} {m} {vals.shape[0]} double\n")
    for row in vals:
        fh.write(" ".join(_fmt(c) for c in row) + "\n")


def write_vtk_snapshot(path: str, x, ops: DiscreteOperators) -> None:
    """One legacy-VTK ASCII file: point vectors u, v; cell fields q, z."""
    space = ops.space
    dim = space.dim
    m = space.tensor_len
    z = z_from_q(x.u, x.q, ops.material, ops)
    with open(path, "w") as fh:
        _vtk_header(fh, ops)
        fh.write(f"POINT_DATA {space.mesh.n_nodes}\n")
        _vtk_point_vectors(fh, "displacement", apply_dirichlet(space, x.u, "prolong_zero"), dim)
        _vtk_point_vectors(fh, "velocity", apply_dirichlet(space, x.v, "prolong_zero"), dim)
        fh.write(f"CELL_DATA {space.mesh.n_elems}\n")
        fh.write("FIELD tensors 2\n")
        _vtk_cell_field(fh, "generalized_stress", x.q, m)
        _vtk_cell_field(fh, "plastic_strain", z, m)


def _snapshot_indices(n_nodes: int, count: int) -> np.ndarray:
    count = max(2, min(count, n_nodes))
    return np.unique(np.linspace(0, n_nodes - 1, count).round().astype(int))


def export_results(
    out_dir: str,
    traj: Optional[StateTrajectory],
    ops: DiscreteOperators,
    fmt: str = "csv",
    snapshots: int = 5,
    tables: Optional[dict] = None,
) -> List[str]:
    """Write trajectory time series / VTK snapshots and auxiliary tables.

    ``tables`` maps a base name to (header, rows); each becomes one CSV
    file.  Returns the list of files written.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []
    if traj is not None and fmt in ("csv", "both"):
        path = os.path.join(out_dir, "timeseries.csv")
        _write_csv(path, ["t", "energy", "u_norm", "v_norm", "q_norm"],
                   _timeseries_rows(traj, ops))
        written.append(path)
    if traj is not None and fmt in ("vtk", "both"):
        for idx in _snapshot_indices(traj.grid.n_nodes, snapshots):
            path = os.path.join(out_dir, f"state_{idx:04d}.vtk")
            write_vtk_snapshot(path, traj.states[idx], ops)
            written.append(path)
    for name, (header, rows) in (tables or {}).items():
        path = os.path.join(out_dir, f"{name}.csv")
        _write_csv(path, header, rows)
        written.append(path)
    return written


def _control_table(f: ControlTrajectory):
    header = ["t"] + [f"f_{j}" for j in range(f.f.shape[1])]
    rows = [(t, *row) for t, row in zip(f.grid.times, f.f)]
    return header, rows


def _cmd_forward(runtime, out, fmt, seed, verbose):
    scenario = runtime["scenario"]
    traj = scenario.solve_forward(runtime["f0"])
    files = export_results(out, traj, scenario.ops, fmt,
                           runtime["config"].snapshots)
    if verbose:
        print(f"forward solve: {traj.grid.n_steps} steps, wrote {len(files)} files")
    return 0


def _cmd_lambda_study(runtime, out, fmt, seed, verbose):
    scenario = runtime["scenario"]
    cfg = runtime["config"]
    params_list = [
        FlowRuleParams(gamma=cfg.yield_stress, lam=lam, s=cfg.s)
        for lam in cfg.continuation_lambdas
    ]
    study = convergence_study(
        runtime["f0"], scenario.initial, params_list, scenario.ops,
        scheme="implicit_euler", settings=scenario.newton,
    )
    rows = [
        (l_hi, l_lo, d)
        for l_hi, l_lo, d in zip(study["lambdas"], study["lambdas"][1:],
                                 study["distances"])
    ]
    export_results(out, study["trajectories"][-1], scenario.ops, fmt,
                   cfg.snapshots,
                   tables={"convergence": (["lambda_coarse", "lambda_fine",
                                            "h1_distance"], rows)})
    if verbose:
        for row in rows:
            print("lambda %.6g -> %.6g : distance %.6g" % row)
    decreasing = all(b < a for a, b in zip(study["distances"],
                                           study["distances"][1:]))
    if verbose and len(rows) > 1:
        print(f"distances strictly decreasing: {decreasing}")
    return 0


def _cmd_gradcheck(runtime, out, fmt, seed, verbose):
    scenario = runtime["scenario"]
    report = fd_check(runtime["f0"], scenario, n_directions=5,
                      eps=1e-4, seed=seed)
    rows = [(i, float(e)) for i, e in enumerate(report.errors)]
    export_results(out, None, scenario.ops, fmt, tables={
        "gradcheck": (["direction", "relative_error"], rows)})
    print(f"gradient check: eps={report.eps:g} "
          f"max relative error {report.max_error:.3e}")
    return 0


def _cmd_optimize(runtime, out, fmt, seed, verbose):
    scenario = runtime["scenario"]
    cfg = runtime["config"]
    f_opt, hist = minimize(runtime["f0"], scenario, runtime["optimizer"])
    traj = scenario.solve_forward(f_opt)
    steps = [float("nan")] + hist.steps
    rows = [(k, v, g, s) for k, (v, g, s) in
            enumerate(zip(hist.values, hist.grad_norms, steps))]
    export_results(out, traj, scenario.ops, fmt, cfg.snapshots, tables={
        "history": (["iter", "value", "grad_norm", "step"], rows),
        "control": _control_table(f_opt),
    })
    print(f"optimize: {hist.n_iters} iterations, converged={hist.converged}, "
          f"final value {hist.values[-1]:.6e}, "
          f"gradient norm {hist.grad_norms[-1]:.3e}")
    if verbose and hist.message:
        print(hist.message)
    return 0


def _cmd_continuation(runtime, out, fmt, seed, verbose):
    scenario = runtime["scenario"]
    cfg = runtime["config"]
    result = continuation_run(runtime["f0"], scenario, runtime["schedule"],
                              runtime["optimizer"])
    stages = result["stages"]
    rows = [(r.lam, r.s, r.value, r.grad_norm, r.history.n_iters)
            for r in stages]
    dist_rows = [(stages[i].lam, stages[i + 1].lam, d)
                 for i, d in enumerate(result["control_distances"])]
    final = stages[-1].control
    traj = scenario.solve_forward(final)
    export_results(out, traj, scenario.ops, fmt, cfg.snapshots, tables={
        "stages": (["lambda", "s", "value", "grad_norm", "iters"], rows),
        "stage_distances": (["lambda_coarse", "lambda_fine",
                             "control_distance"], dist_rows),
        "control": _control_table(final),
    })
    print("continuation: stage values "
          + ", ".join(f"{r.value:.6e}" for r in stages))
    return 0


_COMMANDS = {
    "forward": _cmd_forward,
    "lambda_study": _cmd_lambda_study,
    "gradcheck": _cmd_gradcheck,
    "optimize": _cmd_optimize,
    "continuation": _cmd_continuation,
}


def run_command(
    command: str,
    config: str,
    out: str = "out",
    seed: int = 0,
    fmt: str = "csv",
    verbose: bool = False,
) -> int:
    """Execute one subcommand; returns the process exit code."""
    if command not in _COMMANDS:
        print(f"error: unknown command {command!r}", file=sys.stderr)
        return 2
    if fmt not in ("csv", "vtk", "both"):
        print(f"error: unknown format {fmt!r}", file=sys.stderr)
        return 2
    try:
        cfg = load_scenario(config)
        runtime = build_runtime(cfg)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[command](runtime, out, fmt, seed, verbose)
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plastodyn",
        description="dynamic elastoplasticity: forward solves, gradient "
                    "verification and tracking-type optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("forward", "solve the state system and export the trajectory"),
        ("lambda_study", "trajectory convergence for decreasing lambda"),
        ("gradcheck", "finite-difference check of the reduced gradient"),
        ("optimize", "minimize the reduced tracking objective"),
        ("continuation", "staged optimization over a (lambda, s) schedule"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="scenario file (INI)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized checks")
        p.add_argument("--format", default="csv",
                       choices=["csv", "vtk", "both"], help="export format")
        p.add_argument("--verbose", action="store_true",
                       help="print progress details")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    return run_command(
        args.command, args.config, out=args.out, seed=args.seed,
        fmt=args.format, verbose=args.verbose,
    )


if __name__ == "__main__":
    sys.exit(main())
