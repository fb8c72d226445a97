"""Regularization convergence study.

The flow rule is regularized with a Yosida parameter lambda; as lambda
decreases the trajectories converge.  This script solves the same
ring-down problem for a decreasing lambda sequence and prints the
successive trajectory distances in the H^1-in-time triple norm, which
shrink with lambda (the theory is qualitative, no rate is claimed).

    python3 demos/lambda_convergence.py
"""

import numpy as np
import scipy.sparse.linalg as spla

from plastodyn import (
    ControlTrajectory,
    FlowRuleParams,
    TimeGrid,
    TripleField,
    assemble_operators,
    build_mesh,
    convergence_study,
    derive_coupling_tensors,
    isotropic_rank4,
    make_space,
    q_from_z,
)

material = derive_coupling_tensors(
    isotropic_rank4(2, 1.0, 1.0), isotropic_rank4(2, 0.5, 0.5),
    rho=1.0, gamma=0.6,
)
mesh = build_mesh(2, ((0.0, 1.0), (0.0, 1.0)), (4, 4), ("left",))
ops = assemble_operators(make_space(mesh), material)

# prestressed release problem, no forcing
b = np.zeros(ops.n_free)
b[0::2] = 0.5
u0 = spla.spsolve(ops.K_D.tocsc(), ops.M_u @ b)
initial = TripleField(u0, np.zeros(ops.n_free),
                      q_from_z(u0, np.zeros(ops.n_q), material, ops))

grid = TimeGrid(0.5, 16)
f = ControlTrajectory.zeros(grid, ops.n_free)

lambdas = [0.4, 0.2, 0.1, 0.05, 0.025]
params_list = [FlowRuleParams(gamma=0.6, lam=l, s=0.05) for l in lambdas]
study = convergence_study(f, initial, params_list, ops)

print(f"{'lambda pair':>16} {'H1 distance':>12}")
for l_hi, l_lo, d in zip(lambdas, lambdas[1:], study["distances"]):
    print(f"{l_hi:7.3f} -> {l_lo:5.3f} {d:12.6f}")

d = study["distances"]
print(f"\nsuccessive distances decreasing: "
      f"{all(b < a for a, b in zip(d, d[1:]))}")
