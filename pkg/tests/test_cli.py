"""Scenario files, command execution, exit codes and export formats."""

import csv
import os

import numpy as np
import pytest

from plastodyn import q_from_z
from plastodyn.cli import main, run_command
from plastodyn.scenario import ScenarioError, build_runtime, load_scenario

MINIMAL = """
[mesh]
resolution = 2, 2

[time]
n_steps = 4

[objective]
target = zero
"""


def write_ini(tmp_path, body, name="case.ini"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def test_load_scenario_defaults(tmp_path):
    cfg = load_scenario(write_ini(tmp_path, MINIMAL))
    assert cfg.dim == 2
    assert cfg.resolution == (2, 2)
    assert cfg.n_steps == 4
    assert cfg.dirichlet == ("left",)
    assert cfg.scheme == "implicit_euler"


def test_load_scenario_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("/no/such/file.ini")


@pytest.mark.parametrize("body,fragment", [
    (MINIMAL + "[regularization]\ns = 1.2\n", "open interval (0, 1)"),
    (MINIMAL + "[mesh]\ndirichlet =\n", "positive measure"),
    (MINIMAL + "[objective]\nalpha = -1\n", "alpha"),
    (MINIMAL + "[time]\nscheme = leapfrog\n", "scheme"),
    (MINIMAL + "[material]\nrho = 0\n", "density"),
    (MINIMAL + "[continuation]\nlambdas = 0.1, 0.2\n", "decreasing"),
    (MINIMAL + "[initial]\npreset = warm\n", "preset"),
])
def test_load_scenario_validation(tmp_path, body, fragment):
    with pytest.raises(ScenarioError) as err:
        load_scenario(write_ini(tmp_path, body))
    assert fragment in str(err.value)


def test_duplicate_section_options_merge(tmp_path):
    # repeated sections merge, with later keys overriding earlier ones
    body = MINIMAL + "[regularization]\nlambda_s = 0.2\ns = 0.1\n"
    cfg = load_scenario(write_ini(tmp_path, body))
    assert cfg.lambda_s == 0.2 and cfg.s == 0.1


def test_build_runtime_presets(tmp_path):
    # rest: everything zero
    cfg = load_scenario(write_ini(tmp_path, MINIMAL))
    rt = build_runtime(cfg)
    x0 = rt["scenario"].initial
    assert np.allclose(x0.u, 0) and np.allclose(x0.v, 0) and np.allclose(x0.q, 0)

    # prestressed: static equilibrium, q0 derived from u0 with z0 = 0
    body = MINIMAL + "[initial]\npreset = prestressed\nmagnitude = 0.5\n"
    rt = build_runtime(load_scenario(write_ini(tmp_path, body, "p.ini")))
    sc = rt["scenario"]
    x0 = sc.initial
    assert np.linalg.norm(x0.u) > 0
    q_expected = q_from_z(x0.u, np.zeros(sc.ops.n_q), sc.material, sc.ops)
    assert np.allclose(x0.q, q_expected, atol=1e-14)

    # plastic-seed: nonzero plastic strain, q0 again derived
    body = MINIMAL + "[initial]\npreset = plastic-seed\nmagnitude = 0.1\n"
    rt = build_runtime(load_scenario(write_ini(tmp_path, body, "s.ini")))
    sc = rt["scenario"]
    assert np.linalg.norm(sc.initial.q) > 0
    assert np.allclose(sc.initial.u, 0)


def test_run_command_exit_codes(tmp_path):
    ini = write_ini(tmp_path, MINIMAL)
    out = str(tmp_path / "out")
    assert run_command("forward", ini, out=out) == 0
    assert run_command("forward", "/missing.ini", out=out) == 2
    assert run_command("unknown", ini, out=out) == 2
    assert run_command("forward", ini, out=out, fmt="hdf5") == 2
    bad = write_ini(tmp_path, MINIMAL + "[regularization]\ns = 2\n", "bad.ini")
    assert run_command("forward", bad, out=out) == 2


def test_forward_outputs(tmp_path):
    ini = write_ini(tmp_path, MINIMAL)
    out = str(tmp_path / "fwd")
    assert run_command("forward", ini, out=out, fmt="both") == 0
    ts = os.path.join(out, "timeseries.csv")
    assert os.path.exists(ts)
    with open(ts, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "energy", "u_norm", "v_norm", "q_norm"]
    assert len(rows) == 1 + 5  # header + n_nodes
    # 17 significant digits: values survive a parse round trip exactly
    for row in rows[1:]:
        for cell in row:
            assert format(float(cell), ".17g") == cell
    vtks = [f for f in os.listdir(out) if f.endswith(".vtk")]
    assert vtks
    with open(os.path.join(out, sorted(vtks)[0])) as fh:
        content = fh.read()
    assert content.startswith("# vtk DataFile Version 3.0")
    assert "DATASET UNSTRUCTURED_GRID" in content
    assert "VECTORS displacement double" in content
    assert "plastic_strain" in content


def test_gradcheck_deterministic(tmp_path):
    ini = write_ini(tmp_path, MINIMAL + "[regularization]\nlambda_s = 0.2\n")
    out1, out2 = str(tmp_path / "g1"), str(tmp_path / "g2")
    assert run_command("gradcheck", ini, out=out1, seed=7) == 0
    assert run_command("gradcheck", ini, out=out2, seed=7) == 0
    p1 = open(os.path.join(out1, "gradcheck.csv"), "rb").read()
    p2 = open(os.path.join(out2, "gradcheck.csv"), "rb").read()
    assert p1 == p2
    with open(os.path.join(out1, "gradcheck.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    assert all(float(r[1]) < 1e-5 for r in rows)


def test_lambda_study_output(tmp_path):
    ini = write_ini(tmp_path, MINIMAL)
    out = str(tmp_path / "ls")
    assert run_command("lambda_study", ini, out=out) == 0
    with open(os.path.join(out, "convergence.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["lambda_coarse", "lambda_fine", "h1_distance"]
    assert len(rows) == 3  # header + two gaps for three lambdas


def test_optimize_output(tmp_path):
    body = MINIMAL + "[optimizer]\nmax_iter = 5\n"
    ini = write_ini(tmp_path, body)
    out = str(tmp_path / "opt")
    assert run_command("optimize", ini, out=out) == 0
    with open(os.path.join(out, "history.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "value", "grad_norm", "step"]
    values = [float(r[1]) for r in rows[1:]]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))
    assert os.path.exists(os.path.join(out, "control.csv"))


def test_continuation_output(tmp_path):
    body = MINIMAL + "[optimizer]\nmax_iter = 3\n[continuation]\nlambdas = 0.2, 0.1\n"
    ini = write_ini(tmp_path, body)
    out = str(tmp_path / "cont")
    assert run_command("continuation", ini, out=out) == 0
    with open(os.path.join(out, "stages.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["lambda", "s", "value", "grad_norm", "iters"]
    assert len(rows) == 3


def test_main_argparse_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["forward"])  # missing --config
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["bogus-command"])
    assert exc.value.code == 2
    ini = write_ini(tmp_path, MINIMAL)
    assert main(["forward", "--config", ini, "--out", str(tmp_path / "m")]) == 0


def test_shipped_scenarios_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    for name in ("desk_plastic.ini", "desk_elastic.ini"):
        cfg = load_scenario(os.path.join(root, name))
        assert cfg.dim == 2
