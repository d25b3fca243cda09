import json
import math
from pathlib import Path

import pytest

from hybridavg.cli import main

SMALL_ACTUATOR = """\
[system]
kind = jammed-actuator
period = 1.0
jam_prob = {p}
epsilon = 0.05

[simulate]
n_paths = 10
x0 = -2 2
r0 = 0
tau0 = 0
t_max = 3.5
j_max = 100

[average]
x_values = -2 -1 1 2
r_points = 2
tau_points = 128
T_values = {t_values}
T_long_periods = 20
favg = -x_1

[certify]
V = pow(x_1, 2)
radial_points = 9

[recur]
radius = 0.3
rho = 0.05
R = 5.0
n_paths = 40
t_max = 6.0

[sweep]
eps_values = {eps_values}
radius_max = 2.0
rho = 0.05
R = 5.0
n_paths = 40
t_max = 6.0
"""

TAU_FREE = """\
[system]
kind = custom
state_dim = 1
aux_dim = 1
noise_dim = 1
epsilon = 0.05
flow_x = -x_1
flow_r = 1
jump_x = x_1
jump_r = 0
flow_set = box 0 1
jump_set = point 1

[noise]
kind = finite
values = 0
probs = 1

[average]
x_values = -2 -1 1 2
tau_points = 64
T_values = 1.0 3.0 7.0
favg = -x_1
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_csv(path):
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


@pytest.fixture()
def actuator_cfg(tmp_path):
    return write_cfg(tmp_path, SMALL_ACTUATOR.format(
        p=0.1, t_values="3.141592653589793 6.283185307179586",
        eps_values="0.1 0.05"))


class TestSimulateCommand:
    def test_csv_structure(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "--config", actuator_cfg, "--seed", "3",
                     "--out", str(out)]) == 0
        header, rows = read_csv(out / "simulate.csv")
        assert header == ["path_id", "t", "j", "x_1", "r_1", "tau", "event"]
        ids = {row[0] for row in rows}
        assert len(ids) == 10
        # j strictly increases at jump rows within each path
        for pid in ids:
            j_at_jumps = [int(row[2]) for row in rows if row[0] == pid and row[-1] == "jump"]
            assert j_at_jumps == sorted(j_at_jumps)
            assert len(set(j_at_jumps)) == len(j_at_jumps)
            events = [row[-1] for row in rows if row[0] == pid]
            assert events[-1] == "terminal"

    def test_rerun_is_byte_identical(self, actuator_cfg, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", actuator_cfg, "--seed", "5", "--out", str(out_a)])
        main(["simulate", "--config", actuator_cfg, "--seed", "5", "--out", str(out_b)])
        assert (out_a / "simulate.csv").read_bytes() == (out_b / "simulate.csv").read_bytes()

    def test_zero_paths_is_config_error(self, actuator_cfg, tmp_path):
        code = main(["simulate", "--config", actuator_cfg, "--paths", "0",
                     "--out", str(tmp_path / "o")])
        assert code == 1

    def test_missing_config_is_error(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")]) == 1

    def test_manifest_lists_outputs(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        main(["simulate", "--config", actuator_cfg, "--seed", "3", "--out", str(out)])
        manifest = json.loads((out / "simulate_manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["outputs"] == ["simulate.csv"]
        assert manifest["seed_base"] == 3
        assert len(manifest["config_digest"]) == 64


class TestAverageCommand:
    def test_gamma_csv_and_report(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["average", "--config", actuator_cfg, "--out", str(out)]) == 0
        header, rows = read_csv(out / "average_gamma.csv")
        assert header[:4] == ["T", "gamma_raw", "gamma_envelope", "jac_gamma_raw"]
        by_T = {float(r[0]): r for r in rows}
        # envelope at a full period is quadrature-floor small
        assert float(by_T[2 * math.pi][2]) <= 1e-6
        report = (out / "average_report.txt").read_text()
        assert "max nodal deviation" in report
        nodal = float(report.split("max nodal deviation from closed form: ")[1].split()[0])
        assert nodal <= 1e-6

    def test_tau_independent_gamma_is_zero(self, tmp_path):
        cfg = write_cfg(tmp_path, TAU_FREE)
        out = tmp_path / "out"
        assert main(["average", "--config", cfg, "--out", str(out)]) == 0
        _, rows = read_csv(out / "average_gamma.csv")
        assert all(float(r[1]) <= 1e-12 for r in rows)


class TestCertifyCommand:
    def test_pass_is_exit_zero(self, actuator_cfg, tmp_path):
        assert main(["certify", "--config", actuator_cfg,
                     "--out", str(tmp_path / "o")]) == 0
        report = (tmp_path / "o" / "certify_report.txt").read_text()
        assert "PASS" in report

    def test_fail_is_exit_two(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_ACTUATOR.format(
            p=0.3, t_values="3.14", eps_values="0.1"))
        assert main(["certify", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_missing_V_is_exit_one(self, tmp_path):
        text = SMALL_ACTUATOR.format(p=0.1, t_values="3.14", eps_values="0.1")
        text = text.replace("V = pow(x_1, 2)\n", "")
        cfg = write_cfg(tmp_path, text)
        assert main(["certify", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


class TestRecurCommand:
    def test_summary_and_paths(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["recur", "--config", actuator_cfg, "--seed", "2",
                     "--out", str(out)]) == 0
        header, rows = read_csv(out / "recur_summary.csv")
        summary = dict(zip(header, rows[0]))
        assert 0.0 <= float(summary["hit_fraction"]) <= 1.0
        _, paths = read_csv(out / "recur_paths.csv")
        assert len(paths) == 40

    def test_covering_radius_gives_zero_budget(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["recur", "--config", actuator_cfg, "--radius", "10.0",
                     "--out", str(out)]) == 0
        header, rows = read_csv(out / "recur_summary.csv")
        summary = dict(zip(header, rows[0]))
        assert float(summary["hit_fraction"]) == 1.0
        assert float(summary["tau_hat"]) == 0.0

    def test_zero_horizon_counts_interior_starts(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["recur", "--config", actuator_cfg, "--t-max", "0",
                     "--radius", "2.5", "--out", str(out)]) == 0
        header, rows = read_csv(out / "recur_summary.csv")
        summary = dict(zip(header, rows[0]))
        # every path starts at |x| = 2 < 2.5: all inside, budget zero
        assert float(summary["hit_fraction"]) == 1.0
        assert float(summary["tau_hat"]) == 0.0


class TestSweepCommand:
    def test_rows_and_summary(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["sweep", "--config", actuator_cfg, "--seed", "2",
                     "--out", str(out)]) == 0
        header, rows = read_csv(out / "sweep.csv")
        assert header == ["epsilon", "certified_radius", "hit_fraction",
                          "n_paths", "note"]
        assert len(rows) == 2
        summary = (out / "sweep_summary.txt").read_text()
        assert "nonincreasing" in summary

    def test_single_epsilon_single_row(self, actuator_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["sweep", "--config", actuator_cfg, "--eps", "0.05",
                     "--out", str(out)]) == 0
        _, rows = read_csv(out / "sweep.csv")
        assert len(rows) == 1


class TestFig1Command:
    def test_trajectory_count_and_determinism(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["fig1", "--paths", "8", "--seed", "4", "--out", str(out_a)]) == 0
        assert main(["fig1", "--paths", "8", "--seed", "4", "--out", str(out_b)]) == 0
        header, rows = read_csv(out_a / "fig1.csv")
        assert header == ["path_id", "kind", "t", "j", "x_1", "r_1", "tau", "event"]
        ids = {row[0] for row in rows}
        assert len(ids) == 9  # 8 jammed + 1 nominal
        kinds = {row[1] for row in rows}
        assert kinds == {"jammed", "nominal"}
        assert (out_a / "fig1.svg").read_bytes() == (out_b / "fig1.svg").read_bytes()
        assert (out_a / "fig1.csv").read_bytes() == (out_b / "fig1.csv").read_bytes()

    def test_nominal_path_decays_into_the_dither_ball(self, tmp_path):
        out = tmp_path / "out"
        main(["fig1", "--paths", "4", "--seed", "4", "--out", str(out)])
        _, rows = read_csv(out / "fig1.csv")
        nominal = [row for row in rows if row[1] == "nominal"]
        jumps = [row for row in nominal if row[-1] == "jump"]
        assert jumps, "nominal path still resets its clock"
        # unit-gain jumps: the per-period envelope decreases until the state
        # lives inside the delta = 0.1 dither ball
        delta = 0.1
        env = [abs(float(row[4])) for row in jumps]
        above = [e for e in env if e > delta / 2]
        assert all(a > b for a, b in zip(above, above[1:]))
        assert env[-1] < delta
        assert max(abs(float(row[4])) for row in nominal) <= 2.0 + 1e-9

    def test_svg_is_valid_static_markup(self, tmp_path):
        out = tmp_path / "out"
        main(["fig1", "--paths", "3", "--seed", "1", "--out", str(out)])
        svg = (out / "fig1.svg").read_text()
        assert svg.startswith("<?xml")
        assert 'version="1.1"' in svg
        assert svg.rstrip().endswith("</svg>")

    def test_default_run_emits_101_trajectories(self, tmp_path):
        out = tmp_path / "out"
        assert main(["fig1", "--seed", "0", "--out", str(out)]) == 0
        _, rows = read_csv(out / "fig1.csv")
        ids = {row[0] for row in rows}
        assert len(ids) == 101  # 100 jammed + 1 nominal
        halves = {row[4][0] == "-" for row in rows if row[3] == "0" and row[2] == "0.0"}
        assert halves == {True, False}  # starts drawn from both -2 and +2


class TestExitCodes:
    def test_usage_error_is_one_not_two(self, capsys):
        assert main(["simulate"]) == 1  # missing --config
        capsys.readouterr()

    def test_help_is_zero(self, capsys):
        assert main(["--help"]) == 0
        capsys.readouterr()
