import json
import os

import numpy as np
import pytest

from loopflow.cli import main, make_initial_map
from loopflow.config import parse_config
from loopflow.variational import energy

SMALL_ENERGY = {
    "domain": {"n_nodes": 32},
    "perturbation": {"seed": 5, "amplitude": 0.03},
}

SMALL_FLOW = {
    "domain": {"n_nodes": 16},
    "perturbation": {"seed": 5, "amplitude": 0.03},
    "flow": {"t_max": 5.0},
    "output": {"stride": 7},
}


def write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_json(outdir, name):
    with open(os.path.join(outdir, name), "r", encoding="utf-8") as fh:
        return json.load(fh)


def test_energy_eval_artifacts(tmp_path):
    config_path = write_config(tmp_path, SMALL_ENERGY)
    out = str(tmp_path / "out")
    assert main(["energy-eval", "--config", config_path, "--out", out]) == 0
    echo = read_json(out, "config_echo.json")
    assert echo["version"] == "0.1.0"
    assert echo["rng"] == "numpy-pcg64"
    assert echo["domain"]["n_nodes"] == 32
    assert echo["runtime"]["subcommand"] == "energy-eval"
    report = read_json(out, "energy_report.json")
    state = make_initial_map(parse_config(json.dumps(SMALL_ENERGY)))
    assert report["energy"] == pytest.approx(energy(state), rel=1e-12)
    assert report["tangential_tension_l2"] <= report["tension_l2"]
    assert report["target_kind"] == "sphere"


def test_seed_override_changes_initial_map(tmp_path):
    config_path = write_config(tmp_path, SMALL_ENERGY)
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["energy-eval", "--config", config_path, "--out", out_a]) == 0
    assert main(["energy-eval", "--config", config_path, "--out", out_b, "--seed", "11"]) == 0
    e_a = read_json(out_a, "energy_report.json")["energy"]
    e_b = read_json(out_b, "energy_report.json")["energy"]
    assert e_a != e_b
    assert read_json(out_b, "config_echo.json")["runtime"]["seed_override"] == 11


def test_out_dir_precedence(tmp_path, monkeypatch):
    config = dict(SMALL_ENERGY)
    config["output"] = {"directory": str(tmp_path / "from_config")}
    config_path = write_config(tmp_path, config)
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("LOOPFLOW_OUT", str(env_dir))
    flag_dir = tmp_path / "from_flag"
    assert main(["energy-eval", "--config", config_path, "--out", str(flag_dir)]) == 0
    assert (flag_dir / "energy_report.json").exists()
    assert not env_dir.exists()
    assert main(["energy-eval", "--config", config_path]) == 0
    assert (env_dir / "energy_report.json").exists()
    monkeypatch.delenv("LOOPFLOW_OUT")
    assert main(["energy-eval", "--config", config_path]) == 0
    assert (tmp_path / "from_config" / "energy_report.json").exists()


def test_bad_config_exits_one_before_outdir(tmp_path, capsys):
    config_path = write_config(tmp_path, {"domain": {"mesh_size": 64}})
    out = str(tmp_path / "out")
    assert main(["energy-eval", "--config", config_path, "--out", out]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error_type"] == "ValueError"
    assert "domain.mesh_size" in record["error"]
    assert not os.path.isdir(out)


def test_runtime_error_writes_error_record(tmp_path, capsys):
    # shape mismatch is only detected after the output directory exists,
    # so the record lands both on stderr and in error.json
    bad = tmp_path / "loop.csv"
    np.savetxt(bad, np.zeros((7, 3)), delimiter=",")
    config = dict(SMALL_ENERGY)
    config["base_map"] = {"file": str(bad)}
    config_path = write_config(tmp_path, config)
    out = str(tmp_path / "out")
    assert main(["energy-eval", "--config", config_path, "--out", out]) == 1
    record = read_json(out, "error.json")
    assert record["error_type"] == "ValueError"
    assert "expected (32, 3)" in record["error"]
    assert json.loads(capsys.readouterr().err)["error"] == record["error"]


def test_map_file_csv_and_npy_round_trip(tmp_path):
    config = parse_config(json.dumps(SMALL_ENERGY))
    state = make_initial_map(config)
    csv_path = tmp_path / "loop.csv"
    np.savetxt(csv_path, state.values, delimiter=",")
    npy_path = tmp_path / "loop.npy"
    np.save(npy_path, state.values)
    for path, atol in ((csv_path, 1e-12), (npy_path, 0.0)):
        payload = {
            "domain": {"n_nodes": 32},
            "base_map": {"file": str(path)},
            "perturbation": {"amplitude": 0.0},
        }
        loaded = make_initial_map(parse_config(json.dumps(payload)))
        assert np.allclose(loaded.values, state.values, atol=atol)


def test_initial_map_determinism_and_guards():
    config = parse_config(json.dumps(SMALL_ENERGY))
    a = make_initial_map(config)
    b = make_initial_map(config)
    assert np.array_equal(a.values, b.values)
    flat = parse_config('{"domain": {"n_nodes": 32}, "perturbation": {"amplitude": 0.0}}')
    base = make_initial_map(flat)
    th = base.mesh.node_angles
    expected = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=1)
    assert np.array_equal(base.values, expected)
    with pytest.raises(ValueError, match="tube radius"):
        make_initial_map(
            parse_config('{"domain": {"n_nodes": 32}, "perturbation": {"amplitude": 0.7}}')
        )


def test_flow_run_trace_and_fit(tmp_path):
    config_path = write_config(tmp_path, SMALL_FLOW)
    out = str(tmp_path / "out")
    assert main(["flow-run", "--config", config_path, "--out", out]) == 0
    with open(os.path.join(out, "trace.csv"), "r", encoding="utf-8") as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "t,energy,grad_norm,dist_to_limit"
    rows = np.array([[float(x) for x in line.split(",")] for line in lines[1:]])
    assert rows[0, 0] == 0.0
    # stride 7 between interior records, final record always present
    dt = rows[1, 0] - rows[0, 0]
    mesh_dt = 0.2 * (2.0 * np.pi / 16.0) ** 2
    assert dt == pytest.approx(7.0 * mesh_dt, rel=1e-12)
    assert np.all(np.diff(rows[:, 1]) <= 1e-12)
    fit = read_json(out, "rate_fit.json")
    assert fit["flow"]["integrator"] == "projected_rk4"
    assert fit["flow"]["n_steps"] >= 100


def test_flow_run_reruns_bit_identical(tmp_path):
    config_path = write_config(tmp_path, SMALL_FLOW)
    out = str(tmp_path / "out")
    names = ("trace.csv", "rate_fit.json", "config_echo.json")
    assert main(["flow-run", "--config", config_path, "--out", out]) == 0
    first = {}
    for name in names:
        with open(os.path.join(out, name), "rb") as fh:
            first[name] = fh.read()
    assert main(["flow-run", "--config", config_path, "--out", out]) == 0
    for name in names:
        with open(os.path.join(out, name), "rb") as fh:
            assert fh.read() == first[name], name


def test_loj_estimate_artifacts(tmp_path):
    payload = {
        "domain": {"n_nodes": 32},
        "perturbation": {"seed": 5, "amplitude": 0.03},
        "flow": {"t_max": 20.0},
    }
    config_path = write_config(tmp_path, payload)
    out = str(tmp_path / "out")
    assert main(["loj-estimate", "--config", config_path, "--out", out]) == 0
    report = read_json(out, "exponent_fit.json")
    assert 0.4 < report["fit"]["theta"] < 0.6
    assert report["n_flow_pairs"] > 100
    assert report["n_perturbation_pairs"] >= 3
    assert report["verification_at_half"]["usable_samples"] > 100
    with open(os.path.join(out, "cloud.csv"), "r", encoding="utf-8") as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "value_gap,grad_norm,source"
    sources = {line.split(",")[2] for line in lines[1:]}
    assert sources == {"flow", "perturbation"}


def test_reduce_run_artifacts(tmp_path):
    payload = {
        "domain": {"n_nodes": 48},
        "lojasiewicz": {"radii": [0.01, 0.02], "samples_per_radius": 4},
    }
    config_path = write_config(tmp_path, payload)
    out = str(tmp_path / "out")
    assert main(["reduce-run", "--config", config_path, "--out", out]) == 0
    report = read_json(out, "reduction_report.json")
    assert report["kernel_dimension"] == 3
    assert report["gap_ratio"] > 10.0
    assert report["integrability"]["integrable"] is True
    assert report["sandwich"]["n_newton_failure"] == 0
    assert report["approximation"]["n_samples"] >= 3
    assert report["approximation"]["slope"] > 1.5
    assert report["lipschitz"]["ratio_spread"] < 10.0


def test_finite_verify_artifacts(tmp_path):
    payload = {
        "finite_verify": {
            "polynomials": [
                {
                    "label": "bowl",
                    "terms": [[[2, 0], 1.0], [[0, 2], 1.0]],
                    "check": "gradient",
                    "radii": [0.001, 0.00316, 0.01, 0.0316, 0.1],
                },
                {
                    "label": "line zeros",
                    "terms": [[[2], 1.0]],
                    "check": "distance",
                    "box": [[-1.0, 1.0]],
                    "grid_n": 41,
                },
            ]
        }
    }
    config_path = write_config(tmp_path, payload)
    out = str(tmp_path / "out")
    assert main(["finite-verify", "--config", config_path, "--out", out]) == 0
    table = read_json(out, "exponent_table.json")["table"]
    assert len(table) == 2
    assert abs(table[0]["exponent"] - 0.5) < 0.05
    assert table[0]["check"] == "gradient"
    assert abs(table[1]["exponent"] - 2.0) < 0.05


def test_unknown_subcommand_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["render", "--config", "missing.json"])
