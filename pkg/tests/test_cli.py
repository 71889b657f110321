"""Config parsing, exit codes, determinism, and sweep plumbing."""

import csv
import json
import subprocess
import sys

import pytest

from dyadlab import cli


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def log_symbols():
    return [{"id": "log", "terms": [{"kind": "log_abs"}]}]


# -- config errors (exit 2) ----------------------------------------------------


def test_malformed_config_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert cli.run(str(path), out_dir=tmp_path / "out") == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.run(str(tmp_path / "absent.json"), out_dir=tmp_path) == 2


@pytest.mark.parametrize(
    "cfg",
    [
        {"experiment": "frobnicate"},
        {"experiment": "bmo-compute"},  # needs symbols
        {"experiment": "bmo-compute", "symbols": [{"id": "x", "terms": [{"kind": "coordinate"}]}],
         "exponents": {"p": 3.0, "q": 2.0}},
        {"experiment": "weights-check", "weights": {"mu": {"kind": "mystery"}}},
        {"experiment": "weights-check", "typo_key": 1},
        {"experiment": "commutator-sweep", "symbols": [{"id": "x", "terms": [{"kind": "coordinate"}]}]},
        {"experiment": "bmo-compute", "symbols": [{"id": "x", "terms": [{"kind": "coordinate"}]}],
         "seeds": "zero"},
        {"experiment": "weights-check", "schema": 99},
    ],
)
def test_bad_configs_exit_2(tmp_path, cfg):
    assert cli.run(write_config(tmp_path, cfg), out_dir=tmp_path / "out") == 2


def test_kernel_dimension_mismatch_exits_2(tmp_path):
    cfg = {
        "experiment": "commutator-sweep",
        "domain": {"d": 1, "m": 6},
        "kernel": {"variant": "riesz", "j": 1},
        "symbols": log_symbols(),
    }
    assert cli.run(write_config(tmp_path, cfg), out_dir=tmp_path / "out") == 2


# -- single runs ---------------------------------------------------------------


def test_bloom_verify_unit_weights_all_ratios_one(tmp_path):
    cfg = {
        "experiment": "bloom-verify",
        "domain": {"d": 1, "m": 7},
        "weights": {"mu": {"kind": "unit"}, "lambda": {"kind": "unit"}},
    }
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out) == 0
    _, rows = read_csv(out / "sandwich_cubes.csv")
    assert rows and all(float(r[2]) == 1.0 for r in rows)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["hard_failed"] == 0
    assert {a["name"] for a in summary["assertions"]} == {
        "sandwich-holds", "intermediate-ainfty"
    }


def test_weights_check_divergence_is_flag_not_failure(tmp_path):
    cfg = {
        "experiment": "weights-check",
        "domain": {"d": 1, "m": 8},
        "exponents": {"p": 2.0, "q": 2.0},
        "weights": {"mu": {"kind": "power", "beta": -2.0}, "lambda": {"kind": "unit"}},
    }
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out) == 0
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert "divergence:mu" in summary["flags"]
    header, rows = read_csv(out / "weights.csv")
    mu_row = dict(zip(header, rows[0]))
    assert mu_row["ok"] == "False"


def test_dict_config_and_seed_override(tmp_path):
    cfg = {"experiment": "sparse-dominate", "domain": {"d": 1, "m": 7}, "seeds": [0, 1]}
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out, seed=5) == 0
    _, rows = read_csv(out / "sparse.csv")
    assert [r[0] for r in rows] == ["seed5"]
    assert "seeds" not in cfg or cfg["seeds"] == [0, 1]  # caller's dict untouched


def test_commutator_sweep_probe_below_norm(tmp_path):
    cfg = {
        "experiment": "commutator-sweep",
        "domain": {"d": 1, "m": 7},
        "kernel": {"variant": "hilbert"},
        "symbols": log_symbols(),
        "params": {"budget": 4},
    }
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out) == 0
    header, rows = read_csv(out / "commutator.csv")
    row = dict(zip(header, rows[0]))
    assert 0.0 < float(row["probe"]) <= float(row["norm"])


def test_compactness_profile_long_format(tmp_path):
    eps = [0.5, 0.25]
    cfg = {
        "experiment": "compactness-profile",
        "domain": {"d": 1, "m": 7},
        "kernel": {"variant": "hilbert"},
        "symbols": log_symbols(),
        "params": {"eps_list": eps, "k_list": [1, 2], "budget": 2},
    }
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out) == 0
    _, rows = read_csv(out / "tails.csv")
    assert [float(r[1]) for r in rows] == eps
    _, k_rows = read_csv(out / "sparse_tails.csv")
    assert [float(r[1]) for r in k_rows] == [1.0, 2.0]


def test_vmo_witness_dump_and_flags(tmp_path):
    cfg = {
        "experiment": "vmo-witness",
        "domain": {"d": 1, "m": 8},
        "symbols": log_symbols()
        + [{"id": "bump", "terms": [{"kind": "bump", "center": 0.0, "radius": 0.5}]}],
        "params": {"c0": 0.4},
    }
    out = tmp_path / "out"
    assert cli.run(cfg, out_dir=out) == 0
    _, rows = read_csv(out / "witness.csv")
    status = {r[0]: r[1] for r in rows}
    assert status["log"] == "found"
    assert status["bump"] == "none"
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert "no-witness:bump" in summary["flags"]
    assert (out / "profile.csv").exists() and (out / "distance.csv").exists()


def test_invalid_eps_list_is_config_error(tmp_path):
    # eps below the 4h resolution floor is a bad parameter combination.
    cfg = {
        "experiment": "compactness-profile",
        "domain": {"d": 1, "m": 6},
        "kernel": {"variant": "hilbert"},
        "symbols": log_symbols(),
        "params": {"eps_list": [0.5, 0.01]},
    }
    assert cli.run(cfg, out_dir=tmp_path / "out") == 2


def test_hard_failure_exits_1_with_detail(tmp_path, monkeypatch, capsys):
    result = cli.ExperimentResult(
        tables={"t": (("a",), [(1.0,)])},
        assertions=[cli._assertion("doomed", False, detail="threshold crossed")],
    )
    monkeypatch.setitem(cli._EXPERIMENT_FUNCS, "bmo-compute", lambda ctx: result)
    cfg = {"experiment": "bmo-compute", "symbols": log_symbols()}
    assert cli.run(cfg, out_dir=tmp_path / "out") == 1
    err = capsys.readouterr().err
    assert "first failure: doomed: threshold crossed" in err


def test_byte_identical_reruns(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "domain": {"d": 1, "m": 8},
        "weights": {"mu": {"kind": "logsmooth", "amplitude": 0.4, "modes": 3, "seed": 2},
                    "lambda": {"kind": "power", "beta": 0.25}},
        "exponents": {"p": 2.0, "q": 3.0},
        "symbols": log_symbols(),
    }
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.run(cfg, out_dir=out_a) == 0
    assert cli.run(cfg, out_dir=out_b) == 0
    for name in ("bmo.csv", "summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


# -- sweeps --------------------------------------------------------------------


def test_m_sweep_of_scale_invariant_symbol(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "symbols": log_symbols(),
        "sweep": {"axis": "m", "values": [6, 8, 10]},
    }
    out = tmp_path / "out"
    assert cli.sweep(cfg, out_dir=out) == 0
    header, rows = read_csv(out / "sweep.csv")
    col = header.index("bmo_log")
    values = [float(r[col]) for r in rows]
    assert len(values) == 3
    assert max(values) <= 1.05 * min(values)
    assert all((out / f"m-{v}" / "bmo.csv").exists() for v in (6, 8, 10))


def test_pq_sweep_bloom_verify_all_pass(tmp_path):
    cfg = {
        "experiment": "bloom-verify",
        "domain": {"d": 1, "m": 7},
        "weights": {"mu": {"kind": "power", "beta": 0.25},
                    "lambda": {"kind": "logsmooth", "amplitude": 0.5, "modes": 3, "seed": 11}},
        "sweep": {"axis": "pq", "values": [1.5, 2, 3]},
    }
    out = tmp_path / "out"
    assert cli.sweep(cfg, out_dir=out) == 0
    _, rows = read_csv(out / "sweep.csv")
    assert [r[1] for r in rows] == ["ok", "ok", "ok"]


def test_empty_axis_empty_table(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "symbols": log_symbols(),
        "sweep": {"axis": "m", "values": []},
    }
    out = tmp_path / "out"
    assert cli.sweep(cfg, out_dir=out) == 0
    header, rows = read_csv(out / "sweep.csv")
    assert header[0] == "m" and rows == []


def test_sweep_row_level_errors(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "domain": {"d": 1, "m": 6},
        "symbols": log_symbols(),
        "sweep": {"axis": "symbol", "values": ["log", "missing"]},
    }
    out = tmp_path / "out"
    assert cli.sweep(cfg, out_dir=out) == 1
    _, rows = read_csv(out / "sweep.csv")
    assert rows[0][1] == "ok"
    assert rows[1][1] == "config-error" and "missing" in rows[1][2]


def test_sweep_missing_axis_exits_2(tmp_path, capsys):
    cfg = {"experiment": "bmo-compute", "symbols": log_symbols()}
    assert cli.sweep(cfg, out_dir=tmp_path / "out") == 2
    assert "sweep" in capsys.readouterr().err


def test_sweep_bad_axis_exits_2(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "symbols": log_symbols(),
        "sweep": {"axis": "banana", "values": [1]},
    }
    assert cli.sweep(cfg, out_dir=tmp_path / "out") == 2


def test_sweep_determinism_across_worker_counts(tmp_path):
    cfg = {
        "experiment": "bmo-compute",
        "symbols": log_symbols(),
        "sweep": {"axis": "m", "values": [6, 7, 8]},
    }
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.sweep(cfg, out_dir=out_a, workers=1) == 0
    assert cli.sweep(cfg, out_dir=out_b, workers=3) == 0
    assert (out_a / "sweep.csv").read_bytes() == (out_b / "sweep.csv").read_bytes()


def test_worker_env_overrides_flag(tmp_path, monkeypatch):
    cfg = {
        "experiment": "bmo-compute",
        "symbols": log_symbols(),
        "sweep": {"axis": "m", "values": [6]},
    }
    monkeypatch.setenv(cli.WORKER_ENV, "not-a-number")
    assert cli.sweep(cfg, out_dir=tmp_path / "a") == 2
    monkeypatch.setenv(cli.WORKER_ENV, "2")
    assert cli.sweep(cfg, out_dir=tmp_path / "b") == 0


# -- entry point ---------------------------------------------------------------


def test_main_wires_subcommands(tmp_path):
    path = write_config(tmp_path, {
        "experiment": "weights-check",
        "domain": {"d": 1, "m": 6},
    })
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "summary.json").exists()


def test_module_invocation(tmp_path):
    path = write_config(tmp_path, {
        "experiment": "weights-check",
        "domain": {"d": 1, "m": 6},
    })
    proc = subprocess.run(
        [sys.executable, "-m", "dyadlab.cli", "run", "--config", path,
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout
