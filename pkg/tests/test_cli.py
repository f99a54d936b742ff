"""End-to-end checks of the command-line front end.

Runs go through ``main(argv)`` in-process so exit codes, stderr routing, and
emitted files are all observable without spawning interpreters.
"""

import json

import numpy as np
import pytest

from imis_shopt.cli import (
    build_trajectory_table,
    main,
    parse_experiment_config,
)
from imis_shopt.imis_core import STREAM_DATA, substream
from imis_shopt.models import generate_dataset
from imis_shopt.simulators import ObservationSet, write_observations_csv


def write_config(tmp_path, **overrides):
    cfg = {
        "model": "fhn1",
        "variant": "IMIS",
        "seed": 3,
        "counts": {"n0": 40, "b": 10, "d": 1, "q": 1, "j": 15, "n_iter": 2},
        "data": {"generate": {"seed": 0}},
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    lines = path.read_text().strip().split("\n")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_generate_writes_deterministic_csv_and_meta(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    assert main(["generate", "--model", "fhn1", "--seed", "7", "--out", str(out_a)]) == 0
    assert main(["generate", "--model", "fhn1", "--seed", "7", "--out", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()

    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["model"] == "fhn1"
    assert meta["seed"] == 7
    assert len(meta["theta"]) == 7

    # the file round-trips the direct simulation at the same stream
    direct = generate_dataset("fhn1", np.array(meta["theta"]), substream(7, STREAM_DATA))
    header, rows = read_csv(out_a)
    values = np.array([[float(v) for v in r] for r in rows])
    assert np.allclose(values[:, 0], direct.times, atol=0)
    assert np.array_equal(values[:, 1:], direct.values)


def test_generate_rejects_bad_theta(tmp_path, capsys):
    code = main(
        ["generate", "--model", "fhn1", "--theta", "1,2,x", "--out", str(tmp_path / "d.csv")]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_run_emits_all_tables(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"

    header, rows = read_csv(out / "posterior_samples.csv")
    assert header == ["c"]
    assert len(rows) == 15

    report = json.loads((out / "run_report.json").read_text())
    assert report["seed"] == 3
    assert report["variant"] == "IMIS"
    assert report["model"] == "fhn1"
    assert report["threads"] == 1
    assert report["data_source"] == {"generate": {"seed": 0}}

    header, rows = read_csv(out / "weights_pre_resample.csv")
    assert header == ["c", "weight"]
    assert len(rows) == report["n_particles"]
    total = sum(float(r[1]) for r in rows)
    assert abs(total - 1.0) < 1e-10

    # IMIS runs no optimization stage: the mode table is an empty frame
    header, rows = read_csv(out / "modes.csv")
    assert header[:6] == ["method", "d", "q", "objective", "converged", "context_value"]
    assert rows == []

    # full-precision round trip of the sample table
    raw = np.loadtxt(out / "posterior_samples.csv", skiprows=1, ndmin=2)
    rewritten = ["%.17g" % v for v in raw[:, 0]]
    assert rewritten == [r[0] for r in read_csv(out / "posterior_samples.csv")[1]]


def test_run_seed_and_out_overrides(tmp_path):
    cfg = write_config(tmp_path)
    alt = tmp_path / "alt"
    assert main(["run", "--config", str(cfg), "--seed", "11", "--out", str(alt)]) == 0
    report = json.loads((alt / "run_report.json").read_text())
    assert report["seed"] == 11


def test_run_shotgun_emits_modes_and_is_thread_invariant(tmp_path):
    outs = []
    for threads in ("1", "4"):
        cfg = write_config(
            tmp_path,
            variant="IMIS-ShOpt",
            shotgun_methods=["NLS"],
            out_dir=str(tmp_path / ("out" + threads)),
        )
        assert main(["run", "--config", str(cfg), "--threads", threads]) == 0
        outs.append(tmp_path / ("out" + threads))

    a, b = outs
    assert (a / "posterior_samples.csv").read_bytes() == (
        b / "posterior_samples.csv"
    ).read_bytes()
    assert (a / "weights_pre_resample.csv").read_bytes() == (
        b / "weights_pre_resample.csv"
    ).read_bytes()

    header, rows = read_csv(a / "modes.csv")
    assert len(rows) == 1
    assert rows[0][0] == "NLS"
    assert rows[0][4] in ("true", "false")
    reported = json.loads((a / "run_report.json").read_text())
    assert reported["threads"] == 1
    assert json.loads((b / "run_report.json").read_text())["threads"] == 4


def test_run_emits_trajectories_when_asked(tmp_path):
    cfg = write_config(
        tmp_path, emit={"trajectories": True, "trajectory_draws": 3}
    )
    assert main(["run", "--config", str(cfg)]) == 0
    header, rows = read_csv(tmp_path / "out" / "trajectories.csv")
    assert header == ["draw_id", "state", "time", "value"]
    assert len(rows) == (3 + 1) * 2 * 41
    assert {r[1] for r in rows} == {"V", "R"}
    assert min(int(r[0]) for r in rows) == -1


def test_run_rejects_unknown_keys(tmp_path, capsys):
    cfg = write_config(tmp_path, typo_key=1)
    assert main(["run", "--config", str(cfg)]) == 1
    assert "typo_key" in capsys.readouterr().err

    cfg = write_config(tmp_path, counts={"n0": 40, "b": 10, "d": 1, "q": 1})
    assert main(["run", "--config", str(cfg)]) == 1
    assert "missing" in capsys.readouterr().err


def test_run_maps_total_flooding_to_exit_2(tmp_path, capsys):
    grid = np.arange(0.0, 20.5, 0.5)
    junk = ObservationSet(grid, np.full((41, 2), 1e200), ("V", "R"))
    data_path = tmp_path / "junk.csv"
    write_observations_csv(str(data_path), junk)
    cfg = write_config(tmp_path, data={"path": str(data_path)})
    assert main(["run", "--config", str(cfg)]) == 2
    assert "flood" in capsys.readouterr().err


def test_trajectories_subcommand_row_count(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out_csv = tmp_path / "traj.csv"
    code = main(
        [
            "trajectories",
            "--samples", str(tmp_path / "out" / "posterior_samples.csv"),
            "--model", "fhn1",
            "--n-draws", "3",
            "--out", str(out_csv),
        ]
    )
    assert code == 0
    header, rows = read_csv(out_csv)
    assert len(rows) == (3 + 1) * 2 * 41


def test_trajectories_reject_stochastic_model(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    samples.write_text("log_r,phi,sigma2_p,log_theta_tilde\n0.5,4,0.1,1\n")
    code = main(
        ["trajectories", "--samples", str(samples), "--model", "ricker",
         "--out", str(tmp_path / "t.csv")]
    )
    assert code == 1
    assert "deterministic ODE" in capsys.readouterr().err


def test_trajectories_reject_missing_columns(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    samples.write_text("a,b\n1,2\n")
    code = main(
        ["trajectories", "--samples", str(samples), "--model", "fhn1",
         "--out", str(tmp_path / "t.csv")]
    )
    assert code == 1
    assert "missing column" in capsys.readouterr().err


def test_trajectory_table_draw_budget_checks():
    samples = np.array([[3.0], [12.0]])
    with pytest.raises(Exception):
        build_trajectory_table("fhn1", samples, 5)
    header, rows = build_trajectory_table("fhn1", samples, 0)
    assert len(rows) == 1 * 2 * 41  # mean trajectory only


def test_config_env_threads_and_defaults(monkeypatch):
    raw = {
        "model": "fhn1",
        "counts": {"n0": 10, "b": 2, "d": 1, "q": 1, "j": 5},
        "data": {"generate": {}},
    }
    monkeypatch.setenv("IMIS_SHOPT_THREADS", "3")
    cfg = parse_experiment_config(raw)
    assert cfg.threads == 3
    assert cfg.variant == "IMIS-ShOpt"
    assert cfg.emit == {
        "samples": True, "weights": True, "modes": True,
        "trajectories": False, "trajectory_draws": 20,
    }
    monkeypatch.delenv("IMIS_SHOPT_THREADS")
    assert parse_experiment_config(raw).threads == 1


def test_config_rejects_trajectory_draws_over_j(tmp_path, capsys):
    cfg = write_config(
        tmp_path, emit={"trajectories": True, "trajectory_draws": 50}
    )
    assert main(["run", "--config", str(cfg)]) == 1
    assert "trajectory_draws" in capsys.readouterr().err
