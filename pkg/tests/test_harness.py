import json

import numpy as np
import pytest
import yaml

from starris.harness import cli
from starris.harness.config import TOL_ENV, ConfigError, dump_config, load_config, parse_config
from starris.harness.experiments import pareto_front, sub_seed
from starris.harness.output import Table, read_csv, write_csv

TINY = {
    "system": {"N": 2, "M": 3, "K": 2, "user_sides": ["t", "r"]},
    "solver": {"max_outer": 2, "max_inner": 2, "n_randomizations": 5},
    "experiment": {
        "m_grid": [2, 3], "n_grid": [2], "p_bs_max_dbm_grid": [20.0], "omega_ratio_grid": [0.1, 10.0],
        "trials": 2, "seed": 5,
    },
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_empty_config_gives_defaults():
    sc = parse_config({})
    cfg = sc.system
    assert (cfg.N, cfg.M, cfg.K) == (4, 30, 4)
    assert cfg.user_sides == ("t", "t", "r", "r")
    assert cfg.p_bs_max == pytest.approx(1.0) and cfg.p_ris_max == pytest.approx(1.0)
    assert cfg.p_c == pytest.approx(1.0) and cfg.p_r == pytest.approx(0.01)
    assert cfg.sigma2 == pytest.approx(1e-14) and cfg.sigma_a2 == pytest.approx(1e-14)
    assert cfg.kappa_b == cfg.kappa_u == 0.02
    assert (cfg.r_min, cfg.rho_max, cfg.xi, cfg.bandwidth) == (0.4, 5.0, 0.8, 10e6)
    assert cfg.omega == pytest.approx(cfg.p_max)
    assert sc.experiment.trials == 10
    assert load_config(None).file == sc.file


def test_kappa_override_gives_ideal_hardware():
    cfg = parse_config({"system": {"kappa_b": 0.0, "kappa_u": 0.0}}).system
    assert cfg.kappa_b == cfg.kappa_u == 0.0


def test_round_trip(tmp_path):
    sc = parse_config(TINY)
    path = tmp_path / "again.yaml"
    path.write_text(dump_config(sc))
    again = load_config(path)
    assert again.file == sc.file
    assert again.system == sc.system


def test_omega_follows_budget():
    sc = parse_config({"system": {"omega_ratio": 2.0}})
    cfg = sc.system_for(M=8)
    assert cfg.M == 8 and cfg.omega == pytest.approx(2.0 * cfg.p_max)


@pytest.mark.parametrize(
    "data, path",
    [
        ({"system": {"colour": 1}}, "system.colour"),
        ({"system": {"K": 3}}, "system"),
        ({"system": {"kappa_b": 1.5}}, "system.kappa_b"),
        ({"experiment": {"trials": 0}}, "experiment.trials"),
        ({"experiment": {"schemes": ["proposed", "mmse"]}}, "experiment.schemes"),
        ({"experiment": {"seed": 2**64}}, "experiment.seed"),
        ({"geometry": {"user_min_radius": 5.0}}, "geometry"),
    ],
)
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert any(p.startswith(path) for p, _ in info.value.errors)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)
    bad.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(bad)


def test_tolerance_env_override(monkeypatch):
    sc = parse_config({})
    assert sc.options(0).solver_tol == 1e-8
    monkeypatch.setenv(TOL_ENV, "1e-6")
    assert sc.options(0).solver_tol == 1e-6
    monkeypatch.setenv(TOL_ENV, "tight")
    with pytest.raises(ConfigError, match=TOL_ENV):
        sc.options(0)


def test_pareto_front():
    pts = [(1.0, 5.0), (2.0, 4.0), (1.5, 3.0), (2.0, 4.0), (3.0, 1.0), (float("nan"), 9.0)]
    assert pareto_front(pts) == [True, True, False, True, True, False]


def test_sub_seeds_are_distinct():
    assert len({sub_seed(s, t) for s in range(50) for t in range(3)}) == 150


def test_csv_header_carries_units(tmp_path):
    t = Table("demo", [("scheme", "label"), ("re", "re"), ("p_tot", "power"), ("alpha", "none")])
    t.rows.append(("proposed", 0.1 + 0.2, 1.5, float("nan")))
    path = write_csv(t, tmp_path)
    text = path.read_text()
    assert text.splitlines()[0] == "scheme [label],re [bit/s/Hz/W],p_tot [W],alpha [dimensionless]"
    header, rows = read_csv(path)
    assert header == ["scheme", "re", "p_tot", "alpha"]
    assert float(rows[0][1]) == 0.1 + 0.2  # shortest round-trip repr
    assert rows[0][3] == "nan"


def test_cli_rejects_bad_arguments(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["solve", "--seed", "-1"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["fly"])
    assert cli.main(["solve", "--schemes", "proposed,mmse", "--out", "/nonexistent"]) == 2
    assert "experiment.schemes" in capsys.readouterr().err


def test_cli_rejects_bad_tolerance(monkeypatch, tiny_config):
    monkeypatch.setenv(TOL_ENV, "-1")
    assert cli.main(["solve", "--config", str(tiny_config)]) == 2


def test_cli_solve_writes_csv_and_metadata(tmp_path, tiny_config, capsys):
    out = tmp_path / "out"
    code = cli.main(["solve", "--config", str(tiny_config), "--out", str(out), "--trials", "1",
                     "--schemes", "proposed,zf"])
    assert code == 0
    printed = capsys.readouterr().out.split()
    assert str(out / "solve.csv") in printed
    header, rows = read_csv(out / "solve.csv")
    assert [r[header.index("scheme")] for r in rows] == ["proposed", "zf"]
    assert all(r[header.index("status")] == "ok" for r in rows)
    meta = json.loads((out / "solve.metadata.json").read_text())
    assert meta["master_seed"] == 5 and len(meta["trial_seeds"]) == 1
    assert "numpy" in meta["versions"]
    assert yaml.safe_load(meta["config"])["experiment"]["id"] == "single_solve"


def test_cli_convergence_curves(tmp_path, tiny_config):
    out = tmp_path / "conv"
    assert cli.main(["convergence", "--config", str(tiny_config), "--out", str(out)]) == 0
    header, rows = read_csv(out / "convergence.csv")
    assert header[:4] == ["scheme", "N", "iteration", "mean_re"]
    mean = np.array([float(r[3]) for r in rows])
    assert np.all(np.isfinite(mean)) and np.all(np.diff(mean) >= -1e-9 * mean[:-1])
    assert (out / "convergence.svg").exists()


def test_parallel_and_serial_runs_are_byte_identical(tmp_path, tiny_config):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["se-ee", "--config", str(tiny_config), "--trials", "1", "--no-plots"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b), "--workers", "2"]) == 0
    for name in ("se_ee.csv", "se_ee_trials.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert not (a / "se_ee.svg").exists()
