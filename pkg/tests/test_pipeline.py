import json

import numpy as np
import pytest

from neumann_mcf import pipeline as P
from neumann_mcf import varifold as V
from neumann_mcf.config import OUTPUT_ROOT_ENV, parse_config_text
from neumann_mcf.evolve import SolverConfig, load_trajectory, run
from neumann_mcf.grid import GridSpec, ScalarField, read_snapshot, write_snapshot

SMALL = """[domain]
nx = 32
ny = 33
[solver]
epsilon = {eps}
t_end = {t_end}
snapshot_every = 0.001
[checks]
varifold_stride = 2
gamma_count = 5
[output]
directory = {out}
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "small"
    cfg = parse_config_text(SMALL.format(eps="1e-2, 1e-3", t_end=0.004, out=out))
    return cfg, P.run_experiment(cfg)


def test_run_layout(small_run):
    cfg, man = small_run
    root = cfg.output_dir()
    for rel in ("config.ini", "summary.txt", "manifest.json", "initial/g.snap", "initial/initial_checks.csv",
                "eps_0.01/stats.csv", "eps_0.001/identities.csv", "eps_0.001/curves/varifold_report.csv",
                "eps_0.001/curves/varifold_checks.csv", "eps_0.001/plot/timeseries.csv",
                "eps_0.001/near_critical.json"):
        assert (root / rel).is_file(), rel
        assert rel in man.files
    assert man.files == sorted(man.files[:-1]) + ["manifest.json"]
    assert [s.name for s in man.stages] == ["make-initial", "evolve", "evolve", "diagnose", "levelsets",
                                            "diagnose", "levelsets", "report"]


def test_manifest_consistent_with_summary(small_run):
    cfg, man = small_run
    root = cfg.output_dir()
    code, lines = P.summarize(root)
    assert man.exit_code == code and man.passed == (code == P.EXIT_PASS)
    assert lines[-1] == "OVERALL " + ("PASS" if code == 0 else "FAIL")
    assert (root / "summary.txt").read_text().splitlines() == lines
    back = P.RunManifest.from_json((root / "manifest.json").read_text())
    assert back == man and back.config_hash == cfg.digest()


def test_uniform_bound_uses_sweep(small_run):
    cfg, _ = small_run
    rows = P.read_identities(cfg.output_dir() / "eps_0.001" / "identities.csv")
    names = [r["name"] for r in rows]
    assert "l1_uniform_bound" in names and "radius_law" in names
    assert any(n.startswith("first_variation[") for n in names)


def test_zero_time_run_passes(tmp_path):
    cfg = parse_config_text(SMALL.format(eps="1e-3", t_end=0.0, out=tmp_path / "z"))
    man = P.run_experiment(cfg)
    assert man.exit_code == P.EXIT_PASS, (cfg.output_dir() / "summary.txt").read_text()
    assert [s.name for s in man.stages] == ["make-initial", "report"]


def test_bad_output_dir_is_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = parse_config_text(SMALL.format(eps="1e-3", t_end=0.0, out=blocker / "sub"))
    with pytest.raises(OSError):
        P.run_experiment(cfg)


def test_stage_error_recorded(tmp_path, monkeypatch):
    cfg = parse_config_text(SMALL.format(eps="1e-3", t_end=0.002, out=tmp_path / "e"))

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(P, "run", boom)
    man = P.run_experiment(cfg)
    bad = [s for s in man.stages if not s.ok]
    assert len(bad) == 1 and "solver exploded" in bad[0].error
    assert man.exit_code == P.EXIT_FAIL and not man.passed
    assert "diagnose" not in [s.name for s in man.stages]


def test_corrupted_snapshot_fails_diagnose(small_run, tmp_path):
    cfg, _ = small_run
    traj = load_trajectory(cfg.output_dir() / "eps_0.001")
    k = len(traj) // 2
    noisy = traj.snapshots[k].values + np.random.default_rng(0).normal(0, 0.05, traj.grid.shape)
    bad = traj.with_snapshot(k, ScalarField(traj.grid, noisy))
    reps = {r.name: r for r in P.diagnose(bad, cfg.checks, (0.5, 0.0))}
    assert not P.all_passed(list(reps.values()))
    assert not reps["max_principle"].passed or not reps["energy_monotone"].passed


def test_all_passed_ignores_non_gating():
    from neumann_mcf.diagnostics import IdentityReport

    ok = IdentityReport("a", 0.0, 0.0, 1.0)
    info = IdentityReport("b", 5.0, 0.0, 1.0, gating=False)
    assert P.all_passed([ok, info]) and not P.all_passed([ok, IdentityReport("c", 5.0, 0.0, 1.0)])


def test_summarize_empty_dir(tmp_path):
    code, lines = P.summarize(tmp_path)
    assert code == P.EXIT_ERROR and "no check files" in lines[0]


def test_family_indices():
    assert P.family_indices(10, 4) == [0, 4, 8, 9]
    assert P.family_indices(9, 4) == [0, 4, 8]
    assert P.family_indices(1, 3) == [0]


def test_name_lookups():
    g = GridSpec(1.0, 1.0, 16, 17)
    assert [X.name.split("(")[0] for X in P.field_library(["sin_x1", "wave"], g)][0].startswith("sin")
    with pytest.raises(ValueError):
        P.field_library(["nope"], g)
    assert P.test_function("cos_squared", g).sup_grad2_over_phi is not None
    with pytest.raises(ValueError):
        P.test_function("nope", g)
    assert P.eps_dirname(1e-3) == "eps_0.001"


# ---------------------------------------------------------------- plot data

def test_timeseries_empty_trajectory(tmp_path):
    g = GridSpec(1.0, 1.0, 16, 17)
    tr = run(ScalarField(g, np.zeros(g.shape)), SolverConfig(1e-2, 0.0, 1e-3))
    tr.records.clear()
    (p,) = P.emit_plot_data(tr, "timeseries", tmp_path / "ts.csv")
    assert p.read_text() == "t,energy,l1_H,sup_grad\n"


def test_timeseries_energy_monotone(small_run, tmp_path):
    cfg, _ = small_run
    tr = load_trajectory(cfg.output_dir() / "eps_0.001")
    (p,) = P.emit_plot_data(tr, "timeseries", tmp_path / "ts.csv")
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (len(tr.records), 4)
    assert np.all(np.diff(data[:, 1]) <= 0)


def test_stationary_curves_identical(tmp_path):
    g = GridSpec(1.0, 1.0, 16, 17)
    tr = run(ScalarField(g, g.mesh()[1] - 0.4), SolverConfig(1e-2, 0.002, 0.001))
    fam = V.build_family(tr, [-0.1, 0.0, 0.1])
    files = P.emit_plot_data(fam, "curves", tmp_path / "c")
    assert len(files) == 9
    by_time = {}
    for f in files:
        g_, t_ = f.stem.split("_")[1:]
        by_time.setdefault(g_, []).append(f.read_text().splitlines()[1:])
    for rows in by_time.values():
        assert all(r == rows[0] for r in rows)
    (m,) = P.emit_plot_data(fam, "mass_table", tmp_path / "m.csv")
    M = np.loadtxt(m, delimiter=",", skiprows=1)
    np.testing.assert_allclose(M[:, 1:], 1.0, rtol=1e-12)
    with pytest.raises(ValueError):
        P.emit_plot_data(fam, "pie", tmp_path / "x")


def test_make_initial_writes_report(tmp_path):
    cfg = parse_config_text(SMALL.format(eps="1e-3", t_end=0.0, out=tmp_path))
    st = P.make_initial(cfg.initial, P.initial_grid(cfg), cfg.checks, tmp_path / "g.snap")
    u, meta = read_snapshot(tmp_path / "g.snap")
    assert np.array_equal(u.values, st.result.field.values) and meta["time"] == 0.0
    text = (tmp_path / "g.snap.report.txt").read_text()
    assert "naive datum" in text and "reflection symmetry" in text
    assert P.all_passed(st.reports)


def test_deterministic_outputs(tmp_path, monkeypatch):
    outs = []
    for k in range(2):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / f"r{k}"))
        cfg = parse_config_text(SMALL.format(eps="1e-3", t_end=0.002, out="run"))
        P.run_experiment(cfg)
        outs.append(cfg.output_dir())
    a, b = outs
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for n in names:
        if n.name == "manifest.json":
            ja, jb = (json.loads((r / n).read_text()) for r in (a, b))
            for j in (ja, jb):
                j.pop("output_dir")
                for s in j["stages"]:
                    s.pop("seconds")
            assert ja == jb
        else:
            assert (a / n).read_bytes() == (b / n).read_bytes(), n
