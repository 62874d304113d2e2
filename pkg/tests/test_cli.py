import subprocess
import sys

import pytest

from neumann_mcf import cli
from neumann_mcf.evolve import load_trajectory

INI = """[domain]
nx = 32
ny = 33
[solver]
t_end = {t_end}
snapshot_every = 0.001
[checks]
varifold_stride = 2
gamma_count = 5
[output]
directory = {out}
"""


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    codes = {}
    codes["make-initial"] = cli.main(["make-initial", "--nx", "32", "--ny", "33", "--out", str(d / "g.snap")])
    codes["evolve"] = cli.main(["evolve", "--in", str(d / "g.snap"), "--epsilon", "1e-3", "--t-end", "0.004",
                                "--snapshot-every", "0.001", "--out-dir", str(d / "traj")])
    cli.main(["evolve", "--in", str(d / "g.snap"), "--epsilon", "1e-2", "--t-end", "0.004",
              "--snapshot-every", "0.001", "--stats-every", "4", "--out-dir", str(d / "traj2")])
    codes["diagnose"] = cli.main(["diagnose", "--traj", str(d / "traj"), "--epsilon-sweep", str(d / "traj2")])
    codes["levelsets"] = cli.main(["levelsets", "--traj", str(d / "traj"), "--gammas", "-0.5 0 0.5",
                                   "--stride", "2"])
    codes["report"] = cli.main(["report", "--traj", str(d)])
    return d, codes


def test_subcommand_chain_writes_files(chain):
    d, codes = chain
    assert codes["make-initial"] == 0 and codes["evolve"] == 0
    assert all(c in (0, 1) for c in codes.values())
    assert (d / "g.snap.report.txt").is_file()
    assert len(load_trajectory(d / "traj")) == 5
    assert (d / "traj" / "plot" / "timeseries.csv").is_file()
    assert (d / "traj" / "identities.csv").is_file()
    assert len(list((d / "traj" / "curves").glob("curves_g*_t*.csv"))) == 3 * 3
    assert (d / "summary.txt").read_text().splitlines()[-1].startswith("OVERALL")


def test_report_exit_matches_summary(chain):
    d, codes = chain
    last = (d / "summary.txt").read_text().splitlines()[-1]
    assert codes["report"] == (0 if last == "OVERALL PASS" else 1)


def test_run_zero_time_exit_zero(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text(INI.format(t_end=0.0, out=tmp_path / "out"))
    assert cli.main(["run", str(p)]) == 0
    assert "manifest:" in capsys.readouterr().out


def test_run_output_override(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(INI.format(t_end=0.0, out=tmp_path / "ignored"))
    assert cli.main(["run", str(p), "--output", str(tmp_path / "used")]) == 0
    assert (tmp_path / "used" / "manifest.json").is_file() and not (tmp_path / "ignored").exists()


def test_missing_config_exit_two(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.ini")]) == 2
    assert "not found" in capsys.readouterr().err


def test_invalid_config_exit_two(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text("[solver]\ncfl = 0.9\n")
    assert cli.main(["run", str(p)]) == 2
    assert "cfl ≤ 0.5" in capsys.readouterr().err


def test_bad_arguments_exit_two(capsys):
    assert cli.main([]) == 2
    assert cli.main(["evolve", "--in", "x"]) == 2
    assert cli.main(["make-initial", "--center", "1", "--out", "x"]) == 2


def test_missing_input_exit_two(tmp_path):
    assert cli.main(["evolve", "--in", str(tmp_path / "none.snap"), "--epsilon", "1e-3", "--t-end", "0.001",
                     "--snapshot-every", "0.001", "--out-dir", str(tmp_path / "t")]) == 2
    assert cli.main(["diagnose", "--traj", str(tmp_path / "nothing")]) == 2


def test_unstable_cfl_exit_two(tmp_path):
    assert cli.main(["make-initial", "--nx", "16", "--ny", "17", "--out", str(tmp_path / "g.snap")]) in (0, 1)
    assert cli.main(["evolve", "--in", str(tmp_path / "g.snap"), "--epsilon", "1e-3", "--t-end", "0.001",
                     "--snapshot-every", "0.001", "--cfl", "0.9", "--out-dir", str(tmp_path / "t")]) == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "neumann_mcf.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("make-initial", "evolve", "diagnose", "levelsets", "report", "run"):
        assert sub in out.stdout
