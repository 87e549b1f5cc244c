"""Command-line interface: config echo, exit codes, output files."""

import dataclasses
import io
import math

import numpy as np
import pytest

from stochtex import ConvergenceError, Field, ParameterError, load, load_map_csv
import stochtex.cli as cli
from stochtex.cli import RunConfig, main, parse_config

from conftest import step_image


@pytest.fixture(scope="module")
def input_pgm(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "step.pgm"
    Field(step_image(16)).save(str(p), "pgm")
    return str(p)


def _std_args(input_pgm, prefix, extra=()):
    return ["std", "--input", input_pgm, "--n", "30",
            "--out-prefix", prefix, *extra]


# ---------------------------------------------------------------------------
# config parsing and echo round trip

def test_config_echo_round_trip():
    cfg = parse_config(["std", "--input", "a.pgm", "--lambda", "2.5",
                        "--kappa", "0.31", "--n", "64", "--seed", "9",
                        "--kernel", "lab", "--threads", "2",
                        "--domain", "0,32.7"])
    text = "\n".join(cfg.echo_lines())
    assert RunConfig.from_echo(text) == cfg


def test_config_echo_round_trip_sweep_tuples():
    cfg = parse_config(["sweep", "--input", "a.pgm",
                        "--lambdas", "1,1.5,2", "--kappas", "0.25,0.5",
                        "--runs", "3", "--fraction", "0.1"])
    assert cfg.n == 100  # sweep default differs from std default
    assert cfg.lambdas == (1.0, 1.5, 2.0)
    text = "\n".join(cfg.echo_lines())
    assert RunConfig.from_echo(text) == cfg


def test_from_echo_ignores_foreign_lines():
    cfg = parse_config(["std", "--input", "a.pgm"])
    text = "# effective config\n" + "\n".join(cfg.echo_lines()) + \
        "\nmap_pgm=out.pgm\npsnr=12.0\n"
    assert RunConfig.from_echo(text) == cfg


def test_physical_scale_flags_resolve():
    cfg = parse_config(["std", "--input", "a.pgm",
                        "--lambda-physical", "29.61", "--units-per-px", "8.46"])
    assert math.isclose(cfg.lam, 3.5)
    cfg = parse_config(["std", "--input", "a.pgm", "--domain", "0,32.7",
                        "--kappa-physical", "0.981"])
    assert math.isclose(cfg.kappa, 0.03)


def test_physical_scale_flags_need_their_partner():
    with pytest.raises(ParameterError):
        parse_config(["std", "--input", "a.pgm", "--lambda-physical", "10"])
    with pytest.raises(ParameterError):
        parse_config(["std", "--input", "a.pgm", "--kappa-physical", "0.5"])


# ---------------------------------------------------------------------------
# exit codes

def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as ei:
        main(["bogus"])
    assert ei.value.code == 2


def test_missing_input_exits_3(tmp_path, capsys):
    assert main(_std_args(str(tmp_path / "nope.pgm"), str(tmp_path / "o"))) == 3
    assert "error:" in capsys.readouterr().err


def test_bad_parameter_exits_2(input_pgm, tmp_path, capsys):
    args = _std_args(input_pgm, str(tmp_path / "o"), ["--lambda", "0"])
    assert main(args) == 2
    assert "error:" in capsys.readouterr().err


def test_lab_kernel_on_gray_input_exits_2(input_pgm, tmp_path, capsys):
    args = _std_args(input_pgm, str(tmp_path / "o"), ["--kernel", "lab"])
    assert main(args) == 2
    capsys.readouterr()


def test_convergence_failure_exits_4(input_pgm, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise ConvergenceError("synthetic", residual=1.0)

    monkeypatch.setattr(cli, "std_map_avg", boom)
    assert main(_std_args(input_pgm, str(tmp_path / "o"))) == 4
    assert "synthetic" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# std subcommand

def test_std_writes_outputs(input_pgm, tmp_path, capsys):
    prefix = str(tmp_path / "run")
    assert main(_std_args(input_pgm, prefix)) == 0
    out = capsys.readouterr().out
    assert "# effective config" in out
    assert f"map_pgm={prefix}.std.pgm" in out
    m = load_map_csv(prefix + ".std.csv")
    assert m.shape == (16, 16)
    assert np.isfinite(m).any()
    assert (tmp_path / "run.std.pgm.range.txt").exists()
    diag = (tmp_path / "run.diag.txt").read_text()
    assert "lambda=" in diag and "wall_time" in diag


def test_std_rerun_and_threads_are_byte_identical(input_pgm, tmp_path, capsys):
    pa, pb, pc = (str(tmp_path / x) for x in "abc")
    assert main(_std_args(input_pgm, pa)) == 0
    assert main(_std_args(input_pgm, pb)) == 0
    assert main(_std_args(input_pgm, pc, ["--threads", "2"])) == 0
    capsys.readouterr()
    for suffix in (".std.csv", ".std.pgm"):
        a = open(pa + suffix, "rb").read()
        assert a == open(pb + suffix, "rb").read()
        assert a == open(pc + suffix, "rb").read()


def test_std_echo_reproduces_outputs(input_pgm, tmp_path, capsys):
    prefix = str(tmp_path / "first")
    assert main(_std_args(input_pgm, prefix)) == 0
    echo = capsys.readouterr().out
    cfg = RunConfig.from_echo(echo)
    cfg2 = dataclasses.replace(cfg, out_prefix=str(tmp_path / "replay"))
    assert cli.cmd_std(cfg2, io.StringIO()) == 0
    a = open(prefix + ".std.csv", "rb").read()
    b = open(str(tmp_path / "replay") + ".std.csv", "rb").read()
    assert a == b


# ---------------------------------------------------------------------------
# sweep / reconstruct / texgrad subcommands

def test_sweep_writes_grid_and_best(input_pgm, tmp_path, capsys):
    prefix = str(tmp_path / "sw")
    rc = main(["sweep", "--input", input_pgm, "--lambdas", "1",
               "--kappas", "0.25,0.5", "--n", "30", "--runs", "1",
               "--out-prefix", prefix])
    assert rc == 0
    out = capsys.readouterr().out
    assert "best_lambda=" in out and "best_psnr=" in out
    lines = (tmp_path / "sw.sweep.csv").read_text().strip().split("\n")
    assert lines[0] == "lambda,kappa,run,psnr"
    assert len(lines) == 1 + 2 * 3  # 2 cells x (run0, mean, avgmap)
    best = (tmp_path / "sw.best.txt").read_text()
    assert best.startswith("best_lambda=1\n")


def test_reconstruct_writes_rebuild_and_psnr(input_pgm, tmp_path, capsys):
    prefix = str(tmp_path / "rc")
    rc = main(["reconstruct", "--input", input_pgm, "--n", "30",
               "--out-prefix", prefix])
    assert rc == 0
    out = capsys.readouterr().out
    ps = [ln for ln in out.splitlines() if ln.startswith("psnr=")]
    assert ps and float(ps[0].partition("=")[2]) > 5.0
    rebuilt = load(prefix + ".recon.pgm", "pgm")
    assert rebuilt.shape == (16, 16)
    assert (tmp_path / "rc.recon.csv").exists()


def test_texgrad_writes_rebuild(input_pgm, tmp_path, capsys):
    prefix = str(tmp_path / "tg")
    rc = main(["texgrad", "--input", input_pgm, "--n", "30",
               "--out-prefix", prefix])
    assert rc == 0
    assert "recon_csv=" in capsys.readouterr().out
    assert (tmp_path / "tg.texgrad.csv").exists()
    assert (tmp_path / "tg.texgrad.pgm").exists()
