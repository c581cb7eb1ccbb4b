import io
import json

import pytest

from langevin_anneal import cli

CONFIGS = ["invariance", "hwang", "contraction", "anneal", "compare_sigma", "gibbs_chain"]


def _write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    pot = out.split("fields:")[0].strip().splitlines()[1:]
    fields = out.split("fields:")[1].split("experiments:")[0].strip().splitlines()
    assert len(pot) >= 6 and len(fields) >= 4


@pytest.mark.parametrize("name", CONFIGS)
def test_shipped_configs_validate(name, capsys):
    assert cli.main(["validate", "--config", f"configs/{name}.cfg"]) == 0
    assert "validate: ok" in capsys.readouterr().out


def test_validate_reports_step_violation(tmp_path, capsys):
    path = _write(tmp_path, "experiment = anneal\nsteps.alpha = 0.4\n")
    assert cli.main(["validate", "--config", path]) == 1
    assert "VIOLATION" in capsys.readouterr().out


def test_config_error_exit(tmp_path):
    assert cli.main(["run", "--config", _write(tmp_path, "experiment = compare_sigma\nfield.lam = 0\n"),
                     "--outdir", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2
    assert cli.main(["validate", "--config", _write(tmp_path, "experiment = bogus\n")]) == 2


def test_invalid_second_config_stops_before_running(tmp_path):
    good = _write(tmp_path, "experiment = hwang\n", "good.cfg")
    bad = _write(tmp_path, "experiment = hwang\nhwang.nope = 1\n", "bad.cfg")
    assert cli.main(["run", "--config", good, "--config", bad, "--outdir", str(tmp_path)]) == 2
    assert not (tmp_path / "hwang").exists()


def test_divergence_exit(tmp_path):
    path = _write(tmp_path, "experiment = compare_sigma\nsteps.gamma1 = 10\nrun.n_chains = 50\n"
                            "compare_sigma.max_steps = 2000\n")
    assert cli.main(["run", "--config", path, "--outdir", str(tmp_path)]) == 3


def test_run_env_outdir_and_report(tmp_path, monkeypatch, capsys):
    env_root, flag_root = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv(cli.OUTDIR_ENV, str(env_root))
    assert cli.main(["run", "--config", "configs/hwang.cfg", "--tag", "x"]) == 0
    assert (env_root / "hwang" / "x" / "metrics.csv").is_file()
    assert cli.main(["run", "--config", "configs/hwang.cfg", "--tag", "x", "--outdir", str(flag_root)]) == 0
    out = capsys.readouterr().out
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["passed"] and summary["dir"] == str(flag_root / "hwang" / "x")
    assert cli.main(["report", str(flag_root / "hwang" / "x")]) == 0
    assert (flag_root / "hwang" / "x" / "regenerated").is_dir()


def test_report_flags_tampering(tmp_path, capsys):
    assert cli.main(["run", "--config", "configs/hwang.cfg", "--tag", "t", "--outdir", str(tmp_path)]) == 0
    csv = tmp_path / "hwang" / "t" / "metrics.csv"
    tampered = []
    for line in csv.read_text().splitlines():
        metric, key, value = line.split(",")
        tampered.append(f"{metric},{key},{float(value) * 3!r}" if metric == "basin_mass" else line)
    csv.write_text("\n".join(tampered) + "\n")
    assert cli.main(["report", str(tmp_path / "hwang" / "t")]) == 1


def test_report_missing_dir(tmp_path):
    assert cli.main(["report", str(tmp_path / "nothing")]) == 2


def test_commands_write_to_given_stream():
    buf = io.StringIO()
    assert cli.cmd_list(None, out=buf) == 0
    assert "experiments:" in buf.getvalue()
