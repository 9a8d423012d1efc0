import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from strongloc import iocli
from strongloc.driver import StepReport
from strongloc.energy import EnergyBreakdown
from strongloc.errors import ConfigError
from strongloc.iocli import (SUMMARY_COLUMNS, dump_config, load_config, main, parse_config, read_summary,
                             run_config, summary_row, sweep_configs, write_summary)
from strongloc.material import MaterialSpec

CONFIGS = Path(iocli.__file__).parent / "configs"
QUICK = {"problem": "bar1d", "collocation": {"points": 201},
         "protocol": {"adamw_epochs": 200, "presolve_epochs": 200, "presolve_lbfgs_iter": 100,
                      "lbfgs_max_iter": 50},
         "program": {"steps": [4.5]}}
BAR = MaterialSpec(E=2.0, sigma_p=1.0, Hbar=-2.0 / 11.0, h=1.0)


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def fake_report(delta=4.5, jump=2.0, converged=True, flags=()):
    return StepReport(delta, np.zeros(13), {"y_p": 5.0, "jump": jump, "jump_norm": abs(jump)},
                      EnergyBreakdown(1.0, -0.5, 2.0, 1e-9), [3.0, 2.0], 0, {}, 0.1, converged, list(flags))


class TestParsing:
    def test_bar_defaults(self):
        cfg = parse_config({"problem": "bar1d"})
        assert cfg.collocation["points"] == 1001
        assert cfg.network["nodes"] == 11
        assert cfg.protocol["adamw_epochs"] == 3000

    def test_shear_defaults(self):
        cfg = parse_config({"problem": "shear2d", "material": {"h": 0.1}})
        assert cfg.collocation["grid"] == 101
        assert cfg.protocol["adamw_epochs"] == 5000
        assert cfg.protocol["lbfgs_enabled"] is False

    @pytest.mark.parametrize("raw,key", [
        ({"problem": "bar1d", "material": {"E": -1.0}}, "material.E"),
        ({"problem": "bar1d", "material": {"nu": 0.5}}, "material.nu"),
        ({"problem": "bar1d", "material": {"young": 2.0}}, "material.young"),
        ({"problem": "bar1d", "colour": "red"}, "colour"),
        ({"problem": "shear2d", "network": {"widths": [3, 10, 2]}}, "network.widths"),
        ({"problem": "bar1d", "collocation": {"points": 10.5}}, "collocation.points"),
        ({"problem": "bar1d", "band": {"position_mode": "percent"}}, "band.position_mode"),
        ({"problem": "bar1d", "program": {"steps": [5.0, 4.0]}}, "program.steps"),
        ({"problem": "plate"}, "problem"),
    ])
    def test_errors_name_the_key(self, raw, key):
        with pytest.raises(ConfigError) as info:
            parse_config(raw)
        assert info.value.key == key
        assert key in str(info.value)

    @pytest.mark.parametrize("name", ["bar1d", "shear2d", "bar1d_quick"])
    def test_round_trip(self, name, tmp_path):
        cfg = load_config(CONFIGS / f"{name}.yaml", echo=False)
        path = dump_config(cfg, tmp_path / "echo.yaml")
        assert load_config(path, echo=False) == cfg

    def test_echo_written(self, tmp_path, monkeypatch):
        monkeypatch.setenv(iocli.OUTPUT_ENV, str(tmp_path / "out"))
        cfg = load_config(CONFIGS / "bar1d.yaml")
        echoed = tmp_path / "out" / "config.resolved.yaml"
        assert echoed.is_file()
        assert load_config(echoed, echo=False) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.cfg")

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("problem: [bar1d\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestSweeps:
    def test_init_has_eighteen_runs(self):
        runs = sweep_configs(parse_config({"problem": "shear2d"}), "init")
        assert len(runs) == 18
        combos = {(c.band["position"], c.band["angle_deg"]) for _, c in runs}
        assert combos == {(p, float(a)) for p in (0.2, 0.5, 0.8) for a in (0, 15, 30, 45, 60, 75)}
        assert len({c.output_dir for _, c in runs}) == 18

    def test_h(self):
        runs = sweep_configs(parse_config({"problem": "shear2d"}), "h")
        assert [c.material["h"] for _, c in runs] == [0.05, 0.1, 0.2]

    def test_collocation(self):
        runs = dict(sweep_configs(parse_config({"problem": "bar1d"}), "collocation"))
        assert runs["points_901"].collocation["points"] == 901
        assert runs["nodes_21"].network["nodes"] == 21

    def test_wrong_problem(self):
        with pytest.raises(ConfigError):
            sweep_configs(parse_config({"problem": "bar1d"}), "init")


class TestOutputs:
    def test_summary_row_uses_cohesive_law(self):
        row = summary_row(fake_report(jump=2.0035), BAR)
        assert row["cohesive_energy"] == pytest.approx(-2 / 11 * 2.0035 ** 2 / 2 + 2.0035)
        assert row["cohesive_force"] == pytest.approx(1.0 - 2 / 11 * 2.0035)
        assert row["angle_deg"] == ""

    def test_empty_summary(self, tmp_path):
        path = write_summary([], tmp_path, BAR)
        assert path.read_text() == ",".join(SUMMARY_COLUMNS) + "\n"

    def test_seventeen_digits(self, tmp_path):
        path = write_summary([fake_report(jump=1 / 3)], tmp_path, BAR)
        row = read_summary(path)[0]
        assert float(row["jump"]) == 1 / 3
        assert row["converged"] == "true"

    def test_flagged_step_visible(self, tmp_path):
        rep = fake_report(converged=False, flags=["diverged"])
        iocli.write_step_report(rep, tmp_path, BAR)
        write_summary([rep], tmp_path, BAR)
        data = json.loads((tmp_path / "step_4.5.json").read_text())
        assert data["converged"] is False and data["flags"] == ["diverged"]
        assert main(["report", "--dir", str(tmp_path)]) == 1


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    reports, _ = run_config(parse_config(QUICK), out)
    return reports, out


class TestRun:
    def test_files(self, quick_run):
        reports, out = quick_run
        names = sorted(p.name for p in out.iterdir())
        assert names == ["config.resolved.yaml", "fields_4.5.csv", "step_4.5.json", "summary.csv"]
        header = (out / "fields_4.5.csv").read_text().splitlines()[0]
        assert header == "x,u,eps,eps_p,p,sigma,force"

    def test_byte_identical_rerun(self, quick_run, tmp_path):
        _, out = quick_run
        run_config(parse_config(QUICK), tmp_path)
        assert (tmp_path / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()
        assert (tmp_path / "fields_4.5.csv").read_bytes() == (out / "fields_4.5.csv").read_bytes()

    def test_report_command(self, quick_run, capsys):
        reports, out = quick_run
        code = main(["report", "--dir", str(out)])
        assert code == (0 if reports[0].converged else 1)
        assert "4.5" in capsys.readouterr().out


class TestCli:
    def test_oracle_bar(self, capsys):
        assert main(["oracle", "--problem", "bar1d", "--delta", "5.5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        delta, P, j = (float(v) for v in lines[1].split(",")[:3])
        assert (delta, abs(P)) == (5.5, 0.0) and j == pytest.approx(5.5)

    def test_oracle_shear(self, capsys):
        assert main(["oracle", "--problem", "shear2d", "--delta", "0.55"]) == 0
        tau, j = (float(v) for v in capsys.readouterr().out.splitlines()[1].split(",")[1:3])
        assert (tau, j) == (pytest.approx(0.4), pytest.approx(0.35))

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_bad_config(self, tmp_path, capsys):
        p = write_yaml(tmp_path / "c.yaml", {"problem": "bar1d", "material": {"E": -2.0}})
        assert main(["run", "--config", str(p)]) == 2
        assert "material.E" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["sweep", "--vary", "mesh"]])
    def test_usage_errors(self, argv):
        assert main(argv) == 2

    def test_sweep_dry_run(self, capsys, tmp_path):
        assert main(["sweep", "--vary", "init", "--dry-run", "--output-dir", str(tmp_path)]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 18

    def test_gradcheck(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_run_exit_code_follows_convergence(self, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", dict(QUICK, output_dir=str(tmp_path / "o")))
        code = main(["run", "--config", str(p)])
        rows = read_summary(tmp_path / "o" / "summary.csv")
        assert code == (0 if all(r["converged"] == "true" for r in rows) else 1)
        assert main(["report", "--dir", str(tmp_path / "o")]) == code

    def test_run_flagged_exit_one(self, tmp_path, monkeypatch):
        real = iocli.driver.solve_load_step

        def flagged(*args, **kw):
            rep = real(*args, **kw)
            rep.converged = False
            rep.flags.append("diverged")
            return rep

        monkeypatch.setattr(iocli.driver, "solve_load_step", flagged)
        p = write_yaml(tmp_path / "c.yaml", dict(QUICK, output_dir=str(tmp_path / "o")))
        assert main(["run", "--config", str(p)]) == 1
