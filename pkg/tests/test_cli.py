"""Command-line behavior: session generation, replay verification, scoring,
cohort synthesis naming/determinism, and report emission, all in-process."""

import json
import os
from dataclasses import replace

import pytest

from vcoach.cli import main
from vcoach.metrics import METRIC_NAMES
from vcoach.session import load_session, read_summary
from vcoach.task_core import default_task_config


@pytest.fixture(scope="module")
def fast_config_path(tmp_path_factory):
    """Single-pair task at a low tick rate: cheap to generate, same format."""
    config = replace(default_task_config(), n_pairs=1, tick_rate=25.0)
    path = tmp_path_factory.mktemp("config") / "task.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def expert_session(tmp_path_factory, fast_config_path):
    path = str(tmp_path_factory.mktemp("runs") / "expert.vcs")
    rc = main(
        ["run", "--config", fast_config_path, "--profile", "expert", "--seed", "3", "--out", path]
    )
    assert rc == 0
    return path


class TestRun:
    def test_prints_output_path(self, fast_config_path, tmp_path, capsys):
        out = str(tmp_path / "one.vcs")
        rc = main(["run", "--config", fast_config_path, "--seed", "5", "--out", out])
        assert rc == 0
        assert capsys.readouterr().out.strip() == out
        assert os.path.exists(out)

    def test_json_output(self, fast_config_path, tmp_path, capsys):
        out = str(tmp_path / "s.vcs")
        rc = main(
            [
                "run",
                "--config",
                fast_config_path,
                "--profile",
                "expert",
                "--seed",
                "4",
                "--mode",
                "teach",
                "--out",
                out,
                "--json",
            ]
        )
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["path"] == out
        assert payload["ticks"] > 0
        assert set(payload["metrics"]) == set(METRIC_NAMES)
        record = load_session(out)
        assert record.mode == "teach"
        assert record.footer == payload["metrics"]

    def test_default_participant_and_config(self, fast_config_path, tmp_path):
        out = str(tmp_path / "p.vcs")
        assert main(["run", "--config", fast_config_path, "--out", out]) == 0
        header, _ = read_summary(out)
        assert header["config"]["n_pairs"] == 1
        assert header["mode"] == "none"

    def test_missing_config_fails(self, tmp_path, capsys):
        rc = main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "config file not found" in capsys.readouterr().err

    def test_invalid_config_fails(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"n_pairs\": 0}", encoding="utf-8")
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "invalid config" in capsys.readouterr().err


class TestReplay:
    def test_intact_session_passes(self, expert_session, capsys):
        rc = main(["replay", expert_session])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("PASS ") and "ticks" in out

    def test_tampered_footer_fails(self, expert_session, tmp_path, capsys):
        lines = open(expert_session, encoding="utf-8").read().splitlines()
        tail = json.loads(lines[-1])
        tail["footer"]["Completion Time (s)"] += 1.0
        lines[-1] = json.dumps(tail, sort_keys=True, separators=(",", ":"))
        tampered = tmp_path / "tampered.vcs"
        tampered.write_text("\n".join(lines) + "\n", encoding="utf-8")
        rc = main(["replay", str(tampered)])
        assert rc == 1
        assert capsys.readouterr().out.startswith("FAIL ")

    def test_json_output(self, expert_session, capsys):
        assert main(["replay", expert_session, "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["match"] is True and payload["ticks"] > 0

    def test_missing_file_is_an_error(self, tmp_path, capsys):
        rc = main(["replay", str(tmp_path / "missing.vcs")])
        assert rc == 1
        assert "vcoach:" in capsys.readouterr().err


class TestScore:
    def test_prints_every_metric_row(self, expert_session, capsys):
        assert main(["score", expert_session]) == 0
        out = capsys.readouterr().out
        for name in METRIC_NAMES:
            assert name in out

    def test_json_matches_footer(self, expert_session, capsys):
        assert main(["score", expert_session, "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload == load_session(expert_session).footer


class TestSynth:
    def test_single_sessions_named_by_arm_prefix(self, fast_config_path, tmp_path, capsys):
        out = str(tmp_path / "ctrl")
        rc = main(
            [
                "synth",
                "--config",
                fast_config_path,
                "--n",
                "2",
                "--seed",
                "11",
                "--arm",
                "control",
                "--out",
                out,
            ]
        )
        assert rc == 0
        assert sorted(os.listdir(out)) == ["C01__baseline.vcs", "C02__baseline.vcs"]
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed == [os.path.join(out, n) for n in sorted(os.listdir(out))]

    def test_study_plan_writes_five_repetitions(self, fast_config_path, tmp_path):
        out = str(tmp_path / "exp")
        rc = main(
            [
                "synth",
                "--config",
                fast_config_path,
                "--n",
                "1",
                "--seed",
                "21",
                "--arm",
                "experimental",
                "--plan",
                "study",
                "--out",
                out,
            ]
        )
        assert rc == 0
        assert sorted(os.listdir(out)) == [
            "E01__baseline.vcs",
            "E01__final.vcs",
            "E01__rep2.vcs",
            "E01__rep3.vcs",
            "E01__rep4.vcs",
        ]
        # The study plan coaches the middle repetitions only.
        modes = {
            name: read_summary(os.path.join(out, name))[0]["mode"]
            for name in os.listdir(out)
        }
        assert modes["E01__baseline.vcs"] == "none"
        assert modes["E01__rep2.vcs"] == "teach"
        assert modes["E01__rep3.vcs"] == "metrics"
        assert modes["E01__rep4.vcs"] == "user"
        assert modes["E01__final.vcs"] == "none"

    def test_generation_is_deterministic(self, fast_config_path, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert (
                main(
                    [
                        "synth",
                        "--config",
                        fast_config_path,
                        "--n",
                        "1",
                        "--seed",
                        "31",
                        "--out",
                        out,
                    ]
                )
                == 0
            )
            outs.append(out)
        a = open(os.path.join(outs[0], "C01__baseline.vcs"), encoding="utf-8").read()
        b = open(os.path.join(outs[1], "C01__baseline.vcs"), encoding="utf-8").read()
        assert a == b

    def test_unknown_plan_is_a_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--plan", "osmosis", "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


@pytest.fixture(scope="module")
def cohort_dirs(tmp_path_factory, fast_config_path):
    """Two tiny arms, enough for the report plumbing (3 participants each)."""
    root = tmp_path_factory.mktemp("cohort")
    exp, ctl = str(root / "exp"), str(root / "ctl")
    for arm, seed, out in (("experimental", 41, exp), ("control", 61, ctl)):
        rc = main(
            [
                "synth",
                "--config",
                fast_config_path,
                "--n",
                "3",
                "--seed",
                str(seed),
                "--arm",
                arm,
                "--plan",
                "study" if arm == "experimental" else "none",
                "--out",
                out,
            ]
        )
        assert rc == 0
    return exp, ctl


class TestReport:
    def test_table_on_stdout(self, cohort_dirs, capsys):
        exp, ctl = cohort_dirs
        rc = main(["report", "--arm-a", exp, "--arm-b", ctl])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("Metric")
        assert "Experimental (N=3)" in lines[0] and "Control (N=3)" in lines[0]
        assert len(lines) == 2 + len(METRIC_NAMES)

    def test_json_and_grid_outputs(self, cohort_dirs, tmp_path, capsys):
        exp, ctl = cohort_dirs
        grid = str(tmp_path / "grid.csv")
        table = str(tmp_path / "table.json")
        rc = main(
            ["report", "--arm-a", exp, "--arm-b", ctl, "--json", "--grid", grid, "--out", table]
        )
        assert rc == 0
        assert capsys.readouterr().out == ""
        payload = json.loads(open(table, encoding="utf-8").read())
        assert len(payload["rows"]) == 15
        assert len(payload["grid"]) == 60
        csv_lines = open(grid, encoding="utf-8").read().strip().splitlines()
        assert csv_lines[0] == "metric,repetition,cohens_d,p_value,significant"
        assert len(csv_lines) == 1 + 60

    def test_label_selects_repetition(self, cohort_dirs, capsys):
        exp, ctl = cohort_dirs
        rc = main(["report", "--arm-a", exp, "--arm-b", ctl, "--label", "rep3", "--json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["repetition"] == "rep3"

    def test_empty_directory_is_an_error(self, cohort_dirs, tmp_path, capsys):
        exp, _ = cohort_dirs
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = main(["report", "--arm-a", exp, "--arm-b", str(empty)])
        assert rc == 1
        assert "no .vcs sessions" in capsys.readouterr().err

    def test_unknown_command_is_a_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2


class TestServe:
    def test_wires_store_and_token_into_the_app(self, tmp_path, monkeypatch):
        import uvicorn

        import vcoach.service as service

        seen = {}

        def fake_build_app(config=None, data_dir="sessions", clip_dir=None, token=None):
            seen.update(data_dir=data_dir, clip_dir=clip_dir, token=token)
            return "app-sentinel"

        monkeypatch.setattr(service, "build_app", fake_build_app)
        monkeypatch.setattr(
            uvicorn, "run", lambda app, **kw: seen.update(app=app, port=kw["port"])
        )
        rc = main(
            ["serve", "--data-dir", str(tmp_path), "--token", "tok", "--port", "9909"]
        )
        assert rc == 0
        assert seen == {
            "data_dir": str(tmp_path),
            "clip_dir": None,
            "token": "tok",
            "app": "app-sentinel",
            "port": 9909,
        }
