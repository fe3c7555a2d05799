from pathlib import Path

import pytest

from lokit.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write(tmp_path, text, name="s.scn"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_demo_runs_clean(tmp_path, capsys):
    snap = tmp_path / "snap.txt"
    code = main(["run", str(SCENARIOS / "demo.scn"), "--check", "--snapshot", str(snap)])
    out, err = capsys.readouterr()
    assert code == 0
    assert out.strip() and "FAIL" not in err
    assert "PASS oracle-equivalence" in err
    lines = [l for l in snap.read_text().splitlines() if not l.startswith("#")]
    # three replicas, converged
    assert len(set(lines)) * 3 == len(lines)


def test_empty_scenario(tmp_path, capsys):
    assert main(["run", write(tmp_path, "# nothing\n")]) == 0
    out, _ = capsys.readouterr()
    assert out == ""


def test_all_suspended_transfer(capsys):
    assert main(["run", str(SCENARIOS / "all_suspended.scn"), "--check"]) == 0
    _, err = capsys.readouterr()
    assert "transfer" in err and "-> aborted" in err and "FAIL" not in err


def test_faults_scenario(capsys):
    assert main(["run", str(SCENARIOS / "faults.scn"), "--check"]) == 0


def test_trace_file_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.trace", tmp_path / "b.trace"
    for path in (a, b):
        assert main(["run", str(SCENARIOS / "faults.scn"), "--trace", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes() and a.stat().st_size > 0
    c = tmp_path / "c.trace"
    main(["run", str(SCENARIOS / "faults.scn"), "--trace", str(c), "--seed", "99"])
    assert c.read_bytes() != a.read_bytes()


def test_parse_error_exit_2(tmp_path, capsys):
    assert main(["run", write(tmp_path, "bank b1 replicas 0\n")]) == 2
    assert main(["run", write(tmp_path, "frobnicate\n")]) == 2
    assert main(["run", str(tmp_path / "missing.scn")]) == 2
    _, err = capsys.readouterr()
    assert "line 1" in err


def test_max_events_exit_1(capsys):
    assert main(["run", str(SCENARIOS / "demo.scn"), "--max-events", "3"]) == 1


def test_invariant_violation_exit_1(tmp_path, monkeypatch, capsys):
    import lokit.cli as cli
    from lokit.checks import CheckResult
    monkeypatch.setattr(cli, "check_system", lambda s, fault_free=False: [CheckResult("x", False)])
    assert main(["run", str(SCENARIOS / "demo.scn"), "--check"]) == 1


def test_snapshot_and_statements_commands(capsys):
    assert main(["snapshot", str(SCENARIOS / "demo.scn")]) == 0
    out, _ = capsys.readouterr()
    assert out.startswith("# replica b1-r1")
    assert main(["statements", str(SCENARIOS / "demo.scn")]) == 0
    out, _ = capsys.readouterr()
    assert " deposit " in out


def test_scenario_grammar(tmp_path):
    from lokit.scenario import parse_scenario
    sc = parse_scenario("""seed 4
delay 1/2 2
bank b1 replicas 2
account b1 a 10
trigger c9 deposit(b1,a,5) at 1.5
suspend b1-r1 at 2
partition c9|b1-r1,b1-r2 at 3
heal at 4
""")
    assert sc.seed == 4 and sc.clients == ["c9"] and not sc.fault_free
    assert [e[1] for e in sc.schedule] == ["trigger", "suspend", "partition", "heal"]
    with pytest.raises(ValueError):
        parse_scenario("bank b1 replicas 1\ntrigger b1-r1 deposit(b1,a,1) at 0\n")
    with pytest.raises(ValueError):
        parse_scenario("suspend ghost at 1\n")
