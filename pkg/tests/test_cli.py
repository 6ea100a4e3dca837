import json
import re
import shlex
import subprocess
import sys
from pathlib import Path

import pytest

from d4prep.cli import main
from d4prep.errors import EXIT_CODES

README = Path(__file__).resolve().parents[1] / "README.md"


def readme_examples():
    """(command line, expected exit code) for every d4prep line in sh blocks."""
    text = README.read_text()
    out = []
    for block in re.findall(r"```sh\n(.*?)```", text, re.S):
        for line in block.splitlines():
            line = line.strip()
            if not line.startswith("d4prep "):
                continue
            m = re.search(r"#\s*exit\s+(\d+)\s*$", line)
            code = int(m.group(1)) if m else 0
            out.append((line.split("#")[0].strip(), code))
    return out


EXAMPLES = readme_examples()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("readme")


def test_readme_has_examples():
    cmds = {shlex.split(c)[1] for c, _ in EXAMPLES}
    assert {"prepare", "verify", "depth", "entropy", "tee", "shift", "anyons", "lattice"} <= cmds


@pytest.mark.parametrize("line,code", EXAMPLES, ids=[c for c, _ in EXAMPLES])
def test_readme_example(workdir, line, code):
    # examples run in README order and share one directory (verify reads prepare's files)
    argv = shlex.split(line)[1:]
    proc = subprocess.run([sys.executable, "-m", "d4prep.cli", *argv], cwd=workdir,
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == code, proc.stderr
    if code == 0 and argv[0] != "entropy":
        json.loads(proc.stdout)
    if code:
        err = json.loads(proc.stderr)
        assert err["exit_code"] == code and EXIT_CODES[err["error"]] == code


def test_readme_replay_gives_same_state(workdir):
    # runs after the examples above have written s.bin and s2.bin
    assert (workdir / "s.bin").read_bytes() == (workdir / "s2.bin").read_bytes()


def test_readme_exit_table_matches_errors():
    rows = dict(re.findall(r"^\| (\d+) \| `(\w+)` \|", README.read_text(), re.M))
    assert {name: int(code) for code, name in rows.items()} == EXIT_CODES


def _prepare(tmp_path, tag, *extra):
    rec = tmp_path / f"{tag}.json"
    st = tmp_path / f"{tag}.bin"
    assert main(["prepare", "--seed", "5", "--out-record", str(rec), "--out-state", str(st), *extra]) == 0
    return rec, st


def test_records_identical_across_threads(tmp_path, capsys):
    r1, s1 = _prepare(tmp_path, "t1", "--threads", "1")
    r4, s4 = _prepare(tmp_path, "t4", "--threads", "4")
    assert r1.read_bytes() == r4.read_bytes()
    assert s1.read_bytes() == s4.read_bytes()


def test_config_then_flags(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"protocol": "toric", "l1": 3, "seed": 4}))
    assert main(["depth", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["protocol"] == "toric" and out["n_qubits"] == 18
    assert main(["prepare", "--config", str(cfg), "--l1", "2", "--verify"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["l1"] == 2 and out["seed"] == 4 and out["verify"]["ok"]


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["depth", "--config", str(cfg)]) == 2
    assert main(["prepare", "--policy", "forced"]) == 2
    assert main(["depth", "--config", str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(json.loads(e)["error"] == "ConfigError" for e in err)


def test_verify_missing_outcome(tmp_path, capsys):
    rec, st = _prepare(tmp_path, "m")
    data = json.loads(rec.read_text())
    del data["outcomes"]["p0"]
    rec.write_text(json.dumps(data))
    capsys.readouterr()
    assert main(["verify", "--state", str(st), "--record", str(rec)]) == 30
    out = json.loads(capsys.readouterr().out)
    assert out == {"ok": False, "error": "MissingOutcome", "detail": out["detail"]}


def test_verify_detects_wrong_record(tmp_path, capsys):
    rec, st = _prepare(tmp_path, "w")
    data = json.loads(rec.read_text())
    data["outcomes"]["p0"] *= -1
    rec.write_text(json.dumps(data))
    capsys.readouterr()
    assert main(["verify", "--state", str(st), "--record", str(rec), "--rows"]) == 1
    out = json.loads(capsys.readouterr().out)
    assert not out["ok"] and len(out["rows"]) == 12


def test_too_small(capsys):
    assert main(["lattice", "dump", "--l1", "1", "--l2", "2"]) == 10
