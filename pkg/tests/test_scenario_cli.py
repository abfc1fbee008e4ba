import json
import re
import subprocess
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from qsc.cli import main
from qsc.scenario import observed_order

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def scenario(tmp_path, body, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body) if not isinstance(body, str) else body)
    return str(p)


def base(**kw):
    s = {"name": "t", "seed": 3, "grid": {"horizon": 1.0, "n_cells": 3, "d": 1, "dim_h": 1},
         "generator": {"zero": {}}, "tasks": [{"name": "e", "type": "evolve"}]}
    s.update(kw)
    return s


def cmat(M):
    M = np.asarray(M, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def read_rows(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    head = lines[0].split(",")
    return head, [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def test_observed_order():
    assert observed_order([4, 8, 16], [0.0, 1e-14, 0.0], 1e-12) == "exact"
    assert observed_order([4, 8, 16], [1.0, 0.5, 0.25], 1e-12) == pytest.approx(1.0)
    assert np.isnan(observed_order([4, 8], [1.0, 0.0], 1e-12))


def test_run_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["run", str(SCEN / "zero.json"), "--out", str(out), "--seed", "11"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1] and outs[0]


def test_console_script_matches_module(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    file = str(SCEN / "structure.json")
    r = subprocess.run([sys.executable, "-m", "qsc.cli", "run", file, "--out", str(a)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert main(["run", file, "--out", str(b)]) == 0
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_seed_changes_random_parts_only(tmp_path):
    body = base(tasks=[{"name": "c", "type": "converge", "n_list": [2, 4], "metrics": ["multiplicativity"]}])
    f = scenario(tmp_path, body)
    main(["run", f, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", f, "--out", str(tmp_path / "b"), "--seed", "2"])
    ta, tb = (tmp_path / "a" / "c.csv").read_text(), (tmp_path / "b" / "c.csv").read_text()
    assert "# seed=1" in ta and "# seed=2" in tb
    assert "# seed_sequence=[1, 0]" in ta
    assert read_rows(tmp_path / "a" / "c.csv")[1] != read_rows(tmp_path / "b" / "c.csv")[1]


def test_header_echoes_defaults(tmp_path):
    f = scenario(tmp_path, base())
    assert main(["run", f, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "e.csv").read_text()
    for key in ("prng=PCG64", "param.compare_euler=true", "param.max_quanta=2", "grid.cap_bits=22", "generator=zero"):
        assert f"# {key}" in text


def test_parse_error(tmp_path, capsys):
    f = scenario(tmp_path, '{"name": "x",\n "grid": {,}}')
    assert main(["run", f]) == 2
    err = capsys.readouterr().err
    assert "parse error" in err and re.search(r"line 2", err)


def test_validation_error_names_field(tmp_path, capsys):
    body = base(grid={"horizon": 1.0, "n_cells": 3, "d": 1, "dim_h": 2},
                generator={"hp": {"W": cmat(np.eye(3)), "L": cmat(np.zeros((2, 2))), "H": cmat(np.eye(2))}})
    f = scenario(tmp_path, json.dumps(body, indent=1))
    assert main(["run", f]) == 3
    err = capsys.readouterr().err
    assert "generator.hp.W" in err and "shape 3x3, expected 2x2" in err and re.search(r"line \d+", err)


@pytest.mark.parametrize("mutate,needle", [
    (lambda s: s["grid"].update(n_cells=0), "grid.n_cells"),
    (lambda s: s["tasks"][0].update(type="nope"), "tasks[0].type"),
    (lambda s: s["tasks"][0].update(assert_={"x": 1}), "tasks[0]"),
    (lambda s: s["tasks"].append({"name": "e", "type": "evolve"}), "tasks[1].name"),
    (lambda s: s.update(generator={"hp": {}, "zero": {}}), "generator"),
])
def test_validation_errors(tmp_path, capsys, mutate, needle):
    body = base()
    mutate(body)
    text = json.dumps(body).replace("assert_", "bogus")
    assert main(["run", scenario(tmp_path, text)]) == 3
    assert needle in capsys.readouterr().err


def test_cap_exceeded(tmp_path, capsys):
    f = scenario(tmp_path, base(grid={"horizon": 1.0, "n_cells": 30, "d": 1, "dim_h": 1}))
    assert main(["run", f, "--cap", "10"]) == 3
    assert "cap" in capsys.readouterr().err


def test_tolerance_failure_and_check(tmp_path, capsys):
    W = np.diag(np.exp(1j * np.array([0.3, -0.2])))
    body = base(grid={"horizon": 1.0, "n_cells": 4, "d": 1, "dim_h": 2},
                generator={"hp": {"W": cmat(W), "L": cmat(0.3 * np.ones((2, 2))), "H": cmat(np.diag([0.5, -0.4]))}},
                tasks=[{"name": "ok", "type": "unitarity", "assert": {"unitarity_defect": 1.0}},
                       {"name": "bad", "type": "evolve", "assert": {"euler_defect": 1e-15}}])
    f = scenario(tmp_path, body)
    assert main(["run", f, "--out", str(tmp_path / "o")]) == 1
    cap = capsys.readouterr()
    assert "FAIL bad" in cap.out and "ok   ok" in cap.out and "euler_defect" in cap.err
    assert main(["check", f, "--task", "ok", "--out", str(tmp_path / "p")]) == 0
    assert [p.name for p in (tmp_path / "p").iterdir()] == ["ok.csv"]
    assert main(["check", f, "--task", "missing"]) == 3


def test_commuting_diagonal_table_is_exact(tmp_path):
    L00 = np.diag(np.exp(1j * np.array([0.4, -0.7]))) - np.eye(2)
    body = base(grid={"horizon": 1.0, "n_cells": 4, "d": 1, "dim_h": 2}, generator={"table": {"L00": cmat(L00)}},
                tasks=[{"name": "c", "type": "converge", "metrics": ["unitarity", "ito", "flow_homomorphism"]}])
    assert main(["run", scenario(tmp_path, body), "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "c.csv")
    assert all(r["observed_order"] == "exact" for r in rows)


def test_converge_subcommand_overrides_cells(tmp_path):
    f = scenario(tmp_path, base())
    assert main(["converge", f, "--n", "2,3", "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "converge.csv")
    assert [r["n"] for r in rows] == ["2", "3"]
    with pytest.raises(SystemExit):
        main(["converge", f, "--n", "4"])


def test_columns_follow_schema(tmp_path):
    schema = json.loads(resources.files("qsc").joinpath("data/csv_schema.json").read_text())
    W = np.diag(np.exp(1j * np.array([0.3])))
    body = base(generator={"hp": {"W": cmat(W), "L": cmat([[0.3]]), "H": cmat([[0.2]])}},
                tasks=[{"name": t, "type": t} for t in ("evolve", "unitarity", "ito-check", "flow")]
                + [{"name": "bounds", "type": "bounds", "trials": 2}])
    assert main(["run", scenario(tmp_path, body), "--out", str(tmp_path)]) == 0
    for t in ("evolve", "unitarity", "ito-check", "flow", "bounds"):
        head, _ = read_rows(tmp_path / f"{t}.csv")
        assert head == list(schema["tasks"][t]["columns"]), t
