import json

import numpy as np
import pytest

from hmmduality.cli import dumps, main

ERGODIC = {
    "d": 2,
    "m": 1,
    "A": [[-1.0, 1.0], [1.0, -1.0]],
    "H": [[1.0], [-1.0]],
    "priors": {"left": [1.0, 0.0], "flat": [0.5, 0.5]},
}
BLOCK = {
    "d": 4,
    "m": 1,
    "A": [[-1, 1, 0, 0], [1, -1, 0, 0], [0, 0, -2, 2], [0, 0, 1, -1]],
    "H": [[0], [0], [0], [0]],
    "priors": {"first": [0.5, 0.5, 0, 0], "flat": [0.25, 0.25, 0.25, 0.25]},
}
AZERO = {"d": 2, "m": 1, "A": [[0, 0], [0, 0]], "H": [[1], [-1]], "priors": {"flat": [0.5, 0.5]}}


@pytest.fixture
def write(tmp_path):
    def _write(data, name="model.json"):
        p = tmp_path / name
        p.write_text(data if isinstance(data, str) else json.dumps(data))
        return str(p)

    return _write


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_analyze_ergodic(write, capsys):
    code, rep, _ = run(capsys, "analyze", write(ERGODIC))
    assert code == 0
    assert rep["observable"] and rep["stabilizable"] and rep["detectable"]
    assert rep["dim_C"] == rep["dim_O"] == 2 and rep["injective_H"]
    assert rep["schema_version"] == 1 and len(rep["model_sha256"]) == 64


def test_analyze_block(write, capsys):
    code, rep, _ = run(capsys, "analyze", write(BLOCK))
    assert code == 0 and not rep["observable"] and not rep["stabilizable"]
    assert rep["ergodic_classes"] == [[1, 2], [3, 4]]


def test_malformed_file(write, capsys):
    code, rep, err = run(capsys, "analyze", write("{oops"))
    assert code == 2 and rep is None and "error" in err
    bad = dict(ERGODIC, A=[[-1.0, 1.0], [0.5, 0.0]])
    assert run(capsys, "analyze", write(bad))[0] == 2
    assert run(capsys, "analyze", "/nonexistent/model.json")[0] == 2


def test_gramian(write, capsys, tmp_path):
    csv = tmp_path / "sv.csv"
    code, rep, _ = run(capsys, "gramian", write(AZERO), "--paths", 2000, "--dt", 0.01, "--csv", csv)
    assert code == 0 and rep["rank"] == 2
    np.testing.assert_allclose(rep["W"], [[np.e, 1 / np.e], [1 / np.e, np.e]], rtol=0.1)
    assert csv.read_text().startswith("index,singular_value")
    assert "max_entry_vs_scheme_expectation" in rep["z_scores"]


def test_gramian_H_zero_and_inconclusive(write, capsys):
    code, rep, _ = run(capsys, "gramian", write(BLOCK), "--paths", 20, "--dt", 0.1)
    assert code == 0 and rep["rank"] == 1
    m = {"d": 3, "m": 1, "A": [[-1, 1, 0], [0.5, -1, 0.5], [0, 2, -2]], "H": [[0], [0.2], [0.4]]}
    code, rep, _ = run(capsys, "gramian", write(m), "--paths", 10, "--dt", 0.1)
    assert code == 0 and rep["rank"] in ("inconclusive", 1, 2, 3)


def test_duality(write, capsys):
    code, rep, err = run(capsys, "duality", write(ERGODIC), "--prior", "left", "--control", "zero", "--c", 0.5,
                         "--paths", 100, "--dt", 0.01)
    assert code == 0 and rep["lhs"] == pytest.approx(0.5) and rep["z_score"] < 1e-6
    assert "z =" in err
    code, rep, _ = run(capsys, "duality", write(BLOCK), "--prior", "first", "--control", "tanh_of_Z", "--c", 2.0,
                       "--paths", 50, "--dt", 0.1)
    assert rep["lhs"] == pytest.approx(2.0) and rep["rhs"] == pytest.approx(2.0)


def test_duality_unknown_control(write, capsys):
    assert run(capsys, "duality", write(ERGODIC), "--prior", "left", "--control", "nope")[0] == 2
    assert run(capsys, "duality", write(ERGODIC), "--prior", "missing")[0] == 2


def test_duality_table_control(write, capsys, tmp_path):
    table = tmp_path / "u.csv"
    table.write_text("t,u_1\n0,0\n0.5,1\n1,0\n")
    code, rep, _ = run(capsys, "duality", write(ERGODIC), "--prior", "flat", "--control", f"table:{table}",
                       "--paths", 200, "--dt", 0.01, "--independent")
    assert code == 0 and rep["control"] == "table" and rep["common_paths"] is False
    table.write_text("t,u_1\n0,0\n0.5,1\n")
    assert run(capsys, "duality", write(ERGODIC), "--prior", "flat", "--control", f"table:{table}")[0] == 2


def test_filter(write, capsys, tmp_path):
    csv = tmp_path / "tv.csv"
    code, rep, _ = run(capsys, "filter", write(ERGODIC), "--mu", "left", "--nu", "flat", "--paths", 30,
                       "--T", 2, "--dt", 0.01, "--csv", csv)
    assert code == 0 and rep["initial_tv"] == 1.0
    assert rep["tv_convention"] == "sum_i |p_i - q_i|"
    assert rep["cfg"]["measure"] == "prior"
    assert csv.read_text().splitlines()[0] == "t,mean_tv,stderr"
    assert run(capsys, "filter", write(BLOCK), "--mu", "flat", "--nu", "first", "--paths", 5)[0] == 2


def test_entropy(write, capsys):
    code, rep, _ = run(capsys, "entropy", write(ERGODIC), "--mu", "flat", "--nu", "flat", "--paths", 10)
    assert code == 0 and rep["kl"] == 0 and rep["stderr"] == 0
    assert {"kl", "stderr", "T", "n_paths"} <= set(rep)


def test_lg_accepts_non_generator(write, capsys):
    m = {"d": 2, "m": 1, "A": [[0.0, 1.0], [0.0, 0.0]], "H": [[0.0], [1.0]]}
    code, rep, _ = run(capsys, "lg", write(m))
    assert code == 0 and rep["pairing_error"] < 1e-8 and rep["rank_L"] == 2 and rep["angle"] == 0


def test_byte_identical_reports(write, capsys, tmp_path, monkeypatch):
    path = write(ERGODIC)
    outs = []
    for workers in ("1", "2"):
        monkeypatch.setenv("HMMDUAL_WORKERS", workers)
        out = tmp_path / f"r{workers}.json"
        assert main(["gramian", path, "--paths", "1100", "--dt", "0.05", "--seed", "3", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_dumps_format():
    text = dumps({"b": 0.1, "a": [1, np.float64(np.nan), True, None], "s": "x"})
    assert text == '{"b": 0.10000000000000001, "a": [1, null, true, null], "s": "x"}\n'
    assert json.loads(text)["b"] == 0.1


def test_bad_worker_env(write, capsys, monkeypatch):
    monkeypatch.setenv("HMMDUAL_WORKERS", "zero")
    assert main(["gramian", write(ERGODIC), "--paths", "5", "--dt", "0.5"]) == 2
    assert "HMMDUAL_WORKERS" in capsys.readouterr().err
