import json
import subprocess
import sys

import numpy as np
import pytest

from nfsic import __version__
from nfsic.cli import main, read_matrix


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sg_files(tmp_path, capsys):
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    assert main(["gen", "sg", "--n", "300", "--dx", "2", "--dy", "2", "--seed", "1",
                 "--x", str(x), "--y", str(y)]) == 0
    capsys.readouterr()
    return x, y


def test_gen_shapes_and_precision(tmp_path, capsys):
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    code, out, _ = run(["gen", "sg", "--n", "10", "--dx", "3", "--dy", "2",
                        "--x", str(x), "--y", str(y)], capsys)
    assert code == 0
    X, Y = np.loadtxt(x, delimiter=","), np.loadtxt(y, delimiter=",")
    assert X.shape == (10, 3) and Y.shape == (10, 2)
    from nfsic.problems import sample_sg
    np.testing.assert_array_equal(X, sample_sg(10, 3, 2, 0).xs)  # exact round trip
    doc = json.loads(out)
    assert doc["version"] == __version__ and doc["seed"] == 0


def test_gen_byte_identical(tmp_path, capsys):
    paths = []
    for k in range(2):
        x, y = tmp_path / f"x{k}.csv", tmp_path / f"y{k}.csv"
        run(["gen", "sin", "--omega", "2", "--n", "50", "--seed", "4", "--x", str(x), "--y", str(y)],
            capsys)
        paths.append((x.read_bytes(), y.read_bytes()))
    assert paths[0] == paths[1]


def test_test_json_schema(sg_files, capsys):
    x, y = sg_files
    code, out, err = run(["test", "--x", str(x), "--y", str(y), "--seed", "3"], capsys)
    assert code == 0
    doc = json.loads(out)
    res = doc["result"]
    for key in ("method", "n", "dx", "dy", "J", "alpha", "statistic", "threshold",
                "p_value", "reject", "threshold_method"):
        assert key in res
    assert isinstance(res["reject"], bool) and 0 <= res["p_value"] <= 1
    assert res["n"] == 300 and res["J"] == 10
    assert "--threshold permutation" in err  # small-n hint


def test_test_optimize_reports_tuned(sg_files, capsys):
    x, y = sg_files
    code, out, _ = run(["test", "--x", str(x), "--y", str(y), "--optimize", "--j", "3"], capsys)
    tuned = json.loads(out)["result"]["tuned"]
    assert code == 0 and set(tuned) == {"sigma2_x", "sigma2_y", "locations"}
    assert len(tuned["locations"]["v"]) == 3


def test_test_csv_and_qhsic(sg_files, capsys):
    x, y = sg_files
    code, out, _ = run(["test", "--x", str(x), "--y", str(y), "--method", "qhsic",
                        "--perms", "30", "--output", "csv"], capsys)
    assert code == 0
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert lines[0].startswith("method,n,dx,dy,J,alpha,statistic")
    assert lines[1].startswith("qhsic,300,2,2,")


def test_row_count_mismatch(tmp_path, capsys):
    np.savetxt(tmp_path / "x.csv", np.ones((100, 1)), delimiter=",")
    np.savetxt(tmp_path / "y.csv", np.ones((99, 1)), delimiter=",")
    code, _, err = run(["test", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv")],
                       capsys)
    assert code != 0 and "100" in err and "99" in err


@pytest.mark.parametrize("content,needle", [
    ("1,2\n3\n", "row 2 has 1 columns"),
    ("1,2\n3,nan\n", "row 2, column 2"),
    ("1,2\n3,abc\n", "row 2, column 2"),
    ("1,inf\n", "row 1, column 2"),
    ("", "no data"),
])
def test_bad_csv_diagnostics(tmp_path, capsys, content, needle):
    f = tmp_path / "bad.csv"
    f.write_text(content)
    code, _, err = run(["test", "--x", str(f), "--y", str(f)], capsys)
    assert code != 0 and needle in err


def test_missing_file(tmp_path, capsys):
    code, _, err = run(["test", "--x", str(tmp_path / "nope.csv"), "--y", str(tmp_path / "nope.csv")],
                       capsys)
    assert code == 1 and "nope.csv" in err


def test_skip_header(tmp_path):
    f = tmp_path / "h.csv"
    f.write_text("a,b\n1,2\n3,4\n")
    np.testing.assert_array_equal(read_matrix(str(f), skip_header=True), [[1, 2], [3, 4]])


def test_unknown_flag_and_bad_values(capsys):
    with pytest.raises(SystemExit) as e:
        main(["test", "--x", "a", "--y", "b", "--bogus"])
    assert e.value.code != 0
    with pytest.raises(SystemExit):
        main(["test", "--x", "a", "--y", "b", "--alpha", "1.5"])
    with pytest.raises(SystemExit):
        main(["null-sim", "--threshold", "exact"])


def test_null_sim_table_and_config_echo(capsys):
    argv = ["null-sim", "--dx", "2", "--dy", "2", "--n", "200", "--trials", "3", "--j", "2",
            "--workers", "1"]
    code, out, _ = run(argv, capsys)
    assert code == 0
    lines = out.splitlines()
    config = json.loads(lines[1][len("# config: "):])
    assert config["argv"] == argv and config["config"]["trials"] == 3
    assert lines[2] == "grid_value,trials,rejections,rate,mean_runtime_ms"
    assert lines[3].startswith("200,3,") and lines[3].endswith(",")


def test_null_sim_refuses_dependent_problem(capsys):
    code, _, err = run(["null-sim", "--problem", "sin", "--trials", "1"], capsys)
    assert code == 1 and "independence" in err


def test_power_omega_grid_json(capsys):
    code, out, _ = run(["power", "--problem", "sin", "--grid", "1,2,3", "--grid-param", "omega",
                        "--n", "150", "--trials", "2", "--j", "2", "--optimize", "--workers", "1",
                        "--output", "json", "--timing"], capsys)
    assert code == 0
    table = json.loads(out)["table"]
    assert [r["grid_value"] for r in table] == [1.0, 2.0, 3.0]
    assert all(0 <= r["rate"] <= 1 and r["mean_runtime_ms"] > 0 for r in table)


def test_sweep_j(capsys):
    code, out, _ = run(["sweep-j", "--n", "150", "--trials", "2", "--j-grid", "1,3",
                        "--workers", "1"], capsys)
    assert code == 0
    rows = [l for l in out.splitlines() if not l.startswith("#")]
    assert len(rows) == 3 and rows[1].startswith("1,2,")


def test_witness_grid(tmp_path, capsys):
    x, y = tmp_path / "x.csv", tmp_path / "y.csv"
    run(["gen", "neglinear", "--n", "1000", "--x", str(x), "--y", str(y)], capsys)
    out_path = tmp_path / "w.csv"
    code, _, _ = run(["witness", "--x", str(x), "--y", str(y), "--out", str(out_path)], capsys)
    assert code == 0
    lines = [l for l in out_path.read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "v,w,mu_xy_hat,mu_x_mu_y_hat,sigma_hat,lambda_hat"
    data = np.array([[float(c) for c in l.split(",")] for l in lines[1:]])
    assert data.shape == (2500, 6)
    assert np.all(data[:, 5] >= 0)
    assert data[:, 5].max() > 3.841458820694124
    code, _, _ = run(["witness", "--x", str(x), "--y", str(y), "--grid-size", "4", "7"], capsys)
    assert code == 0


def test_witness_requires_1d(sg_files, capsys):
    x, y = sg_files
    code, _, err = run(["witness", "--x", str(x), "--y", str(y)], capsys)
    assert code == 1 and "one-column" in err


def test_module_entry_point(sg_files):
    x, y = sg_files
    proc = subprocess.run([sys.executable, "-m", "nfsic", "test", "--x", str(x), "--y", str(y),
                           "--threshold", "permutation", "--perms", "20"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["threshold_method"] == "permutation"


def test_gamma_default_depends_on_pipeline(sg_files, capsys):
    x, y = sg_files
    _, out, _ = run(["test", "--x", str(x), "--y", str(y), "--optimize", "--j", "2"], capsys)
    assert json.loads(out)["config"]["gamma"] == 1e-4
    _, out, _ = run(["test", "--x", str(x), "--y", str(y)], capsys)
    assert json.loads(out)["config"]["gamma"] == 1e-8
    _, out, _ = run(["test", "--x", str(x), "--y", str(y), "--optimize", "--gamma", "0.01"], capsys)
    assert json.loads(out)["config"]["gamma"] == 0.01
