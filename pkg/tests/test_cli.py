import csv
import json

import pytest

from toric_clt import _kernels
from toric_clt.cli import emit_plot_data, main
from toric_clt.limits import fit_rate


@pytest.fixture(autouse=True)
def reset_threads():
    yield
    _kernels.set_threads(None)


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


FS1 = """
[potential]
name = fs
dim = 1
[run]
ks = 25, 50, 100, 200, 400
base_points = 0
"""


def test_lattice_fs2_level_two(tmp_path):
    cfg = write(tmp_path, "[potential]\nname = fs\ndim = 2\n[run]\nks = 2\n")
    assert main(["lattice", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.reader((tmp_path / "o" / "lattice_k2.csv").open()))
    assert rows[0] == ["alpha_0", "alpha_1"] and len(rows) - 1 == 6


def test_lattice_custom_polytope(tmp_path):
    cfg = write(tmp_path, "[run]\nks = 1, 2\n[polytope]\nrows = 1 0 0; 0 1 0; -1 0 -1; 0 -1 -1\n")
    assert main(["lattice", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "lattice.json").read_text())
    assert summary[0]["counts"] == [4, 9]


def test_clt_fs1_origin_report(tmp_path, capsys):
    cfg = write(tmp_path, FS1)
    code = main(["clt", "--config", str(cfg), "--out", str(tmp_path / "o")])
    reports = json.loads((tmp_path / "o" / "clt.json").read_text())
    assert code == 0
    assert capsys.readouterr().out.strip() == "PASS clt (9/9 reports)"
    keys = {"experiment", "potential", "z_rho", "ks", "errors", "slope", "r2", "pass"}
    for rep in reports:
        assert keys <= set(rep) and rep["pass"] and rep["z_rho"] == [0.0]
    # Berry-Esseen order for the default bump
    assert reports[0]["slope"] == pytest.approx(-0.5, abs=0.15)


def test_decreasing_k_list_is_a_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nks = 50, 25, 100, 200\n")
    assert main(["clt", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "run.ks" in capsys.readouterr().err


@pytest.mark.parametrize("text, field", [
    ("[potential]\nname = nope\n", "potential.name"),
    ("[potential]\nname = fs\ndim = 0\n", "potential.dim"),
    ("[potential]\nname = fs-perturbed\neps = 10\n", "potential.eps"),
    ("[run]\nks = 1, 2, 3\n", "run.ks"),
    ("[run]\nbase_points = 0, 0\n", "run.base_points"),
    ("[run]\nlaplace_point = 1.5\n", "run.laplace_point"),
    ("[quadrature]\nnodes_per_axis = 3\n", "quadrature.nodes_per_axis"),
    ("[bands]\nllt_slope = -0.5, -1\n", "bands.llt_slope"),
    ("[bands]\nnonsense = 1\n", "bands.nonsense"),
    ("[extra]\na = 1\n", "[extra]"),
])
def test_config_errors_name_the_field(tmp_path, capsys, text, field):
    cfg = write(tmp_path, text)
    assert main(["llt", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["lattice", "--config", str(tmp_path / "absent.ini")]) == 2


def test_flipping_a_band_flips_the_exit_status(tmp_path):
    cfg = write(tmp_path, FS1 + "[bands]\nllt_slope = -1.25, -0.75\n")
    assert main(["llt", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    cfg = write(tmp_path, FS1 + "[bands]\nllt_slope = -0.6, -0.4\n")
    assert main(["llt", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 1


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nks = 5, 7, 9, 11\n")
    # no atom sits at mu = 1/2 for odd k, and a zero-radius window is empty
    from toric_clt import cli
    orig = cli.llt_error
    cli.llt_error = lambda model, z, k, measure=None: orig(model, z, k, radius=1e-9, measure=measure)
    try:
        assert main(["llt", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    finally:
        cli.llt_error = orig
    assert "EmptyWindowError" in capsys.readouterr().err


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, "[potential]\nname = fs\ndim = 2\n[run]\nks = 4, 6, 8, 10\n")
    for out in ("a", "b"):
        main(["all", "--config", str(cfg), "--out", str(tmp_path / out), "--route", "both"])
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_norming_csv_and_route_agreement(tmp_path):
    cfg = write(tmp_path, "[potential]\nname = fs\ndim = 2\n[run]\nks = 3, 6\n")
    assert main(["norming", "--config", str(cfg), "--out", str(tmp_path / "o"), "--route", "both",
                 "--nodes", "64", "--threads", "2"]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "norming.csv").open()))
    assert set(rows[0]) == {"k", "alpha", "Q", "est_error", "route"}
    assert len(rows) == 2 * (10 + 28)
    first = rows[0]
    assert first["alpha"] == "0,0" and float(first["Q"]) == pytest.approx(1 / 20, rel=1e-10)
    summary = json.loads((tmp_path / "o" / "norming.json").read_text())[0]
    assert summary["max_route_disagreement"] <= 1e-6


def test_product_and_perturbed_potentials(tmp_path):
    cfg = write(tmp_path, "[potential]\nname = fs-product\nfactors = 1, 1\n[run]\nks = 2\n")
    assert main(["lattice", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert len((tmp_path / "a" / "lattice_k2.csv").read_text().splitlines()) == 10
    cfg = write(tmp_path, "[potential]\nname = fs-perturbed\ndim = 1\neps = 0.05\nbump = lorentzian\n"
                          "[run]\nks = 10, 20, 40, 80\nbase_points = 0.3\n")
    assert main(["moments", "--config", str(cfg), "--out", str(tmp_path / "b")]) in (0, 1)
    reps = json.loads((tmp_path / "b" / "moments.json").read_text())
    assert [r["label"] for r in reps] == ["mean", "covariance"]


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("TORIC_CLT_THREADS", "x")
    assert main(["lattice", "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("TORIC_CLT_THREADS", "2")
    assert main(["lattice", "--out", str(tmp_path / "o")]) == 0


def test_emit_plot_data(tmp_path):
    ks = [10, 20, 40, 80]
    rep = fit_rate(ks, [5.0 / k for k in ks])
    path = emit_plot_data(rep, tmp_path / "p.csv")
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["k", "error", "fit", "log_k", "log_error"]
    side = json.loads((tmp_path / "p.fit.json").read_text())
    assert side["slope"] == pytest.approx(-1, abs=1e-12)
    with pytest.raises(ValueError, match="empty"):
        emit_plot_data(None, tmp_path / "q.csv")


def test_clt_plot_columns(tmp_path):
    cfg = write(tmp_path, FS1)
    main(["clt", "--config", str(cfg), "--out", str(tmp_path / "o")])
    header = (tmp_path / "o" / "clt.csv").read_text().splitlines()[0].split(",")
    assert {"k", "error", "fit"} <= set(header)
