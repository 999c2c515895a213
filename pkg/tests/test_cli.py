import csv

import numpy as np
import pytest

from fvol import cli
from fvol import io as fio
from fvol.errors import SchemaError
from fvol.fda import FdaDataset, Grid
from fvol.finance import write_synthetic_market
from fvol.kernels import Kernel
from fvol.semimetrics import SemiMetricSpec


def table(path):
    lines = [l for l in open(path) if not l.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def market(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_market")
    return write_synthetic_market(d, 70, np.random.default_rng(8))


@pytest.fixture
def dataset_files(tmp_path):
    rng = np.random.default_rng(3)
    g = Grid.uniform(-1, 1, 15)
    curves = rng.normal(size=(30, 1)) * np.sin(np.pi * g.points)[None, :] + rng.normal(size=(30, 1)) * g.points
    y = rng.normal(size=30)
    delta = (rng.random(30) > 0.2).astype(int)
    fio.write_curves(tmp_path / "c.csv", g, curves, [f"x{i}" for i in range(30)])
    fio.write_responses(tmp_path / "r.csv", [f"x{i}" for i in range(30)], y, delta)
    return tmp_path / "c.csv", tmp_path / "r.csv", (g, curves, y, delta)


class TestIo:
    def test_round_trip(self, dataset_files):
        c, r, (g, curves, y, delta) = dataset_files
        ds = fio.load_dataset(c, r)
        assert ds.grid == g and ds.ids[0] == "x0"
        np.testing.assert_array_equal(ds.curves, curves)
        np.testing.assert_array_equal(ds.delta, delta)
        obs = delta == 1
        np.testing.assert_array_equal(ds.y[obs], y[obs])
        assert np.all(np.isnan(ds.y[~obs]))

    def test_missing_y_must_be_flagged(self, tmp_path):
        (tmp_path / "r.csv").write_text("id,y,delta\na,,1\n")
        with pytest.raises(SchemaError):
            fio.read_responses(tmp_path / "r.csv")

    def test_bad_curve_files(self, tmp_path):
        (tmp_path / "c.csv").write_text("id,l_1,l_2\n0,1,2\n")
        with pytest.raises(SchemaError):
            fio.read_curves(tmp_path / "c.csv")
        (tmp_path / "c.csv").write_text("id,l_1,l_2\ngrid,0,1\n0,1\n")
        with pytest.raises(SchemaError):
            fio.read_curves(tmp_path / "c.csv")

    def test_id_mismatch(self, dataset_files, tmp_path):
        c, _, (g, curves, y, delta) = dataset_files
        fio.write_responses(tmp_path / "other.csv", range(30), y, delta)
        with pytest.raises(SchemaError):
            fio.load_dataset(c, tmp_path / "other.csv")

    def test_header_round_trip(self, tmp_path):
        fio.write_table(tmp_path / "t.csv", ("a", "b"), [(1, 0.5)], {"h1": 0.25})
        meta = fio.read_header(tmp_path / "t.csv")
        assert meta["h1"] == "0.25" and "version_numpy" in meta
        assert table(tmp_path / "t.csv") == [{"a": "1", "b": "0.5"}]


class TestParsing:
    def test_bandwidth_arg(self):
        assert cli.bandwidth_arg("auto") is None and cli.bandwidth_arg("0.5") == 0.5
        with pytest.raises(Exception):
            cli.bandwidth_arg("-1")

    def test_quantile_range(self):
        assert cli.quantile_range("0.1,0.4") == (0.1, 0.4)
        for bad in ("0.4,0.1", "x,y", "0,0.5"):
            with pytest.raises(Exception):
                cli.quantile_range(bad)

    def test_config_file(self, tmp_path):
        ini = tmp_path / "f.ini"
        ini.write_text(
            "[fvol]\nseed = 9\n\n[simulate]\nB = 3\nJ = 4\nout = x.csv\n\n"
            "[estimate]\ncurves = c.csv\nresponses = r.csv\nout = o.csv\ntau-strict = yes\nmode = imputed\n\n"
            "[variance]\nbandwidth = 0.8\nkernel = triangular\nsemimetric = deriv_l2:2\npilot-bandwidth = 0.9\n\n"
            "[pi]\nsemimetric = l2\n"
        )
        args = cli.parse_args(["--config", str(ini), "simulate", "--J", "7"])
        assert (args.seed, args.B, args.J, args.out) == (9, 3, 7, "x.csv")
        args = cli.parse_args(["--config", str(ini), "estimate", "--h2", "0.3"])
        assert args.tau_strict and args.mode == "imputed"
        cfg = cli.estimator_config(args)
        assert cfg.h2 == 0.3 and cfg.h2_init == 0.9
        assert cfg.kernel_W == Kernel("triangular") and cfg.kernel_K == Kernel("quadratic")
        assert cfg.sm2 == SemiMetricSpec.deriv(2) and cfg.sm4 == SemiMetricSpec.l2()
        args = cli.parse_args(["--config", str(ini), "estimate"])
        assert cli.estimator_config(args).h2 == 0.8

    @pytest.mark.parametrize(
        "text",
        ["[nonsense]\na = 1\n", "[simulate]\nbogus = 1\n", "[estimate]\nmode = fancy\n", "[variance]\nwidth = 2\n", "[omega]\nsemimetric = wavelet\n"],
    )
    def test_bad_config(self, tmp_path, text, capsys):
        ini = tmp_path / "bad.ini"
        ini.write_text(text)
        assert cli.main(["--config", str(ini), "rv", "--hourly", "h", "--out", "o"]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        assert cli.main(["--config", "/nonexistent.ini", "rv", "--hourly", "h", "--out", "o"]) == 2


class TestCommands:
    def test_ingest_and_rv(self, market, tmp_path, capsys):
        rc = cli.main([
            "--seed", "1", "ingest", "--hourly", str(market["fx_hourly"]), "--daily", str(market["commodity_daily"]),
            "--rv-hourly", str(market["commodity_hourly"]), "--mar-rate", "0.3",
            "--out-curves", str(tmp_path / "c.csv"), "--out-responses", str(tmp_path / "r.csv"), "--out-rv", str(tmp_path / "rv.csv"),
        ])
        assert rc == 0 and "kept 69 days" in capsys.readouterr().out
        ds = fio.load_dataset(tmp_path / "c.csv", tmp_path / "r.csv")
        assert len(ds) == 69 and 0 < ds.n_obs < 69
        rv = table(tmp_path / "rv.csv")
        assert len(rv) == 69 and float(rv[0]["rv"]) > 0
        assert cli.main(["rv", "--hourly", str(market["commodity_hourly"]), "--out", str(tmp_path / "rv2.csv")]) == 0
        rv2 = {r["date"]: r["rv"] for r in table(tmp_path / "rv2.csv")}
        assert all(rv2[r["date"]] == r["rv"] for r in rv)

    @pytest.mark.parametrize("mode", ["simplified", "imputed"])
    def test_estimate(self, dataset_files, tmp_path, mode):
        c, r, _ = dataset_files
        out = tmp_path / "est.csv"
        rc = cli.main(["estimate", "--curves", str(c), "--responses", str(r), "--mode", mode, "--knn", "3", "--cv-grid-size", "6", "--out", str(out)])
        assert rc == 0
        rows = table(out)
        assert list(rows[0]) == list(cli.CI_COLUMNS) and len(rows) == 30
        for row in rows:
            assert float(row["ci_low"]) <= float(row["u_hat"]) <= float(row["ci_high"])
            assert 0 <= float(row["pi_hat"]) <= 1
        meta = fio.read_header(out)
        assert float(meta["bandwidth_h1"]) > 0 and "knn_overrides" in meta

    def test_estimate_complete_on_missing_data_fails(self, dataset_files, tmp_path, capsys):
        c, r, _ = dataset_files
        rc = cli.main(["estimate", "--curves", str(c), "--responses", str(r), "--mode", "complete", "--out", str(tmp_path / "o.csv")])
        assert rc == 1 and "complete mode" in capsys.readouterr().err

    def test_report(self, market, tmp_path, capsys):
        out, summary = tmp_path / "rep.csv", tmp_path / "sum.csv"
        rc = cli.main([
            "--seed", "2", "report", "--hourly", str(market["fx_hourly"]), "--daily", str(market["commodity_daily"]),
            "--rv-hourly", str(market["commodity_hourly"]), "--zeta", "1.0", "--cv-grid-size", "6",
            "--modes", "simplified,imputed", "--out", str(out), "--summary", str(summary),
        ])
        assert rc == 0
        rows = table(out)
        assert {r["mode"] for r in rows} == {"simplified", "imputed"} and len(rows) == 2 * 69
        s = table(summary)
        assert [r["mode"] for r in s] == ["simplified", "imputed"]
        assert "zeta" in fio.read_header(out)

    def test_simulate(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        rc = cli.main(["--seed", "3", "simulate", "--n", "30", "--B", "2", "--J", "4", "--grid-size", "25", "--cv-grid-size", "5", "--out", str(out)])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "MISE" in printed and "efficiency" in printed
        rows = table(out)
        assert {r["estimator"] for r in rows} >= {"complete", "simplified", "imputed"}
        assert fio.read_header(out)["command"] == "simulate"
