import csv
import json
import math

import numpy as np
import pytest

from snpdensity.cli import main, parse_grid
from snpdensity.density import SnpDensity, WhiteningTransform, save_density
from snpdensity.ensemble import SampleEnsemble, read_ensemble, write_ensemble
from snpdensity.indexset import build_index_set


def read_grid(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture
def zero_density(tmp_path):
    path = str(tmp_path / "zero.json")
    save_density(SnpDensity(build_index_set(1, 4), np.zeros(3), WhiteningTransform.identity(1)), path)
    return path


@pytest.fixture
def lorenz_sample(tmp_path):
    path = str(tmp_path / "init.csv")
    assert main(["sample", "--mean", "1,1,1", "--cov-diag", "25,25,25", "--n", "200",
                 "--seed", "7", "--out", path]) == 0
    return path


class TestSample:
    def test_degenerate_covariance_row_is_mean(self, tmp_path):
        out = str(tmp_path / "s.csv")
        assert main(["sample", "--mean", "1.5,-2,3", "--cov-diag", "1e-20,1e-20,1e-20",
                     "--n", "1", "--seed", "0", "--out", out]) == 0
        np.testing.assert_allclose(read_ensemble(out).points, [[1.5, -2.0, 3.0]], atol=1e-9)

    def test_byte_identical(self, tmp_path):
        outs = [str(tmp_path / f"s{i}.csv") for i in range(2)]
        for out in outs:
            main(["sample", "--mean", "0,0", "--cov-diag", "1,2", "--n", "50", "--seed", "3", "--out", out])
        assert open(outs[0], "rb").read() == open(outs[1], "rb").read()

    def test_shape(self, tmp_path):
        out = str(tmp_path / "s.csv")
        main(["sample", "--mean", "1,1,1", "--cov-diag", "1,1,1", "--n", "1000", "--seed", "1", "--out", out])
        assert read_ensemble(out).points.shape == (1000, 3)
        data = [l for l in open(out) if not l.startswith("#")]
        assert len(data) == 1001

    def test_full_covariance_file(self, tmp_path):
        cov = tmp_path / "cov.csv"
        cov.write_text("2,0.5\n0.5,1\n")
        out = str(tmp_path / "s.csv")
        assert main(["sample", "--mean", "0,0", "--cov-file", str(cov), "--n", "5", "--seed", "1",
                     "--out", out]) == 0

    def test_usage_errors(self, tmp_path):
        out = str(tmp_path / "s.csv")
        assert main(["sample", "--mean", "0,0", "--cov-diag", "1", "--n", "5", "--seed", "1", "--out", out]) == 2
        assert main(["sample", "--mean", "0,0", "--cov-diag", "1,-1", "--n", "5", "--seed", "1",
                     "--out", out]) == 2
        assert main(["sample", "--mean", "0,x", "--cov-diag", "1,1", "--n", "5", "--seed", "1",
                     "--out", out]) == 2
        assert main(["sample", "--mean", "0"]) == 2


class TestPropagate:
    def test_zero_duration(self, lorenz_sample, tmp_path):
        out = str(tmp_path / "p.csv")
        assert main(["propagate", "--in", lorenz_sample, "--tfinal", "0", "--out", out]) == 0
        np.testing.assert_array_equal(read_ensemble(out).points, read_ensemble(lorenz_sample).points)

    def test_two_lobes(self, lorenz_sample, tmp_path):
        out = str(tmp_path / "p.csv")
        assert main(["propagate", "--in", lorenz_sample, "--tfinal", "3", "--out", out]) == 0
        x = read_ensemble(out).points[:, 0]
        assert np.any(x > 0) and np.any(x < 0)
        assert read_ensemble(out).time == 3.0

    def test_missing_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,x1,x2\n1,2,3\n1,2\n")
        assert main(["propagate", "--in", str(bad), "--tfinal", "1", "--out", str(tmp_path / "o.csv")]) == 4
        assert "x2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["propagate", "--in", str(tmp_path / "nope.csv"), "--tfinal", "1",
                     "--out", str(tmp_path / "o.csv")]) == 4

    def test_divergence_exit_code(self, tmp_path):
        src = tmp_path / "far.csv"
        write_ensemble(SampleEnsemble(np.array([[1e150, 1e150, 1e150]])), src)
        assert main(["propagate", "--in", str(src), "--tfinal", "1", "--out", str(tmp_path / "o.csv")]) == 3


class TestFit:
    def test_standard_normal(self, tmp_path, rng):
        src = tmp_path / "n.csv"
        write_ensemble(SampleEnsemble(rng.standard_normal((100_000, 1))), src)
        dens, rep = str(tmp_path / "d.json"), str(tmp_path / "r.json")
        assert main(["fit", "--in", str(src), "-K", "4", "--out-density", dens, "--out-report", rep]) == 0
        report = json.load(open(rep))
        assert np.linalg.norm(report["theta"]) < 0.05
        assert json.load(open(dens))["order"] == 4

    def test_report_has_both_branches(self, tmp_path, rng):
        x = rng.normal(0.0, 0.3, (200, 1))
        x[:100] -= 2.0
        x[100:] += 2.0
        src = tmp_path / "b.csv"
        write_ensemble(SampleEnsemble(x), src)
        rep = str(tmp_path / "r.json")
        assert main(["fit", "--in", str(src), "-K", "4", "--out-density", str(tmp_path / "d.json"),
                     "--out-report", rep]) == 0
        report = json.load(open(rep))
        for key in ("convex_objective_pos", "convex_objective_neg",
                    "nonlinear_objective_pos", "nonlinear_objective_neg"):
            assert isinstance(report[key], float)

    def test_degenerate_exit_code(self, tmp_path):
        src = tmp_path / "same.csv"
        write_ensemble(SampleEnsemble(np.ones((10, 2))), src)
        assert main(["fit", "--in", str(src), "-K", "3", "--out-density", str(tmp_path / "d.json"),
                     "--out-report", str(tmp_path / "r.json")]) == 3

    def test_bad_order(self, tmp_path, lorenz_sample):
        assert main(["fit", "--in", lorenz_sample, "-K", "1", "--out-density", str(tmp_path / "d.json"),
                     "--out-report", str(tmp_path / "r.json")]) == 2


class TestEval:
    def test_pdf_at_origin(self, zero_density, tmp_path):
        out = str(tmp_path / "g.csv")
        assert main(["eval", "--density", zero_density, "--mode", "pdf", "--grid=-1:1:3", "--out", out]) == 0
        header, data = read_grid(out)
        assert header == ["z0", "value"]
        assert data[1, 0] == 0.0
        assert data[1, 1] == pytest.approx(0.3989422804, abs=1e-10)

    def test_cdf_final_corner(self, tmp_path, rng):
        path = str(tmp_path / "d.json")
        base = SnpDensity(build_index_set(2, 4), 0.1 * rng.standard_normal(12), WhiteningTransform.identity(2))
        save_density(base, path)
        out = str(tmp_path / "g.csv")
        assert main(["eval", "--density", path, "--mode", "cdf", "--grid=-3:60:4,-3:60:4", "--out", out]) == 0
        _, data = read_grid(out)
        assert data[-1, -1] == pytest.approx(1.0, abs=1e-9)
        assert data[0, 0] == -3.0 and data[1, 1] == 18.0

    def test_marginal_riemann_sum(self, tmp_path, rng):
        path = str(tmp_path / "d.json")
        save_density(SnpDensity(build_index_set(3, 4), 0.1 * rng.standard_normal(31)), path)
        out = str(tmp_path / "g.csv")
        assert main(["eval", "--density", path, "--mode", "marginal", "--keep", "1",
                     "--grid=-6:6:200", "--out", out]) == 0
        header, data = read_grid(out)
        assert header == ["z1", "value"]
        assert data[:, 1].sum() * (12 / 199) == pytest.approx(1.0, abs=1e-3)

    def test_round_trip_formatting(self, tmp_path, rng):
        path = str(tmp_path / "d.json")
        dens = SnpDensity(build_index_set(1, 4), 0.2 * rng.standard_normal(3))
        save_density(dens, path)
        out = str(tmp_path / "g.csv")
        main(["eval", "--density", path, "--mode", "pdf", "--grid=-2:2:7", "--out", out])
        _, data = read_grid(out)
        np.testing.assert_array_equal(data[:, 1], dens.pdf_whitened(data[:, 0]))

    def test_bad_grid(self, zero_density, tmp_path):
        out = str(tmp_path / "g.csv")
        assert main(["eval", "--density", zero_density, "--mode", "pdf", "--grid", "0:1", "--out", out]) == 2
        assert main(["eval", "--density", zero_density, "--mode", "pdf", "--grid=0:1:5,0:1:5",
                     "--out", out]) == 2
        assert main(["eval", "--density", zero_density, "--mode", "marginal", "--grid=0:1:5",
                     "--out", out]) == 2

    def test_parse_grid(self):
        axes = parse_grid("-1:1:3,0:2:2")
        np.testing.assert_array_equal(axes[0], [-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(axes[1], [0.0, 2.0])


class TestBoxprob:
    def test_full_space_density(self, zero_density, tmp_path, capsys):
        out = str(tmp_path / "b.json")
        assert main(["boxprob", "--density", zero_density, "--box=-50:50", "--out", out, "--json"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["method"] == "snp_cdf"
        assert printed["probability"] == pytest.approx(1.0, abs=1e-9)
        assert json.load(open(out))["probability"] == printed["probability"]

    def test_ensemble_half_inside(self, tmp_path, capsys):
        src = tmp_path / "e.csv"
        write_ensemble(SampleEnsemble(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])), src)
        out = str(tmp_path / "b.json")
        assert main(["boxprob", "--ensemble", str(src), "--box=0:1.5,0:1.5", "--space", "raw",
                     "--out", out]) == 0
        assert capsys.readouterr().out.strip() == "mc_count: 0.5"

    def test_ambiguous_input(self, zero_density, tmp_path):
        out = str(tmp_path / "b.json")
        assert main(["boxprob", "--box=0:1", "--out", out]) == 2
        src = tmp_path / "e.csv"
        write_ensemble(SampleEnsemble(np.zeros((3, 1)) + [[0.0], [1.0], [2.0]]), src)
        assert main(["boxprob", "--density", zero_density, "--ensemble", str(src), "--box=0:1",
                     "--out", out]) == 2

    def test_inverted_box(self, zero_density, tmp_path):
        assert main(["boxprob", "--density", zero_density, "--box=1:0", "--out", str(tmp_path / "b.json")]) == 2


class TestManifests:
    def test_every_subcommand_writes_one(self, tmp_path, lorenz_sample):
        prop = str(tmp_path / "p.csv")
        dens, rep = str(tmp_path / "d.json"), str(tmp_path / "r.json")
        grid, box = str(tmp_path / "g.csv"), str(tmp_path / "b.json")
        main(["propagate", "--in", lorenz_sample, "--tfinal", "0.5", "--out", prop])
        main(["fit", "--in", prop, "-K", "3", "--out-density", dens, "--out-report", rep])
        main(["eval", "--density", dens, "--mode", "marginal", "--keep", "0", "--grid=-3:3:11", "--out", grid])
        main(["boxprob", "--density", dens, "--box=-1:1,-1:1", "--out", box])
        for path in (lorenz_sample, prop, dens, grid, box):
            manifest = json.load(open(path + ".manifest.json"))
            assert manifest["version"] and manifest["argv"]

    def test_replay_reproduces_bytes(self, tmp_path, lorenz_sample):
        prop = str(tmp_path / "p.csv")
        dens, rep = str(tmp_path / "d.json"), str(tmp_path / "r.json")
        main(["propagate", "--in", lorenz_sample, "--tfinal", "0.5", "--out", prop])
        main(["fit", "--in", prop, "-K", "4", "--out-density", dens, "--out-report", rep])
        outputs = [lorenz_sample, prop, dens, rep]
        before = [open(p, "rb").read() for p in outputs]
        for manifest in (lorenz_sample, prop, dens):
            assert main(["replay", manifest + ".manifest.json"]) == 0
        assert [open(p, "rb").read() for p in outputs] == before

    def test_replay_bad_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"argv": ["replay", "x"]}))
        assert main(["replay", str(path)]) == 2
        assert main(["replay", str(tmp_path / "missing.json")]) == 4


class TestReproduceSmall:
    def test_quantile_summary_schema(self, tmp_path):
        assert main(["reproduce", "quantile_vb", "--seed", "3", "--trials", "2", "--mc-sizes", "100,1000",
                     "--out-dir", str(tmp_path)]) == 0
        summary = json.load(open(tmp_path / "quantile_vb" / "summary.json"))
        assert [(r["order"], r["samples"]) for r in summary["snp"]] == [(6, 100), (6, 1000), (8, 100), (8, 1000)]
        assert [r["samples"] for r in summary["mc"]] == [100, 1000]
        assert all(len(r["values"]) == 2 for r in summary["snp"] + summary["mc"])
        assert (tmp_path / "quantile_vb" / "manifest.json").exists()
