import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from decoder_bcd.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main
from decoder_bcd.experiment import aggregate
from decoder_bcd.graph_scm import GroundTruthScm
from decoder_bcd.metrics import read_metrics_csv
from decoder_bcd.sampler import Dataset

SUBCOMMANDS = ("generate", "train", "plot", "check-grads")


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        main([sub, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    parser = build_parser()
    subparser = parser._subparsers._group_actions[0].choices[sub]
    for action in subparser._actions:
        for flag in action.option_strings:
            assert flag in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "decoder_bcd", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "check-grads" in out.stdout


class TestGenerate:
    def test_observational(self, tmp_path, capsys):
        out = tmp_path / "obs"
        code = main(["generate", "--d", "6", "--D", "10", "--er", "2", "--sigma", "0.1",
                     "--n-obs", "600", "--seed", "0", "--out", str(out)])
        assert code == EXIT_OK
        data = Dataset.load(out)
        assert data.X.shape == (600, 10) and data.observational.all()
        assert GroundTruthScm.load(out / "scm.json").d == 6

    def test_uniform_multi(self, tmp_path):
        out = tmp_path / "f4"
        code = main(["generate", "--n-obs", "300", "--n-int", "3300", "--node-mode", "multi",
                     "--value-mode", "uniform", "--lo", "-10", "--hi", "10", "--out", str(out)])
        assert code == EXIT_OK
        data = Dataset.load(out)
        assert data.n == 3600
        m = data.mask[300:].astype(bool)
        assert m.sum(axis=1).min() >= 2
        assert np.all(np.abs(data.values[300:][m]) <= 10)

    def test_empty(self, tmp_path, capsys):
        assert main(["generate", "--n-obs", "0", "--n-int", "0", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "empty dataset" in capsys.readouterr().err

    def test_indivisible_sets(self, tmp_path):
        assert main(["generate", "--n-int", "910", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_choice(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--node-mode", "all", "--out", str(tmp_path)])
        assert exc.value.code == EXIT_USAGE

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            main(["generate", "--n-obs", "50", "--n-int", "40", "--seed", "7", "--out", str(tmp_path / name)])
        for f in ("data.csv", "labels.csv", "scm.json", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestTrain:
    def test_smoke(self, tmp_path, capsys):
        code = main(["train", "--scenario", "finding1", "--steps", "10", "--seeds", "1",
                     "--eval-every", "5", "--out", str(tmp_path)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1 and lines[0].startswith("finding1 seed=0 step=10")
        assert len(read_metrics_csv(tmp_path / "finding1" / "0" / "metrics.csv")) == 3

    def test_from_data(self, tmp_path, capsys):
        main(["generate", "--n-obs", "40", "--n-int", "20", "--sets", "4", "--out", str(tmp_path / "ds")])
        code = main(["train", "--data", str(tmp_path / "ds"), "--steps", "4", "--seeds", "2",
                     "--supervised", "--mask", "single_edge", "--out", str(tmp_path / "runs")])
        assert code == EXIT_OK
        manifest = json.loads((tmp_path / "runs" / "ds" / "1" / "manifest.json").read_text())
        assert manifest["config"]["n_int"] == 20 and manifest["config"]["supervised"]

    def test_sweep_labels(self, tmp_path):
        assert main(["train", "--scenario", "finding3_sweep", "--steps", "2", "--seeds", "1",
                     "--out", str(tmp_path)]) == EXIT_OK
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "finding3_sweep_n1800", "finding3_sweep_n3600", "finding3_sweep_n600"]

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == EXIT_USAGE

    def test_needs_one_source(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_scenario(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--scenario", "finding7", "--out", str(tmp_path)])
        assert exc.value.code == EXIT_USAGE

    def test_numeric_failure_exit(self, tmp_path):
        main(["generate", "--n-obs", "20", "--out", str(tmp_path / "ds")])
        data = (tmp_path / "ds" / "data.csv").read_text().splitlines()
        data[1] = ",".join(["nan"] + data[1].split(",")[1:])
        (tmp_path / "ds" / "data.csv").write_text("\n".join(data) + "\n")
        code = main(["train", "--data", str(tmp_path / "ds"), "--steps", "3", "--seeds", "1",
                     "--out", str(tmp_path / "runs")])
        assert code == EXIT_NUMERIC


class TestPlot:
    @pytest.fixture
    def runs(self, tmp_path):
        main(["train", "--scenario", "finding4_uniform", "--steps", "20", "--eval-every", "5",
              "--seeds", "3", "--out", str(tmp_path)])
        return tmp_path / "finding4_uniform"

    def test_csv_matches_aggregates(self, runs, tmp_path):
        out = tmp_path / "plots"
        assert main(["plot", "--in", str(runs), "--out", str(out)]) == EXIT_OK
        trajectories = {k: read_metrics_csv(runs / str(k) / "metrics.csv") for k in range(3)}
        summary = aggregate(trajectories)
        for name in ("eshd", "auroc", "mse_L", "kl_true_learned"):
            assert (out / f"{name}.svg").read_text().lstrip().startswith("<?xml")
            with open(out / f"plot_{name}.csv") as fh:
                rows = list(csv.DictReader(fh))
            np.testing.assert_array_equal([int(r["step"]) for r in rows], summary.steps)
            for col, ref in (("median", summary.median), ("q1", summary.q1), ("q3", summary.q3)):
                np.testing.assert_array_equal([float(r[col]) for r in rows], ref[name])

    def test_deterministic_svg(self, runs, tmp_path):
        main(["plot", "--in", str(runs), "--metrics", "eshd", "--out", str(tmp_path / "a")])
        main(["plot", "--in", str(runs), "--metrics", "eshd", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "eshd.svg").read_bytes() == (tmp_path / "b" / "eshd.svg").read_bytes()

    def test_single_seed_band_collapses(self, tmp_path):
        main(["train", "--scenario", "finding1", "--steps", "10", "--eval-every", "5", "--seeds", "1",
              "--out", str(tmp_path)])
        main(["plot", "--in", str(tmp_path / "finding1"), "--metrics", "auroc"])
        with open(tmp_path / "finding1" / "plot_auroc.csv") as fh:
            for row in csv.DictReader(fh):
                assert row["q1"] == row["median"] == row["q3"]

    def test_unknown_metric(self, runs):
        assert main(["plot", "--in", str(runs), "--metrics", "eshd,bogus"]) == EXIT_USAGE

    def test_missing_inputs(self, tmp_path):
        assert main(["plot", "--in", str(tmp_path / "empty")]) == EXIT_USAGE


class TestCheckGrads:
    def run(self, capsys, *flags):
        code = main(["check-grads", *flags])
        return code, json.loads(capsys.readouterr().out)

    def test_default(self, capsys):
        code, report = self.run(capsys)
        assert code == EXIT_OK and report["max_rel_err"] < 1e-4
        assert len(report["analytic"]) == 2 * 3 + 1 + 12

    def test_step_ordering(self, capsys):
        _, coarse = self.run(capsys, "--h", "1e-3")
        _, fine = self.run(capsys, "--h", "1e-5")
        err = lambda r: np.max(np.abs(np.subtract(r["analytic"], r["numeric"])))
        assert err(coarse) > err(fine)

    def test_supervised(self, capsys):
        code, report = self.run(capsys, "--supervised", "--seed", "3")
        assert code == EXIT_OK and report["supervised"]

    def test_bad_h(self, capsys):
        assert main(["check-grads", "--h", "0.1"]) == EXIT_USAGE

    def test_deterministic(self, capsys):
        assert self.run(capsys, "--seed", "5") == self.run(capsys, "--seed", "5")
