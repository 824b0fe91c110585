"""CLI verbs exercised through main()."""
import pytest

from mcqd.cli import main

CONFIG = """\
case: cli-toy
seed: 3
replicates: 1
containers:
  bin_budget: 50
  grids:
    - {shape: [5, 5], fd: ae, count: 2}
task:
  name: rastrigin_toy
search:
  sharing: non_shared
  initialization_budget: 20
  evaluation_budget: 40
  batch_size: 20
  mutation: {probability: 0.5, eta: 20.0}
training:
  strategy: online
  period: 30
  epochs: 2
  learning_rate: 0.01
  batch_size: 16
  hidden: [8]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(CONFIG)
    return path


class TestRun:
    def test_run_writes_artifacts(self, config_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", str(config_file), "--out", str(out)]) == 0
        assert (out / "rep_000" / "metrics.csv").exists()
        assert "run directory" in capsys.readouterr().out

    def test_invalid_config_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text(CONFIG + "  typo_key: 1\n")
        assert main(["run", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "typo_key" in err and "line" in err

    def test_overrides(self, config_file, tmp_path):
        out = tmp_path / "out2"
        assert main(["run", str(config_file), "--out", str(out),
                     "--seed", "99", "--replicates", "2"]) == 0
        head = (out / "rep_001" / "metrics.csv").read_text().splitlines()[0]
        assert "seed=100" in head


class TestPreset:
    def test_list(self, capsys):
        assert main(["preset", "--list"]) == 0
        out = capsys.readouterr().out
        assert "qt-reco-4-ns" in out and "hardcoded-1" in out

    def test_unknown_preset(self, capsys):
        assert main(["preset", "qt-bogus"]) == 2
        assert "unknown preset" in capsys.readouterr().err


class TestPlotAndAggregate:
    def test_plotdata_and_aggregate(self, config_file, tmp_path, capsys):
        out = tmp_path / "out3"
        main(["run", str(config_file), "--out", str(out)])
        assert main(["plotdata", str(out)]) == 0
        assert (out / "plot" / "curves.csv").exists()
        agg = tmp_path / "agg.csv"
        assert main(["aggregate", str(out), "--out", str(agg)]) == 0
        assert agg.exists()

    def test_aggregate_missing_dir(self, tmp_path, capsys):
        assert main(["aggregate", str(tmp_path / "nope")]) == 2
