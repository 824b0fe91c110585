"""Config schema: strict parsing, validation, round trip, presets."""
import pytest

from mcqd.config import (
    DESK_SCALE,
    ExperimentConfig,
    build_preset,
    preset_names,
)
from mcqd.core import ConfigurationError

GOOD_YAML = """\
case: demo
seed: 7
replicates: 2
containers:
  bin_budget: 72
  grids:
    - {shape: [6, 6], fd: ae_qt, count: 2}
task:
  name: rastrigin_toy
search:
  sharing: non_shared
  initialization_budget: 20
  evaluation_budget: 100
  batch_size: 10
training:
  strategy: online
  period: 30
  epochs: 2
  diversity: {kind: cmd, weight: 1.0, sign: -1}
"""


class TestParsing:
    def test_good_config(self):
        cfg = ExperimentConfig.from_yaml(GOOD_YAML)
        assert cfg.case == "demo"
        assert len(cfg.grids) == 2  # count expanded
        assert cfg.grids[0].shape == (6, 6)
        assert cfg.training.diversity.kind == "cmd"
        assert cfg.search.sharing == "non_shared"

    def test_unknown_key_is_error_with_line(self):
        bad = GOOD_YAML.replace("  period: 30", "  period: 30\n  learning_rte: 1")
        with pytest.raises(ConfigurationError) as err:
            ExperimentConfig.from_yaml(bad)
        assert "learning_rte" in str(err.value)
        assert "line" in str(err.value)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigurationError) as err:
            ExperimentConfig.from_yaml(GOOD_YAML + "bogus: 1\n")
        assert "bogus" in str(err.value)

    def test_missing_required_key(self):
        bad = GOOD_YAML.replace("  bin_budget: 72\n", "")
        with pytest.raises(ConfigurationError) as err:
            ExperimentConfig.from_yaml(bad)
        assert "bin_budget" in str(err.value)

    def test_yaml_syntax_error_carries_line(self):
        with pytest.raises(ConfigurationError) as err:
            ExperimentConfig.from_yaml("case: [unclosed\nseed: 1\n")
        assert "line" in str(err.value)

    def test_bin_budget_mismatch(self):
        bad = GOOD_YAML.replace("bin_budget: 72", "bin_budget: 100")
        with pytest.raises(ConfigurationError) as err:
            ExperimentConfig.from_yaml(bad)
        assert "bin budget" in str(err.value)

    def test_hardcoded_requires_no_training(self):
        bad = GOOD_YAML.replace("fd: ae_qt", "fd: hardcoded")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_yaml(bad)

    def test_learned_requires_training(self):
        bad = GOOD_YAML.replace("strategy: online", "strategy: none")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_yaml(bad)


class TestRoundTrip:
    def test_yaml_round_trip_identity(self):
        cfg = ExperimentConfig.from_yaml(GOOD_YAML)
        again = ExperimentConfig.from_yaml(cfg.to_yaml())
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_preset_round_trip_identity(self):
        for name in preset_names():
            cfg = build_preset(name, desk=True, seed=3, replicates=2)
            again = ExperimentConfig.from_yaml(cfg.to_yaml())
            assert again == cfg

    def test_hash_changes_with_content(self):
        cfg = ExperimentConfig.from_yaml(GOOD_YAML)
        other = ExperimentConfig.from_yaml(GOOD_YAML.replace("seed: 7", "seed: 8"))
        assert cfg.hash() != other.hash()


class TestPresets:
    def test_all_fifteen_rows_present(self):
        assert len(preset_names()) == 15

    def test_every_preset_validates_at_both_scales(self):
        for name in preset_names():
            for desk in (False, True):
                cfg = build_preset(name, desk=desk)
                cfg.validate()
                assert sum(g.capacity for g in cfg.grids) == cfg.bin_budget

    def test_full_scale_bin_budget_is_2500(self):
        for name in preset_names():
            cfg = build_preset(name)
            assert cfg.bin_budget == 2500

    def test_qt_reco_4_ns_row(self):
        cfg = build_preset("qt-reco-4-ns")
        assert len(cfg.grids) == 4
        assert all(g.shape == (25, 25) and g.fd == "ae_qt" for g in cfg.grids)
        assert cfg.search.sharing == "non_shared"
        assert cfg.training.strategy == "online"
        assert cfg.training.diversity.kind == "none"
        assert cfg.search.evaluation_budget == 100_000
        assert cfg.search.initialization_budget == 10_000
        assert cfg.search.batch_size == 1_000
        assert cfg.training.period == 5_000

    def test_pt_reco_4_row(self):
        cfg = build_preset("pt-reco-4")
        assert cfg.training.strategy == "pre_trained"
        assert cfg.search.sharing == "shared"
        assert all(g.fd == "ae" for g in cfg.grids)

    def test_full_scale_training_schedule(self):
        cfg = build_preset("qt-reco-4")
        assert cfg.training.epochs == 200
        assert cfg.training.learning_rate == 0.1
        assert cfg.training.batch_size == 1024
        assert cfg.training.validation_split == 0.25
        assert cfg.training.diversity.weight == 1.0
        assert cfg.search.mutation_probability == 0.1
        assert cfg.search.mutation_eta == 20.0
        params = cfg.task.params
        assert params["episode_steps"] == 300
        assert params["obs_window"] == 30
        assert params["episodes_per_eval"] == 5

    def test_grid_splits_match_case_matrix(self):
        shapes6 = [g.shape for g in build_preset("qt-reco-6-ns").grids]
        assert shapes6 == [(20, 20)] * 5 + [(20, 25)]
        shapes9 = [g.shape for g in build_preset("qt-reco-9-ns").grids]
        assert shapes9 == [(17, 16)] * 8 + [(18, 18)]
        shapes25 = [g.shape for g in build_preset("qt-reco-25-ns").grids]
        assert shapes25 == [(10, 10)] * 25

    def test_desk_preserves_categorical_fields(self):
        for name in preset_names():
            full = build_preset(name)
            desk = build_preset(name, desk=True)
            assert desk.search.sharing == full.search.sharing
            assert desk.training.strategy == full.training.strategy
            assert desk.training.diversity == full.training.diversity
            assert {g.fd for g in desk.grids} == {g.fd for g in full.grids}
            assert len(desk.grids) == len(full.grids)
            assert desk.search.evaluation_budget * DESK_SCALE == \
                full.search.evaluation_budget

    def test_diversity_rows(self):
        assert build_preset("qt-outputs-4-ns").training.diversity.kind == "outputs"
        assert build_preset("qt-cmd-4-ns").training.diversity.kind == "cmd"
        covmin = build_preset("qt-covmin-4-ns").training.diversity
        covmax = build_preset("qt-covmax-4-ns").training.diversity
        assert covmin.kind == covmax.kind == "cov"
        assert covmin.sign != covmax.sign

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            build_preset("qt-reco-42")
