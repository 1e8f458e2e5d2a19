import numpy as np
import pytest

from augmi import (
    augmented_mi_analytic,
    determine_involved,
    generate_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    scenario_to_json,
)
from augmi.scenario import MIN_MI_SEPARATION, ScenarioError


class TestGeneration:
    def test_benchmark_scale_scenario(self):
        scenario = generate_scenario(150, 4, seed=42)
        assert scenario.prior.dim == 150
        assert len(scenario.actions) == 4
        for action in scenario.actions:
            inv = determine_involved(scenario.layout, action)
            assert inv.dim == 4

    def test_dimension_within_one_block(self):
        for target in (10, 25, 51, 100, 149):
            scenario = generate_scenario(target, 1, seed=0)
            assert abs(scenario.prior.dim - target) <= 2

    def test_zero_correlation_block_diagonal(self):
        scenario = generate_scenario(20, 2, correlation_strength=0.0, seed=3)
        cov = scenario.prior.covariance
        for a in scenario.layout.blocks:
            for b in scenario.layout.blocks:
                if a.id != b.id:
                    assert np.all(cov[a.slice, b.slice] == 0.0)
        # the involved-subset reduction stays exact even without correlations
        action = scenario.actions[0]
        inv = determine_involved(scenario.layout, action)
        full = augmented_mi_analytic(scenario.prior, action).value
        reduced = augmented_mi_analytic(scenario.prior, action, inv.blocks).value
        assert abs(full - reduced) < 1e-9

    def test_correlations_are_genuine(self):
        scenario = generate_scenario(30, 1, correlation_strength=0.4, seed=3)
        action = scenario.actions[0]
        inv = determine_involved(scenario.layout, action)
        idx_inv = scenario.layout.indices(inv.blocks)
        others = set(scenario.layout.ids) - inv.blocks
        idx_out = scenario.layout.indices(others)
        cross = scenario.prior.covariance[np.ix_(idx_inv, idx_out)]
        assert np.abs(cross).max() > 1e-3

    def test_analytic_values_strictly_separated(self):
        scenario = generate_scenario(100, 4, seed=9)
        values = sorted(
            augmented_mi_analytic(scenario.prior, a).value for a in scenario.actions
        )
        gaps = np.diff(values)
        assert np.all(gaps >= MIN_MI_SEPARATION)

    def test_rejects_tiny_dimension(self):
        with pytest.raises(ScenarioError, match="target_dim"):
            generate_scenario(4, 1, seed=0)

    def test_rejects_too_many_actions(self):
        with pytest.raises(ScenarioError, match="landmarks"):
            generate_scenario(10, 40, seed=0)

    def test_determinism(self):
        a = generate_scenario(80, 3, seed=123)
        b = generate_scenario(80, 3, seed=123)
        assert scenario_to_json(a) == scenario_to_json(b)
        c = generate_scenario(80, 3, seed=124)
        assert scenario_to_json(a) != scenario_to_json(c)


class TestSerialization:
    def test_round_trip_value_exact(self, tmp_path):
        scenario = generate_scenario(40, 2, seed=5)
        path = tmp_path / "scenario.json"
        save_scenario(scenario, path)
        loaded = load_scenario(path)
        np.testing.assert_array_equal(loaded.prior.mean, scenario.prior.mean)
        np.testing.assert_array_equal(loaded.prior.covariance, scenario.prior.covariance)
        assert loaded.layout == scenario.layout
        assert loaded.sensing_range == scenario.sensing_range
        assert loaded.seed == scenario.seed
        for original, restored in zip(scenario.actions, loaded.actions):
            assert restored.id == original.id
            assert restored.new_ids == original.new_ids
            for m0, m1 in zip(original.transitions, restored.transitions):
                np.testing.assert_array_equal(m0.matrix, m1.matrix)
                np.testing.assert_array_equal(m0.noise_cov, m1.noise_cov)
            for (s0, m0), (s1, m1) in zip(original.observations, restored.observations):
                assert s0 == s1
                np.testing.assert_array_equal(m0.matrix, m1.matrix)

    def test_round_trip_preserves_json_bytes(self, tmp_path):
        scenario = generate_scenario(24, 1, seed=6)
        path = tmp_path / "s.json"
        save_scenario(scenario, path)
        reloaded = load_scenario(path)
        assert scenario_to_json(reloaded) == path.read_text(encoding="utf-8")

    def test_dict_round_trip(self):
        scenario = generate_scenario(16, 1, seed=7)
        clone = scenario_from_dict(scenario_to_dict(scenario))
        np.testing.assert_array_equal(clone.prior.covariance, scenario.prior.covariance)

    def test_malformed_document(self):
        with pytest.raises(ScenarioError, match="malformed"):
            scenario_from_dict({"blocks": [{"id": "a", "dim": 2}]})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot load"):
            load_scenario(tmp_path / "absent.json")

    def test_loaded_actions_are_usable(self, tmp_path):
        scenario = generate_scenario(36, 2, seed=8)
        path = tmp_path / "s.json"
        save_scenario(scenario, path)
        loaded = load_scenario(path)
        for action in loaded.actions:
            value = augmented_mi_analytic(loaded.prior, action).value
            assert np.isfinite(value)

    def test_unknown_action_lookup(self):
        scenario = generate_scenario(16, 1, seed=2)
        with pytest.raises(ScenarioError, match="no action"):
            scenario.action("zz")
