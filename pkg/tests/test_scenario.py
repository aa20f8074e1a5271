"""Scenario loading and validation error reporting."""

import json

import pytest

from aquasim.cli import bundled_path
from aquasim.scenario import ScenarioError, load_scenario, scenario_from_dict

from conftest import scenario_dict


class TestBundledScenarios:
    @pytest.mark.parametrize("name", ["baseline_66h.json", "demo_crash.json"])
    def test_bundled_files_load(self, name):
        scenario = load_scenario(str(bundled_path(name)))
        assert scenario.duration_s > 0
        assert scenario.nodes
        assert scenario.site.site_excess_db > 0

    def test_baseline_shape(self):
        scenario = load_scenario(str(bundled_path("baseline_66h.json")))
        assert scenario.duration_s == 66 * 3600
        assert scenario.loss_probability == 0.023
        assert scenario.nodes[0].interval_s == 600
        # no explicit excess in the file: calibrated from the survey rows
        assert scenario.site.site_excess_db == pytest.approx(63.5, abs=0.1)


class TestFieldPathErrors:
    def test_missing_seed(self):
        data = scenario_dict()
        del data["seed"]
        with pytest.raises(ScenarioError, match="seed"):
            scenario_from_dict(data)

    def test_bad_node_tank_reference(self):
        data = scenario_dict()
        data["nodes"][0]["tank_id"] = "ghost"
        with pytest.raises(ScenarioError, match=r"nodes\[0\].tank_id"):
            scenario_from_dict(data)

    def test_bad_survey_label(self):
        data = scenario_dict()
        data["nodes"][0]["survey_label"] = "Z"
        with pytest.raises(ScenarioError, match=r"nodes\[0\].survey_label"):
            scenario_from_dict(data)

    def test_bad_interval(self):
        data = scenario_dict()
        data["nodes"][0]["interval_s"] = -5
        with pytest.raises(ScenarioError, match=r"nodes\[0\].interval_s"):
            scenario_from_dict(data)

    def test_bad_loss_probability(self):
        with pytest.raises(ScenarioError, match="loss_probability"):
            scenario_from_dict(scenario_dict(loss_probability=1.5))

    def test_bad_anomaly_kind(self):
        data = scenario_dict(anomalies=[
            {"at": 0.0, "tank_id": "ras-1", "kind": "flood", "magnitude": 1.0}
        ])
        with pytest.raises(ScenarioError, match=r"anomalies\[0\].kind"):
            scenario_from_dict(data)

    def test_bad_outage_window(self):
        data = scenario_dict(gateway={"uplink": {"scheduled_outages": [[100, 50]]}})
        with pytest.raises(ScenarioError, match=r"scheduled_outages\[0\]"):
            scenario_from_dict(data)

    def test_unknown_power_profile(self):
        data = scenario_dict()
        data["nodes"][0]["power_profile"] = "turbo"
        with pytest.raises(ScenarioError, match=r"nodes\[0\].power_profile"):
            scenario_from_dict(data)

    def test_unknown_sensor(self):
        data = scenario_dict()
        data["nodes"][0]["sensors"] = ["salinity"]
        with pytest.raises(ScenarioError, match=r"nodes\[0\].sensors\[0\]"):
            scenario_from_dict(data)

    def test_unknown_farm_parameter(self):
        with pytest.raises(ScenarioError, match="farm.gravity"):
            scenario_from_dict(scenario_dict(farm={"gravity": 9.8}))

    def test_duplicate_node_ids(self):
        data = scenario_dict()
        data["nodes"].append(dict(data["nodes"][0]))
        with pytest.raises(ScenarioError, match="nodes"):
            scenario_from_dict(data)

    def test_not_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ScenarioError, match="not valid JSON"):
            load_scenario(str(path))


class TestSiteCalibration:
    def test_explicit_excess_wins(self):
        data = scenario_dict()
        data["site"]["site_excess_db"] = 50.0
        assert scenario_from_dict(data).site.site_excess_db == 50.0

    def test_fitted_when_absent(self):
        scenario = scenario_from_dict(scenario_dict())
        assert scenario.site.site_excess_db == pytest.approx(63.5, abs=0.1)

    def test_outage_windows_parse(self):
        data = scenario_dict(gateway={"uplink": {"scheduled_outages": [[3600, 7200]]}})
        gateway = scenario_from_dict(data).gateway
        assert not gateway.uplink_up(3600.0)
        assert not gateway.uplink_up(7199.0)
        assert gateway.uplink_up(7200.0)
        assert gateway.uplink_up(0.0)
