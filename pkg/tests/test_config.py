"""Pipeline config defaults, validation diagnostics, and hashing."""

import json

import pytest

from poselabel.config import (
    ConfigError,
    config_from_dict,
    config_hash,
    config_to_dict,
    default_config,
    load_config,
    print_default_config,
)


class TestDefaults:
    def test_distances_derived_from_voxel(self):
        cfg = default_config(voxel_size=0.01)
        assert cfg.cluster.link_radius == pytest.approx(0.02)
        assert cfg.ransac.inlier_distance == pytest.approx(0.015)
        assert cfg.icp.max_correspondence_distance == pytest.approx(0.025)
        assert cfg.fpfh_radius_factor == 5.0

    def test_round_trip_through_dict(self):
        cfg = default_config()
        again = config_from_dict(config_to_dict(cfg))
        assert config_to_dict(again) == config_to_dict(cfg)
        assert config_hash(again) == config_hash(cfg)

    def test_printable_default_is_loadable(self):
        spec = json.loads(print_default_config())
        cfg = config_from_dict(spec)
        assert cfg.voxel_size == 0.005

    def test_hash_changes_with_values(self):
        a = config_hash(default_config(0.005))
        b = config_hash(default_config(0.004))
        assert a != b


class TestValidation:
    def test_unknown_top_level_field(self):
        with pytest.raises(ConfigError, match="voxle_size"):
            config_from_dict({"voxle_size": 0.01})

    def test_unknown_nested_field(self):
        with pytest.raises(ConfigError, match="ransac.confidenceee"):
            config_from_dict({"ransac": {"confidenceee": 0.9}})

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="voxel_size"):
            config_from_dict({"voxel_size": -1.0})

    def test_bad_symmetry_order(self):
        with pytest.raises(ConfigError, match="symmetry.order"):
            config_from_dict({"symmetry": {"axis": [0, 0, 1], "order": 0}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_loads_partial_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"voxel_size": 0.008, "ransac": {"seed": 99}}))
        cfg = load_config(path)
        assert cfg.voxel_size == 0.008
        assert cfg.ransac.seed == 99
        # derived defaults follow the overridden voxel
        assert cfg.cluster.link_radius == pytest.approx(0.016)
        assert cfg.ransac.inlier_distance == pytest.approx(0.012)


class TestDerivedObjects:
    def test_symmetry_group(self):
        cfg = config_from_dict({"symmetry": {"axis": [0, 0, 1], "order": 2}})
        group = cfg.symmetry_group()
        assert len(group) == 2
        trivial = config_from_dict({}).symmetry_group()
        assert trivial.is_trivial

    def test_tracking_params_mirror_config(self):
        cfg = config_from_dict({"voxel_size": 0.004, "reregistration_fitness": 0.5})
        params = cfg.tracking_params()
        assert params.voxel == 0.004
        assert params.reregistration_fitness == 0.5
        assert params.ransac.inlier_distance == pytest.approx(0.006)
