import pytest

from bpfsim.config import (ConfigError, ScenarioConfig, load_scenario, load_sweep,
                           scenario_from_dict, sweep_from_dict)


def test_defaults_are_the_reference_setup():
    cfg = ScenarioConfig()
    assert cfg.node_count == 241
    assert cfg.sink == (1250.0, 1250.0)
    assert (cfg.app.rate_pps, cfg.app.packet_bytes) == (5.0, 512)
    assert (cfg.duration_s, cfg.runs) == (200.0, 10)
    assert cfg.protocol.variant == "bpf" and cfg.protocol.tau == 1000
    assert cfg.channel.nakagami_m == 1.55


def test_dict_round_trip():
    cfg = ScenarioConfig().with_overrides({"protocol.variant": "slotted-p", "nodes.total": 50})
    assert scenario_from_dict(cfg.to_dict()) == cfg


def test_yaml_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("protocol:\n  variant: weighted-p\nnodes:\n  total: 31\nruns: 3\n")
    cfg = load_scenario(p)
    assert (cfg.protocol.variant, cfg.node_count, cfg.runs) == ("weighted-p", 31, 3)


@pytest.mark.parametrize("data,path", [
    ({"runz": 3}, "runz"),
    ({"protocol": {"variant": "gossip"}}, "protocol"),
    ({"protocol": {"p": "half"}}, "protocol.p"),
    ({"runs": 0}, "runs"),
    ({"sources": {"count": 500}}, "sources.count"),
    ({"nodes": {"total": 10, "density_per_km": 2.4}}, "nodes"),
    ({"grid": {"blocks_x": 0}}, "grid"),
    ({"channel": {"deterministic": "yes"}}, "channel.deterministic"),
    ({"sink": [1.0]}, "sink"),
    ({"app": {"rate_pps": 0}}, "app.rate_pps"),
    ([1, 2], ""),
])
def test_errors_name_the_offending_key(data, path):
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(data) if isinstance(data, dict) else sweep_from_dict(data)
    assert exc.value.path == path


def test_override_of_unknown_key():
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig().with_overrides({"protocol.wait": 1})
    assert exc.value.path == "protocol.wait"


def test_density_and_total_are_exclusive_in_overrides():
    cfg = ScenarioConfig().with_overrides({"nodes.total": 11})
    assert cfg.node_count == 11 and cfg.density == pytest.approx(0.4)
    back = cfg.with_overrides({"nodes.density_per_km": 2.4})
    assert back.node_count == 61


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("runs: [1, \n")
    with pytest.raises(ConfigError):
        load_scenario(bad)


class TestSweepSpec:
    def test_axes_form_a_product(self):
        spec = sweep_from_dict({"axes": {"nodes.density_per_km": [2.4, 9.6],
                                         "protocol.variant": ["bpf", "slotted-1"]},
                                "base": {"runs": 2}})
        assert len(spec.points) == 4
        assert [c.protocol.variant for c in spec.scenarios()] == ["bpf", "slotted-1"] * 2
        assert all(c.runs == 2 for c in spec.scenarios())

    def test_explicit_points_append(self):
        spec = sweep_from_dict({"points": [{"sources.count": 30}], "jobs": 3})
        assert spec.points == ({"sources.count": 30},) and spec.jobs == 3

    def test_empty(self):
        with pytest.raises(ConfigError):
            sweep_from_dict({})

    def test_bad_point_is_located(self):
        with pytest.raises(ConfigError) as exc:
            sweep_from_dict({"points": [{"runs": 1}, {"protocol.variantt": "bpf"}]})
        assert exc.value.path.startswith("points[1]")

    def test_unknown_top_level_key(self, tmp_path):
        p = tmp_path / "sw.yaml"
        p.write_text("axis: {}\n")
        with pytest.raises(ConfigError):
            load_sweep(p)
