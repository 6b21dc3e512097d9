import json
import warnings

import numpy as np
import pytest

from ttpredict.errors import ConfigError
from ttpredict.grid import build_matrix
from ttpredict.synth import (
    CongestionEvent,
    ScenarioConfig,
    base_speeds,
    default_segments,
    density_for_flow,
    emit_detection_events,
    generate_scenario,
    greenshields_speed,
    random_congestion_events,
    severity_grid,
)
from ttpredict.traffic_core import aggregate_travel_times, match_trip_table


def config(**kw):
    base = dict(segments=default_segments(3), horizon=48, noise_sd_rel=0.0)
    base.update(kw)
    return ScenarioConfig(**base)


def ingest(cfg, truth):
    events = emit_detection_events(truth, cfg)
    end = cfg.start + cfg.step_s * cfg.horizon
    tables = [match_trip_table(events, s)[0] for s in cfg.segments]
    recs = aggregate_travel_times(tables, cfg.interval_len_min, cfg.start, end)
    return build_matrix(recs, [s.segment_id for s in cfg.segments], cfg.start, end, cfg.interval_len_min)


class TestGreenshields:
    @pytest.mark.parametrize("k,expected", [(0, 90.0), (100, 67.5), (200, 45.0), (400, 0.0)])
    def test_examples(self, k, expected):
        assert greenshields_speed(k, 90.0, 400.0) == pytest.approx(expected)

    def test_overfull_clamps_with_warning(self):
        with pytest.warns(RuntimeWarning, match="clamped"):
            assert greenshields_speed(500, 90, 400) == 5.0

    def test_negative_density(self):
        with pytest.raises(ConfigError):
            greenshields_speed(-1, 90, 400)

    def test_density_round_trip(self):
        flow = np.array([0.0, 1000.0, 6000.0])
        k = density_for_flow(flow, 90.0, 400.0)
        u = 90.0 * (1 - k / 400.0)
        assert np.allclose(k * u, flow)

    def test_over_capacity_warns(self):
        with pytest.warns(RuntimeWarning, match="capacity"):
            k = density_for_flow([10_000.0], 90.0, 400.0)
        assert k[0] == pytest.approx(200.0)


class TestScenario:
    def test_free_flow_travel_time(self):
        # empty road, no events, no noise: length / free-flow speed
        m = generate_scenario(config(demand_profile=0.0))
        assert np.allclose(m.values, 3.0 / 90.0, rtol=0, atol=1e-15)

    def test_demand_slows_traffic(self):
        speeds = base_speeds(config(demand_profile=[0.0, 250.0, 500.0]))
        assert speeds[0] == 90.0 and speeds[0] > speeds[1] > speeds[2]

    def test_wave_moves_upstream(self):
        ev = CongestionEvent(origin_segment_index=2, start_interval=10, duration_intervals=3, severity=0.5)
        m = generate_scenario(config(congestion_events=[ev]))
        peaks = [int(np.argmax(row)) for row in m.values]
        # segment 2 first, then one interval later per segment upstream
        assert peaks == [12, 11, 10]

    def test_half_speed_wave(self):
        ev = CongestionEvent(2, 10, 2, 0.5, wave_speed=0.5)
        sev = severity_grid(config(congestion_events=[ev]))
        assert [int(np.flatnonzero(r)[0]) for r in sev] == [14, 12, 10]

    def test_overlapping_events_take_strongest(self):
        evs = [CongestionEvent(0, 5, 4, 0.3), CongestionEvent(0, 6, 1, 0.6)]
        sev = severity_grid(config(congestion_events=evs))
        assert sev[0, 5:9].tolist() == [0.3, 0.6, 0.3, 0.3]

    def test_deterministic(self):
        cfg = config(noise_sd_rel=0.05, seed=4)
        a, b = generate_scenario(cfg), generate_scenario(cfg)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, generate_scenario(config(noise_sd_rel=0.05, seed=5)).values)

    @pytest.mark.parametrize("kw", [dict(horizon=0), dict(segments=[]), dict(penetration=1.5),
                                    dict(interval_len_min=7), dict(demand_profile=-1.0),
                                    dict(congestion_events=[CongestionEvent(5, 0, 1, 0.5)])])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            config(**kw)

    @pytest.mark.parametrize("severity", [0.0, 1.0])
    def test_invalid_severity(self, severity):
        with pytest.raises(ConfigError):
            CongestionEvent(0, 0, 1, severity)


class TestEvents:
    def test_zero_penetration(self):
        cfg = config(penetration=0.0)
        assert len(emit_detection_events(generate_scenario(cfg), cfg)) == 0

    def test_per_segment_streams(self):
        cfg = config(penetration=0.5, noise_sd_rel=0.02)
        truth = generate_scenario(cfg)
        full = emit_detection_events(truth, cfg)
        only = emit_detection_events(truth, cfg, segments=[1])
        part = match_trip_table(full, cfg.segments[1])[0]
        alone = match_trip_table(only, cfg.segments[1])[0]
        assert np.array_equal(part.arrive, alone.arrive)

    def test_noise_free_round_trip(self):
        cfg = config(penetration=1.0, demand_profile=[20.0, 60.0],
                     congestion_events=[CongestionEvent(2, 10, 6, 0.6)])
        truth = generate_scenario(cfg)
        got = ingest(cfg, truth)
        assert got.mask.all()
        assert np.max(np.abs(got.values - truth.values) / truth.values) < 1e-9

    def test_zero_demand_interval_unobserved(self):
        cfg = config(penetration=1.0, demand_profile=[0.0, 30.0, 30.0])
        got = ingest(cfg, generate_scenario(cfg))
        assert not got.mask[:, 0::3].any() and got.mask[:, 1::3].all()


class TestConfigFiles:
    def test_from_dict_with_random_events(self):
        d = {"segments": 3, "horizon": 2880, "random_events": {"per_day": 4.0}}
        a, b = ScenarioConfig.from_dict(d), ScenarioConfig.from_dict(d)
        assert a.congestion_events and a.congestion_events == b.congestion_events
        assert [s.segment_id for s in a.segments] == ["S1", "S2", "S3"]

    def test_dict_round_trip(self, tmp_path):
        cfg = config(demand_profile=[10.0, 20.0], congestion_events=[CongestionEvent(1, 3, 2, 0.4)])
        path = tmp_path / "s.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = ScenarioConfig.load(path)
        assert np.array_equal(generate_scenario(back).values, generate_scenario(cfg).values)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"segments": 2, "horizon": 10, "bogus": 1})

    def test_bad_json(self, tmp_path):
        (tmp_path / "s.json").write_text("{nope")
        with pytest.raises(ConfigError):
            ScenarioConfig.load(tmp_path / "s.json")

    def test_random_events_sorted_and_in_range(self):
        evs = random_congestion_events(np.random.default_rng(0), 3, 2880, per_day=6.0)
        assert evs == sorted(evs, key=lambda e: (e.start_interval, e.origin_segment_index))
        assert all(0 <= e.origin_segment_index < 3 and 0 <= e.start_interval < 2880 for e in evs)


def test_no_warnings_on_normal_scenario():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generate_scenario(config(demand_profile=500.0))
