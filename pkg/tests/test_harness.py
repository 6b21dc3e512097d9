import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mape_sum
from ttpredict.baselines import TrainConfig
from ttpredict.cnn.general import GeneralCnnConfig
from ttpredict.errors import ConfigError, InvalidArgument, NoData
from ttpredict.grid import NormalizationParams, TimeSpaceMatrix, stack_samples, to_iso, window_samples
from ttpredict.harness import (
    REQUIREMENTS,
    compare_methods,
    corridor_scenario,
    data_digest,
    date_split,
    fit_method,
    forecast,
    ingest_events,
    mape,
    mape_detail,
    relative_error,
    run_experiment,
)
from ttpredict.predictors import ExperimentConfig, WindowConfig
from ttpredict.synth import ScenarioConfig, default_segments, emit_detection_events, generate_scenario

FAST = ExperimentConfig(train=TrainConfig(epochs=40),
                        cnn=GeneralCnnConfig(filters=(2, 2), hidden=(4,), epochs=40))
W32 = WindowConfig(3, 2)


@pytest.fixture(scope="module")
def small():
    """Four days of a congested three-segment corridor."""
    return generate_scenario(corridor_scenario(seed=1, days=4))


def boundary_of(m):
    return date_split(m, 0.75)


class TestRelativeError:
    @pytest.mark.parametrize("a,p,expected", [(2, 1, 0.5), (1, 1, 0.0), (0.04, 0.05, 0.25)])
    def test_examples(self, a, p, expected):
        assert relative_error(a, p) == pytest.approx(expected)

    @pytest.mark.parametrize("a", [0, -1])
    def test_nonpositive_actual(self, a):
        with pytest.raises(InvalidArgument):
            relative_error(a, 1)


class TestMape:
    def test_examples(self):
        assert mape([(2, 1), (1, 1)]) == pytest.approx(25.0)
        assert mape([(1, 1.1)] * 4) == pytest.approx(10.0)

    def test_summation_oracle(self):
        rng = np.random.default_rng(0)
        pairs = list(zip(rng.uniform(0.01, 1, 1000), rng.uniform(0.01, 1, 1000)))
        assert mape(pairs) == pytest.approx(mape_sum(pairs), rel=1e-12)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(0, 10)), min_size=1, max_size=30), st.randoms())
    def test_permutation_invariant(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        assert mape(shuffled) == pytest.approx(mape(pairs), rel=1e-12)

    def test_exclusions_counted(self):
        r = mape_detail([1.0, 0.0, np.nan, 2.0], [1.5, 1.0, 1.0, 2.0])
        assert (r.n, r.excluded) == (2, 2) and r.value == pytest.approx(25.0)

    def test_no_valid_pairs(self):
        with pytest.raises(NoData):
            mape_detail([0.0], [1.0])
        with pytest.raises(NoData):
            mape([])


class TestRunExperiment:
    def test_constant_scenario(self):
        cfg = ScenarioConfig(default_segments(3), 200, demand_profile=0.0, noise_sd_rel=0.0)
        m = generate_scenario(cfg)
        for method in ("avg", "linear"):
            r = run_experiment(m, method, W32, date_split(m))
            assert r.overall_mape < 1e-9

    def test_report_fields(self, small):
        r = run_experiment(small, "linear", W32, boundary_of(small))
        assert [s.segment_id for s in r.segments] == ["S1", "S2", "S3"]
        assert r.n_test == sum(s.n_test for s in r.segments)
        assert min(r.per_segment_mape.values()) <= r.overall_mape <= max(r.per_segment_mape.values())

    def test_no_test_leakage(self, small):
        b = boundary_of(small)
        base = run_experiment(small, "nn", W32, b, FAST)
        # wreck everything from the boundary on; training must not notice
        k = int(0.75 * small.shape[1])
        vals = np.array(small.values)
        vals[:, k:] *= 10.0
        broken = TimeSpaceMatrix(small.segment_ids, small.interval_starts, vals, small.mask)
        other = run_experiment(broken, "nn", W32, b, FAST)
        for s0, s1 in zip(base.segments, other.segments):
            assert s0.normalization == s1.normalization
            assert s0.n_train == s1.n_train
        for p0, p1 in zip(base.predictors, other.predictors):
            assert np.array_equal(p0.model.vector(), p1.model.vector())

    def test_normalization_from_train_split_only(self, small):
        b = boundary_of(small)
        r = run_experiment(small, "logistic", WindowConfig(3, 2, 1), b, FAST)
        cut = small.interval_starts[int(0.75 * small.shape[1])]
        samples = [s for s in window_samples(small, 3, 2, 1) if s.target_start < cut]
        X, t = stack_samples(samples)
        ref = NormalizationParams.from_training(np.concatenate([X.ravel(), t]))
        assert r.segments[0].normalization == ref.to_dict()

    def test_reproducible_json(self, small):
        b = boundary_of(small)
        a = run_experiment(small, "cnn-general", W32, b, FAST).to_json()
        c = run_experiment(small, "cnn-general", W32, b, FAST).to_json()
        assert a == c
        json.loads(a)

    def test_config_digest_tracks_relevant_settings(self, small):
        b = boundary_of(small)
        other = ExperimentConfig(train=TrainConfig(epochs=41), cnn=FAST.cnn)
        assert (run_experiment(small, "linear", W32, b, FAST).config_digest
                == run_experiment(small, "linear", W32, b, other).config_digest)
        assert (run_experiment(small, "nn", W32, b, FAST).config_digest
                != run_experiment(small, "nn", W32, b, other).config_digest)

    @pytest.mark.parametrize("boundary", ["2000-01-01", "2100-01-01"])
    def test_empty_split(self, small, boundary):
        with pytest.raises(ConfigError, match="empty"):
            run_experiment(small, "avg", W32, boundary)

    def test_unknown_method(self, small):
        with pytest.raises(ConfigError):
            run_experiment(small, "svm", W32, boundary_of(small))

    def test_window_too_wide(self, small):
        with pytest.raises(ConfigError):
            run_experiment(small, "avg", WindowConfig(3, 2, first_segment=1), boundary_of(small))


class TestCompare:
    def test_single_method(self, small):
        c = compare_methods(small, ["avg"], W32, boundary_of(small))
        assert c.ranking == ["avg"]
        assert len([l for l in c.format_table().splitlines() if l.startswith("avg")]) == 1

    def test_sorted_ascending(self, small):
        c = compare_methods(small, ["avg", "linear", "nn"], W32, boundary_of(small), FAST)
        values = [r.overall_mape for r in c.reports]
        assert values == sorted(values)
        assert c.report("avg").overall_mape == run_experiment(small, "avg", W32, boundary_of(small)).overall_mape

    def test_table_format(self, small):
        c = compare_methods(small, ["linear", "avg"], W32, boundary_of(small))
        lines = c.format_table().splitlines()
        assert lines[0].split() == ["Method", "MAPE", "(%)"]
        body = [l for l in lines if l and l[0] not in "-M"]
        names = [r.method for r in c.reports] + list(REQUIREMENTS)
        assert [l.rsplit(None, 1)[0].strip() for l in body] == names
        for line in body:
            value = line.rsplit(None, 1)[1]
            assert len(value.split(".")[1]) == 2
        assert body[-2].endswith("25.00") and body[-1].endswith("10.00")

    def test_duplicates_collapse(self, small):
        assert compare_methods(small, ["avg", "avg"], W32, boundary_of(small)).ranking == ["avg"]

    def test_empty_method_list(self, small):
        with pytest.raises(ConfigError):
            compare_methods(small, [], W32, boundary_of(small))

    def test_json_round_trip(self, small):
        c = compare_methods(small, ["avg", "linear"], W32, boundary_of(small))
        doc = json.loads(c.to_json())
        assert doc["ranking"] == c.ranking and set(doc["methods"]) == {"avg", "linear"}
        assert doc["data_digest"] == data_digest(small)


class TestForecast:
    def test_forecast_covers_every_window(self, small):
        pred = fit_method(small, "linear", WindowConfig(3, 2, 0), boundary_of(small))
        starts, seg, p, actual = forecast(pred, small)
        assert seg == "S1" and len(p) == small.shape[1] - 2  # anchors y .. N-1
        # the last window forecasts the interval after the matrix
        assert np.isnan(actual[-1]) and np.all(np.isfinite(actual[:-1]))
        assert starts[0] == small.interval_starts[3] and starts[-1] == small.interval_starts[-1] + 300

    def test_needs_target(self, small):
        with pytest.raises(ConfigError):
            fit_method(small, "linear", W32, boundary_of(small))


class TestHelpers:
    def test_date_split(self, small):
        b = date_split(small, 0.5)
        assert b == to_iso(small.interval_starts[small.shape[1] // 2])
        with pytest.raises(ConfigError):
            date_split(small, 1.0)

    def test_corridor_deterministic(self):
        a, b = corridor_scenario(seed=3, days=2), corridor_scenario(seed=3, days=2)
        assert a.congestion_events == b.congestion_events
        d = a.demand()
        assert d.min() == pytest.approx(250) and d.max() == pytest.approx(450)

    def test_ingest_events(self):
        cfg = ScenarioConfig(default_segments(2), 24, demand_profile=30.0, noise_sd_rel=0.0, penetration=1.0)
        truth = generate_scenario(cfg)
        m, stats = ingest_events(emit_detection_events(truth, cfg), cfg.segments, start=cfg.start,
                                 end=cfg.start + 24 * 300)
        assert m.shape == (2, 24)
        assert np.allclose(m.values, truth.values, rtol=1e-9)
        assert stats["S1"].matched > 0

    def test_ingest_nothing(self):
        from ttpredict.traffic_core import EventTable
        empty = EventTable(np.zeros(0, np.int32), np.zeros(0, np.int64), np.zeros(0), ("D0", "D1"))
        with pytest.raises(NoData):
            ingest_events(empty, default_segments(1))
