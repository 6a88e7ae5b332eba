import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedview.errors import AssemblyError, ClockRegressionError, ConfigError
from fedview.features import (AD_CATEGORIES, CONTEXT_CATEGORIES, FeatureRegistry, FeatureSpec,
                              Sample, SessionState, assemble_sample, compute_session_features,
                              default_registry, minmax_scale, parse_registry, preprocess_part,
                              preprocess_record, session_raw_features)
from fedview.hashing import fnv1a64, hash_encode
from fedview.model import ModelConfig
from oracles import independent_preprocess


def _minmax_spec(lo=0.0, hi=6000.0, default=1000.0, name="page_height"):
    return FeatureSpec(name, "page", "numerical", "minmax", min=lo, max=hi,
                       default=default).validate()


# ---- minmax ----

def test_minmax_endpoints():
    spec = _minmax_spec()
    assert minmax_scale(0.0, spec) == 0.0
    assert minmax_scale(6000.0, spec) == 1.0


def test_minmax_clamps_out_of_range():
    spec = _minmax_spec()
    assert minmax_scale(-100.0, spec) == 0.0
    assert minmax_scale(99999.0, spec) == 1.0


def test_minmax_page_height_quarter():
    assert minmax_scale(1500.0, _minmax_spec()) == pytest.approx(0.25)


def test_minmax_absent_and_nonfinite_use_default():
    spec = _minmax_spec(default=1500.0)
    assert minmax_scale(None, spec) == pytest.approx(0.25)
    assert minmax_scale(float("nan"), spec) == pytest.approx(0.25)
    assert minmax_scale(float("inf"), spec) == pytest.approx(0.25)


# ---- spec validation ----

def test_spec_minmax_requires_ordered_bounds():
    with pytest.raises(ConfigError):
        FeatureSpec("x", "page", "numerical", "minmax", min=5.0, max=5.0, default=5.0).validate()
    with pytest.raises(ConfigError):
        FeatureSpec("x", "page", "numerical", "minmax", min=0.0, max=1.0, default=2.0).validate()


def test_spec_hash_requires_buckets_and_default():
    with pytest.raises(ConfigError):
        FeatureSpec("x", "ad", "categorical", "hash", buckets=1, default="d").validate()
    with pytest.raises(ConfigError):
        FeatureSpec("x", "ad", "categorical", "hash", buckets=8, default=None).validate()


def test_spec_binary_default_must_be_bit():
    with pytest.raises(ConfigError):
        FeatureSpec("x", "ad", "binary", "passthrough_binary", default=2).validate()


# ---- registry ----

def test_registry_counts_and_order(registry, desk_config):
    assert registry.counts() == (3, 14, 9)
    registry.check_config(desk_config)
    kinds = [s.kind for s in registry.specs]
    assert kinds == sorted(kinds, key=("binary", "numerical", "categorical").index)


def test_registry_rejects_duplicate_names():
    spec = FeatureSpec("dup", "ad", "binary", "passthrough_binary", default=0)
    with pytest.raises(ConfigError):
        FeatureRegistry([spec, spec])


def test_registry_rejects_wrong_partition_order():
    specs = [
        FeatureSpec("n", "page", "numerical", "minmax", min=0.0, max=1.0, default=0.0),
        FeatureSpec("b", "ad", "binary", "passthrough_binary", default=0),
    ]
    with pytest.raises(ConfigError):
        FeatureRegistry(specs)


def test_registry_bucket_mismatch_rejected(registry):
    with pytest.raises(ConfigError):
        registry.check_config(ModelConfig(hash_buckets=128))


def test_registry_canonical_roundtrip(registry):
    text = registry.canonical_text()
    parsed = parse_registry(text)
    assert parsed.registry_hash == registry.registry_hash
    assert parsed.canonical_text() == text
    assert registry.registry_hash == fnv1a64(text)


def test_registry_save_load_roundtrip(registry, tmp_path):
    path = tmp_path / "registry.txt"
    registry.save(path)
    from fedview.features import load_registry
    assert load_registry(path).registry_hash == registry.registry_hash


# ---- preprocessing ----

def test_empty_record_is_all_defaults(registry):
    vectors = preprocess_record({}, registry)
    expected_binary = [spec.default for spec in registry.binary]
    expected_numerical = [minmax_scale(None, spec) for spec in registry.numerical]
    expected_categorical = [hash_encode(spec.default, spec.buckets)
                            for spec in registry.categorical]
    assert vectors.binary == expected_binary
    assert vectors.numerical == expected_numerical
    assert vectors.categorical == expected_categorical
    assert vectors.anomalies == 0


def test_preprocess_is_pure(registry):
    raw = {"page_height": 3000.0, "user_agent": "ua-win-chrome", "is_mobile": 1}
    a = preprocess_record(raw, registry)
    b = preprocess_record(dict(raw), registry)
    assert (a.binary, a.numerical, a.categorical) == (b.binary, b.numerical, b.categorical)


def test_wrong_typed_values_fall_back_with_anomaly(registry):
    raw = {"page_height": "tall", "user_agent": 123, "is_mobile": "yes"}
    vectors = preprocess_record(raw, registry)
    clean = preprocess_record({}, registry)
    assert vectors.binary == clean.binary
    assert vectors.numerical == clean.numerical
    assert vectors.categorical == clean.categorical
    assert vectors.anomalies == 3


def test_100_random_records_match_independent_script(registry):
    import numpy as np
    rng = np.random.default_rng(99)
    pool = ["", "a", "adplacementTop", "ua-ios-safari", "/articles/3", "300x250", "direct"]
    for _ in range(100):
        raw = {}
        for spec in registry.specs:
            roll = rng.random()
            if roll < 0.2:
                continue
            if roll < 0.3:
                raw[spec.name] = "junk" if spec.kind != "categorical" else 3.14
            elif spec.kind == "binary":
                raw[spec.name] = int(rng.integers(0, 2))
            elif spec.kind == "numerical":
                raw[spec.name] = float(rng.uniform(-1e4, 3e4))
            else:
                raw[spec.name] = pool[int(rng.integers(len(pool)))]
        ours = preprocess_record(raw, registry)
        theirs = independent_preprocess(raw, registry.specs)
        assert ours.binary == theirs["binary"]
        assert ours.categorical == theirs["categorical"]
        assert ours.numerical == pytest.approx(theirs["numerical"], abs=0)


_junk_values = st.one_of(st.none(), st.booleans(), st.integers(-10**6, 10**6),
                         st.floats(allow_nan=True, allow_infinity=True),
                         st.text(max_size=20))


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.sampled_from(
    ["page_height", "ad_width", "user_agent", "is_mobile", "visits_count",
     "page_url", "nonsense_key"]), _junk_values, max_size=7))
def test_preprocessing_total_and_in_range(raw):
    registry = default_registry(ModelConfig())
    vectors = preprocess_record(raw, registry)
    assert len(vectors.binary) == 3
    assert len(vectors.numerical) == 14
    assert len(vectors.categorical) == 9
    assert all(v in (0, 1) for v in vectors.binary)
    assert all(0.0 <= v <= 1.0 and math.isfinite(v) for v in vectors.numerical)
    assert all(0 <= v < 64 for v in vectors.categorical)


# ---- assemble ----

def test_assemble_label_starts_negative(registry):
    ad = preprocess_part({"ad_width": 728.0}, registry, AD_CATEGORIES)
    ctx = preprocess_part({"page_height": 500.0}, registry, CONTEXT_CATEGORIES)
    sample = assemble_sample(ad, ctx, "ad-1", 12.5, registry)
    assert sample.label_viewable == 0
    assert sample.ad_id == "ad-1"
    assert sample.registry_hash == registry.registry_hash


def test_assemble_layout_is_canonical_regardless_of_part_contents(registry):
    raw = {"ad_width": 728.0, "page_height": 500.0, "user_agent": "ua-mac-safari"}
    ad = preprocess_part(raw, registry, AD_CATEGORIES)
    ctx = preprocess_part(raw, registry, CONTEXT_CATEGORIES)
    sample = assemble_sample(ad, ctx, "x", 0.0, registry)
    full = preprocess_record(raw, registry)
    assert sample.binary == full.binary
    assert sample.numerical == full.numerical
    assert sample.categorical == full.categorical


def test_assemble_rejects_registry_mismatch(registry):
    other = default_registry(ModelConfig(hash_buckets=128, seed=1))
    ad = preprocess_part({}, other, AD_CATEGORIES)
    ctx = preprocess_part({}, registry, CONTEXT_CATEGORIES)
    with pytest.raises(AssemblyError):
        assemble_sample(ad, ctx, "x", 0.0, registry)


def test_sample_json_roundtrip(registry):
    vectors = preprocess_record({"ad_width": 300.0}, registry)
    sample = Sample(vectors.binary, vectors.numerical, vectors.categorical, 1, "a9",
                    registry.registry_hash, 77.0)
    again = Sample.from_json_line(sample.to_json_line())
    assert again == sample


# ---- sessions ----

def test_first_request_starts_session():
    state = compute_session_features(SessionState(), 1000.0, "/a")
    assert state.pages_this_session == 1
    assert state.visits_count == 1
    assert state.pages_visited_total == 1
    assert state.seconds_since_last_visit == pytest.approx(30 * 86400.0)
    raw = session_raw_features(state)
    assert raw["is_returning_visitor"] == 0


def test_second_request_within_session():
    state = compute_session_features(SessionState(), 1000.0, "/a")
    state = compute_session_features(state, 1100.0, "/b")
    assert state.pages_this_session == 2
    assert state.visits_count == 1
    assert state.seconds_since_last_visit == pytest.approx(100.0)


def test_gap_over_timeout_starts_new_session():
    state = compute_session_features(SessionState(), 1000.0, "/a")
    first_id = state.session_id
    state = compute_session_features(state, 1000.0 + 31 * 60, "/b")
    assert state.session_id != first_id
    assert state.visits_count == 2
    assert state.pages_this_session == 1
    assert state.pages_visited_total == 2
    assert session_raw_features(state)["is_returning_visitor"] == 1


def test_session_replay_oracle_over_event_list():
    # fold a scripted request list and cross-check the derived counters by hand
    times = [0.0, 120.0, 240.0, 240.0 + 1900.0, 240.0 + 1900.0 + 60.0]
    state = SessionState()
    for t in times:
        state = compute_session_features(state, t, f"/p{t}")
    # gaps: 120, 120 (same session), 1900 (> 1800 timeout -> new), 60 (same)
    assert state.visits_count == 2
    assert state.pages_visited_total == 5
    assert state.pages_this_session == 2
    assert len(state.prior_page_requests) == 5


def test_clock_regression_rejected():
    state = compute_session_features(SessionState(), 1000.0, "/a")
    with pytest.raises(ClockRegressionError):
        compute_session_features(state, 999.0, "/b")


def test_session_state_dict_roundtrip():
    state = compute_session_features(SessionState(), 5.0, "/a")
    state = compute_session_features(state, 10.0, "/b")
    assert SessionState.from_dict(state.to_dict()) == state
