import math

import numpy as np
import pytest

from fedview.errors import ConfigError, InputError
from fedview.model import ModelParams, init_params
from fedview.privacy import DPConfig, clip_delta, flat_l2_norm, noise_sigma, privatize_update

from conftest import micro_config


def _delta(norm, size=400, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v *= norm / np.linalg.norm(v)
    return {"w": v[: size // 2].copy(), "b": v[size // 2:].copy()}


def test_dp_config_validation():
    with pytest.raises(ConfigError):
        DPConfig(epsilon=0.0).validate()
    with pytest.raises(ConfigError):
        DPConfig(epsilon=1.0, delta=0.0).validate()
    with pytest.raises(ConfigError):
        DPConfig(epsilon=1.0, clip_norm=0.0).validate()
    DPConfig(epsilon=0.1).validate()


def test_clip_inside_ball_unchanged():
    delta = _delta(0.5)
    clipped = clip_delta(delta, 1.0)
    for k in delta:
        assert np.array_equal(clipped[k], delta[k])


def test_clip_at_twice_the_bound_halves_everything():
    delta = _delta(2.0)
    clipped = clip_delta(delta, 1.0)
    for k in delta:
        assert np.allclose(clipped[k], delta[k] / 2.0, rtol=1e-12)
    assert flat_l2_norm(clipped) == pytest.approx(1.0, abs=1e-9)


def test_clip_norm_matches_independent_oracle():
    rng = np.random.default_rng(5)
    for trial in range(20):
        delta = {"a": rng.standard_normal(37) * rng.uniform(0.1, 5),
                 "b": rng.standard_normal((5, 9)) * rng.uniform(0.1, 5)}
        # independent norm: plain python sum of squares
        norm = math.sqrt(sum(float(x) ** 2 for arr in delta.values() for x in arr.ravel()))
        clipped = clip_delta(delta, 1.0)
        assert flat_l2_norm(clipped) == pytest.approx(min(norm, 1.0), abs=1e-9)


def test_noise_sigma_formula():
    expected = math.sqrt(2.0 * math.log(1.25 / 1e-5))
    assert noise_sigma(1.0, 1e-5, 1.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(4.84481, abs=1e-4)


def test_noise_sigma_scalings():
    assert noise_sigma(0.1, 1e-5, 1.0) / noise_sigma(1.0, 1e-5, 1.0) == pytest.approx(10.0)
    assert noise_sigma(1.0, 1e-5, 2.0) == pytest.approx(2 * noise_sigma(1.0, 1e-5, 1.0))


def test_privatize_disabled_is_identity():
    params = init_params(micro_config(seed=1))
    out = privatize_update(params, params, DPConfig(epsilon=1.0, enabled=False))
    assert out is params


def test_privatize_zero_delta_noise_moments():
    big = ModelParams({"w": np.zeros((500, 300), dtype=np.float32)}, config_hash=1)
    dp = DPConfig(epsilon=1.0, delta=1e-5, clip_norm=1.0, seed=9)
    out = privatize_update(big, big, dp)
    noise = out.layers["w"].astype(np.float64)
    sigma = noise_sigma(1.0, 1e-5, 1.0)
    assert noise.size >= 1e5
    assert abs(noise.mean()) < 0.05 * sigma
    assert noise.std() == pytest.approx(sigma, rel=0.05)


def test_privatize_deterministic_per_seed():
    params = init_params(micro_config(seed=2))
    local = ModelParams({k: v + 0.01 for k, v in params.layers.items()}, params.config_hash)
    dp = DPConfig(epsilon=0.5, seed=4)
    a = privatize_update(local, params, dp)
    b = privatize_update(local, params, dp)
    c = privatize_update(local, params, dp, seed=123)
    assert all(np.array_equal(a.layers[k], b.layers[k]) for k in a.layers)
    assert any(not np.array_equal(a.layers[k], c.layers[k]) for k in a.layers)


def test_privatize_with_infinite_epsilon_is_pure_clipping():
    params = init_params(micro_config(seed=3), dtype=np.float64)
    local = ModelParams({k: v + 0.05 for k, v in params.layers.items()}, params.config_hash)
    dp = DPConfig(epsilon=math.inf, clip_norm=1.0)
    out = privatize_update(local, params, dp)
    delta = {k: local.layers[k] - params.layers[k] for k in params.layers}
    clipped = clip_delta(delta, 1.0)
    for k in params.layers:
        assert np.allclose(out.layers[k], params.layers[k] + clipped[k], atol=1e-12)
    # deterministic part of the privatized delta never exceeds the clip bound
    assert flat_l2_norm({k: out.layers[k] - params.layers[k] for k in out.layers}) <= 1.0 + 1e-9


def test_privatize_rejects_shape_mismatch():
    a = init_params(micro_config(seed=1))
    b = init_params(micro_config(seed=1))
    b.layers["out_w"] = np.zeros(7, dtype=np.float32)
    with pytest.raises(InputError):
        privatize_update(a, b, DPConfig(epsilon=1.0))
