import json
import math
import threading
import time

import numpy as np
import pytest
import requests

from conftest import micro_config, random_samples
from fedview.errors import AggregationError, CheckpointError
from fedview.features import default_registry
from fedview.model import ModelParams, init_params, preset
from fedview.server import (ClientUpdate, FLServer, GlobalModelState, ModelService,
                            RoundPolicy, aggregate, load_checkpoint, make_tag, save_checkpoint,
                            should_stop)
from fedview.wire import params_to_payload, payload_to_params, roundtrip_equal
from oracles import fedavg_oracle

DESK = preset("desk", seed=3)


def _update(client_id, num_samples, params, tag="r0-00000000"):
    return ClientUpdate(client_id=client_id, base_tag=tag, num_samples=num_samples,
                        params=params)


def _rand_params(seed, dtype=np.float64):
    params = init_params(micro_config(seed=seed), dtype=dtype)
    return ModelParams(params.layers, config_hash=777)  # one shared architecture id


# ---- aggregate ----

def test_aggregate_single_update_is_identity():
    p = _rand_params(1)
    out = aggregate([_update("a", 10, p)])
    for name in p.layers:
        assert np.array_equal(out.layers[name], p.layers[name])


def test_aggregate_equal_weights_scalar_mean():
    p0, p4 = _rand_params(1), _rand_params(1)
    for name in p0.layers:
        p0.layers[name][:] = 0.0
        p4.layers[name][:] = 4.0
    out = aggregate([_update("a", 5, p0), _update("b", 5, p4)])
    for name in out.layers:
        assert np.allclose(out.layers[name], 2.0)


def test_aggregate_weighted_scalar():
    p0, p4 = _rand_params(1), _rand_params(1)
    for name in p0.layers:
        p0.layers[name][:] = 0.0
        p4.layers[name][:] = 4.0
    out = aggregate([_update("a", 1, p0), _update("b", 3, p4)])
    for name in out.layers:
        assert np.allclose(out.layers[name], 3.0)


def test_aggregate_matches_elementwise_oracle():
    rng = np.random.default_rng(30)
    updates = [_update(f"c{i}", int(rng.integers(1, 400)), _rand_params(100 + i))
               for i in range(4)]
    expected = fedavg_oracle([(u.num_samples, u.params.layers) for u in updates])
    out = aggregate(updates)
    for name in expected:
        assert np.allclose(out.layers[name], expected[name], atol=1e-12, rtol=0)


def test_aggregate_order_and_split_invariance():
    updates = [_update(f"c{i}", 2 * (i + 1), _rand_params(40 + i)) for i in range(3)]
    base = aggregate(updates)
    reordered = aggregate(list(reversed(updates)))
    split = aggregate([_update("c0a", 1, updates[0].params),
                       _update("c0b", 1, updates[0].params),
                       updates[1], updates[2]])
    for name in base.layers:
        assert np.allclose(base.layers[name], reordered.layers[name], atol=1e-12)
        assert np.allclose(base.layers[name], split.layers[name], atol=1e-12)


def test_aggregate_output_within_elementwise_envelope():
    updates = [_update(f"c{i}", int(1 + i * 7), _rand_params(50 + i)) for i in range(5)]
    out = aggregate(updates)
    for name in out.layers:
        stack = np.stack([u.params.layers[name] for u in updates])
        assert np.all(out.layers[name] >= stack.min(axis=0) - 1e-12)
        assert np.all(out.layers[name] <= stack.max(axis=0) + 1e-12)


def test_aggregate_rejects_mixed_architectures_and_empty():
    a = _rand_params(1)
    b = ModelParams({k: v.copy() for k, v in a.layers.items()}, config_hash=a.config_hash + 1)
    with pytest.raises(AggregationError):
        aggregate([_update("a", 1, a), _update("b", 1, b)])
    with pytest.raises(AggregationError):
        aggregate([])
    with pytest.raises(AggregationError):
        aggregate([_update("a", 0, a)])


# ---- early stopping ----

def test_should_stop_improving_never_stops_before_cap():
    history = [(r, f"r{r}-x", 1.0 / (r + 1)) for r in range(1, 30)]
    assert not should_stop(history, patience=7)
    assert should_stop(history, patience=7, max_rounds=29)


def test_should_stop_best_at_10_patience_7():
    losses = {r: (0.5 - 0.01 * r if r <= 10 else 0.6) for r in range(1, 19)}
    history = [(r, "", losses[r]) for r in range(1, 19)]
    assert should_stop(history, patience=7)
    assert not should_stop(history[:17], patience=7)  # round 17 = 10 + 7: still inside


@pytest.mark.parametrize("patience", [7, 11, 20])
def test_stop_happens_at_exactly_k_plus_patience_plus_one(patience):
    k = 5
    stopped_at = None
    history = []
    for r in range(1, 60):
        loss = 1.0 - 0.1 * r if r <= k else 2.0
        history.append((r, "", loss))
        if should_stop(history, patience):
            stopped_at = r
            break
    assert stopped_at == k + patience + 1


def test_should_stop_ignores_nan_losses():
    history = [(1, "", math.nan), (2, "", 0.5)] + [(r, "", math.nan) for r in range(3, 10)]
    assert not should_stop(history, patience=8)
    assert should_stop(history + [(10, "", math.nan), (11, "", math.nan)], patience=8)


def test_make_tag_format():
    tag = make_tag(0, DESK.config_hash)
    assert tag.startswith("r0-") and len(tag) == 11
    assert make_tag(12, DESK.config_hash).startswith("r12-")


# ---- wire + checkpoints ----

def test_params_payload_roundtrip_bit_exact():
    params = init_params(DESK)
    again = payload_to_params(params_to_payload(params))
    assert roundtrip_equal(params, again)
    for name in params.layers:
        assert np.array_equal(params.layers[name], again.layers[name])


def test_payload_rejects_nonfinite():
    from fedview.errors import ProtocolError
    params = init_params(DESK)
    params.layers["out_b"][:] = np.nan
    with pytest.raises(ProtocolError):
        payload_to_params(params_to_payload(params))


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(DESK)
    state = GlobalModelState(params=params, tag=make_tag(5, params.config_hash), round=5,
                             history=[(i, make_tag(i, params.config_hash), 0.5 - 0.01 * i)
                                      for i in range(1, 6)], status="collecting")
    path = tmp_path / "ckpt.json"
    save_checkpoint(state, DESK, path)
    loaded, config = load_checkpoint(path)
    assert loaded.round == 5 and loaded.tag == state.tag
    assert loaded.history == state.history
    assert config == DESK
    assert roundtrip_equal(loaded.params, params)


def test_corrupt_checkpoint_raises(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_text(json.dumps({"kind": "other"}))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")


# ---- FLServer logic ----

def _fl(min_clients=2, validation=None, **kwargs):
    params = init_params(DESK)
    kwargs.setdefault("round_timeout_s", 300.0)
    policy = RoundPolicy(min_clients_per_round=min_clients, **kwargs)
    return FLServer(params, DESK, policy, validation_data=validation)


def test_post_update_stale_tag_conflicts():
    fl = _fl(min_clients=1)
    outcome, info = fl.post_update(ClientUpdate("a", "r9-deadbeef", 5, init_params(DESK)))
    assert outcome == "conflict"
    assert info["tag"] == fl.state.tag


def test_duplicate_client_replaces_buffered_update():
    fl = _fl(min_clients=3)
    tag = fl.state.tag
    first = init_params(preset("desk", seed=7))
    second = init_params(preset("desk", seed=8))
    # config hash includes the seed, so rebrand them as the server architecture
    first = ModelParams(first.layers, fl.state.params.config_hash)
    second = ModelParams(second.layers, fl.state.params.config_hash)
    fl.post_update(ClientUpdate("a", tag, 5, first))
    fl.post_update(ClientUpdate("a", tag, 9, second))
    assert len(fl.buffer) == 1
    assert fl.buffer["a"].num_samples == 9


def test_round_closes_when_min_clients_reached():
    validation = random_samples(DESK, 30, seed=31)
    fl = _fl(min_clients=3, validation=validation)
    tag = fl.state.tag
    p = init_params(DESK)
    assert fl.post_update(ClientUpdate("a", tag, 5, p))[0] == "accepted"
    assert fl.post_update(ClientUpdate("b", tag, 5, p))[0] == "accepted"
    assert fl.state.round == 0
    outcome, info = fl.post_update(ClientUpdate("c", tag, 5, p))
    assert outcome == "accepted" and info["closed"]
    assert fl.state.round == 1
    assert fl.state.tag != tag
    assert len(fl.state.history) == 1
    assert math.isfinite(fl.state.history[0][2])


def test_timeout_with_one_update_closes_round():
    fl = _fl(min_clients=5, round_timeout_s=0.01)
    fl.post_update(ClientUpdate("a", fl.state.tag, 5, init_params(DESK)))
    time.sleep(0.02)
    assert fl.tick()
    assert fl.state.round == 1


def test_server_stops_at_max_rounds():
    fl = _fl(min_clients=1, max_rounds=2)
    for expected_round in (1, 2):
        fl.post_update(ClientUpdate("a", fl.state.tag, 5, init_params(DESK)))
        assert fl.state.round == expected_round
    assert fl.state.status == "stopped"
    assert fl.post_update(ClientUpdate("a", fl.state.tag, 5, init_params(DESK)))[0] == "conflict"


# ---- HTTP protocol ----

@pytest.fixture
def service():
    fl = _fl(min_clients=3, validation=random_samples(DESK, 20, seed=32))
    fl.registry = default_registry(DESK)
    svc = ModelService(fl).start()
    yield fl, svc
    svc.stop()


def test_http_bootstrap_download(service):
    fl, svc = service
    resp = requests.get(f"{svc.url}/model", params={"wait": 0})
    assert resp.status_code == 200
    body = resp.json()
    assert body["tag"] == make_tag(0, fl.state.params.config_hash)
    assert body["round"] == 0
    assert "adfl_tag=" + body["tag"] in resp.headers["Set-Cookie"]
    assert roundtrip_equal(payload_to_params(body), fl.state.params)


def test_http_current_tag_long_poll_times_out_204(service):
    fl, svc = service
    t0 = time.perf_counter()
    resp = requests.get(f"{svc.url}/model", params={"wait": 0.5},
                        headers={"Cookie": f"adfl_tag={fl.state.tag}"})
    assert resp.status_code == 204
    assert time.perf_counter() - t0 >= 0.45


def test_http_stale_tag_gets_model_immediately(service):
    fl, svc = service
    resp = requests.get(f"{svc.url}/model", params={"wait": 30},
                        headers={"Cookie": "adfl_tag=r9-00000000"})
    assert resp.status_code == 200
    assert resp.json()["tag"] == fl.state.tag


def test_http_malformed_tag_rejected(service):
    _fl_, svc = service
    resp = requests.get(f"{svc.url}/model", params={"wait": 0},
                        headers={"Cookie": "adfl_tag=lol"})
    assert resp.status_code == 400


def test_http_update_validation(service):
    fl, svc = service
    resp = requests.post(f"{svc.url}/update", json={"client_id": "x"})
    assert resp.status_code == 400
    body = {"client_id": "x", "base_tag": "r5-00000000", "num_samples": 5, "dp_applied": False}
    body.update(params_to_payload(fl.state.params))
    resp = requests.post(f"{svc.url}/update", json=body)
    assert resp.status_code == 409
    bad = dict(body)
    bad["num_samples"] = 0
    bad["base_tag"] = fl.state.tag
    resp = requests.post(f"{svc.url}/update", json=bad)
    assert resp.status_code == 400


def test_http_three_client_round_releases_held_requests(service):
    fl, svc = service
    current = fl.state.tag
    released = {}

    def held_request():
        resp = requests.get(f"{svc.url}/model", params={"wait": 20},
                            headers={"Cookie": f"adfl_tag={current}"})
        released["status"] = resp.status_code
        released["tag"] = resp.json()["tag"] if resp.status_code == 200 else None

    waiter = threading.Thread(target=held_request)
    waiter.start()
    time.sleep(0.2)
    body_base = {"base_tag": current, "num_samples": 10, "dp_applied": False}
    payload = params_to_payload(fl.state.params)
    for cid in ("a", "b", "c"):
        resp = requests.post(f"{svc.url}/update", json={**body_base, "client_id": cid, **payload})
        assert resp.status_code == 200
    waiter.join(timeout=5)
    assert not waiter.is_alive()
    assert released["status"] == 200
    assert released["tag"] == make_tag(1, fl.state.params.config_hash)
    assert fl.state.round == 1  # advanced exactly once


def test_http_status_and_registry(service):
    fl, svc = service
    status = requests.get(f"{svc.url}/status").json()
    assert status["round"] == 0
    assert status["status"] == "collecting"
    assert status["param_count"] == fl.state.params.count
    assert "comm" in status
    registry_text = requests.get(f"{svc.url}/registry").text
    from fedview.features import parse_registry
    assert parse_registry(registry_text).registry_hash == fl.registry.registry_hash


def test_http_comm_counters_track_payload_bytes(service):
    fl, svc = service
    requests.get(f"{svc.url}/model", params={"wait": 0})
    body = {"client_id": "a", "base_tag": fl.state.tag, "num_samples": 3, "dp_applied": False}
    body.update(params_to_payload(fl.state.params))
    requests.post(f"{svc.url}/update", json=body)
    expected = fl.state.params.count * 4
    assert fl.comm.down_payload_bytes == expected
    assert fl.comm.up_payload_bytes == expected
    assert fl.comm.down_wire_bytes > expected  # base64 + JSON framing
    assert fl.comm.model_downloads == 1 and fl.comm.updates_accepted == 1
