"""Canonical parameter serialization shared by server, simulated clients, and
the browser client: a (name, shape) manifest in canonical layer order, each
layer's values as little-endian float32, base64-wrapped for textual transport.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .errors import ProtocolError
from .model import ModelConfig, ModelParams, param_shapes

WIRE_DTYPE = np.dtype("<f4")


def params_to_payload(params: ModelParams) -> dict:
    manifest = []
    layers = {}
    for name, arr in params.layers.items():
        wire = np.ascontiguousarray(arr, dtype=WIRE_DTYPE)
        manifest.append([name, list(wire.shape)])
        layers[name] = base64.b64encode(wire.tobytes()).decode("ascii")
    # decimal string: a 64-bit digest does not survive JSON number parsing in JS
    return {"config_hash": str(params.config_hash), "manifest": manifest, "layers": layers}


def payload_to_params(payload: dict, require_finite: bool = True) -> ModelParams:
    try:
        manifest = payload["manifest"]
        encoded = payload["layers"]
        config_hash = int(payload["config_hash"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed params payload: {exc}") from exc
    layers = {}
    for entry in manifest:
        try:
            name, shape = entry[0], tuple(int(d) for d in entry[1])
            raw = base64.b64decode(encoded[name], validate=True)
        except Exception as exc:
            raise ProtocolError(f"bad manifest entry {entry!r}: {exc}") from exc
        expected = int(np.prod(shape)) * WIRE_DTYPE.itemsize
        if len(raw) != expected:
            raise ProtocolError(f"layer {name}: {len(raw)} bytes, expected {expected}")
        arr = np.frombuffer(raw, dtype=WIRE_DTYPE).reshape(shape)
        layers[name] = arr.astype(np.float32)  # native-endian copy
    if require_finite and not all(np.isfinite(a).all() for a in layers.values()):
        raise ProtocolError("payload contains non-finite parameter values")
    return ModelParams(layers, config_hash)


def payload_float_bytes(payload: dict) -> int:
    """Size of the serialized float content (the base64 wrapping excluded)."""
    total = 0
    for _, shape in payload["manifest"]:
        total += int(np.prod(shape)) * WIRE_DTYPE.itemsize
    return total


def expected_float_bytes(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config)) * WIRE_DTYPE.itemsize


def roundtrip_equal(a: ModelParams, b: ModelParams) -> bool:
    if a.config_hash != b.config_hash or set(a.layers) != set(b.layers):
        return False
    return all(
        a.layers[k].shape == b.layers[k].shape
        and np.array_equal(a.layers[k].astype(WIRE_DTYPE), b.layers[k].astype(WIRE_DTYPE))
        for k in a.layers
    )


def dump_json(obj: dict) -> bytes:
    """Deterministic compact JSON encoding used for every wire body."""
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


def load_json(data: bytes) -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"invalid JSON body: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("JSON body must be an object")
    return obj
