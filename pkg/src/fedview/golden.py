"""Golden cross-implementation vectors.

Emits frozen (raw record -> preprocessed vectors), (model, sample) -> forward
probability, and single-SGD-step fixtures that alternative implementations
(the browser client) must reproduce within their stated tolerances.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List

import numpy as np

from .features import Sample, default_registry, preprocess_record
from .model import backward, forward, init_params, preset, sgd_step
from .wire import params_to_payload

_STRING_POOL = ["adplacementTop", "adplacementSide", "bidstream", "adnova", "728x90",
                "300x250", "search.example", "direct", "ua-win-chrome", "ua-ios-safari",
                "en-US", "de-DE", "windows", "ios", "/articles/7", "/articles/23",
                "sports", "tech", "", "unicode-éü中文"]


def _random_raw(rng: np.random.Generator, registry) -> Dict[str, object]:
    """A randomized raw record: plausible values, gaps, and junk types."""
    raw: Dict[str, object] = {}
    for spec in registry.specs:
        roll = rng.random()
        if roll < 0.15:
            continue  # absent
        if roll < 0.25:
            # wrong type for the kind
            raw[spec.name] = (str(rng.integers(1000)) if spec.kind != "categorical"
                              else float(rng.uniform(-5, 5)))
            continue
        if spec.kind == "binary":
            raw[spec.name] = int(rng.integers(0, 2))
        elif spec.kind == "numerical":
            lo, hi = spec.min, spec.max
            span = hi - lo
            raw[spec.name] = float(rng.uniform(lo - 0.3 * span, hi + 0.3 * span))
        else:
            raw[spec.name] = str(_STRING_POOL[int(rng.integers(len(_STRING_POOL)))])
    return raw


def emit_golden(out_dir, n_records: int = 100, seed: int = 2026) -> List[str]:
    """Write the golden fixture files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = preset("desk", seed=11)
    registry = default_registry(config)
    rng = np.random.default_rng(seed)

    registry_path = out / "golden_registry.txt"
    registry.save(registry_path)

    records = []
    samples = []
    for i in range(n_records):
        raw = _random_raw(rng, registry)
        vectors = preprocess_record(raw, registry)
        records.append({"raw": raw, "binary": vectors.binary, "numerical": vectors.numerical,
                        "categorical": vectors.categorical})
        samples.append(Sample(binary=vectors.binary, numerical=vectors.numerical,
                              categorical=vectors.categorical, label_viewable=0,
                              ad_id=f"golden-{i}", registry_hash=registry.registry_hash,
                              timestamp=float(i)))
    records_path = out / "golden_records.json"
    records_path.write_text(json.dumps(
        {"registry_hash": str(registry.registry_hash), "records": records}, indent=1))

    params = init_params(config)
    model_path = out / "golden_model.json"
    model_path.write_text(json.dumps(
        {"config": config.to_dict(), "payload": params_to_payload(params)}, indent=1))

    probs = forward(params, samples)
    forward_path = out / "golden_forward.json"
    forward_path.write_text(json.dumps(
        {"probabilities": [float(p) for p in probs]}, indent=1))

    lr = 0.05
    label = 1
    grads = backward(params, [samples[0]], [label])
    after = sgd_step(params, grads, lr)
    sgd_path = out / "golden_sgd.json"
    sgd_path.write_text(json.dumps(
        {"lr": lr, "label": label, "record_index": 0,
         "after": params_to_payload(after)}, indent=1))

    return [str(p) for p in (registry_path, records_path, model_path, forward_path, sgd_path)]
