"""Latency/memory micro-benchmark over a production-sized 374-sample client."""

from __future__ import annotations

import resource
import time
from typing import Dict, List

import numpy as np

from .client import ClientState, replay
from .datagen import GenConfig, generate
from .features import default_registry, preprocess_record, session_raw_features, SessionState, \
    compute_session_features
from .model import forward, init_params, preset, train_local


def _collect_raw_records(events, limit: int) -> List[dict]:
    """Raw per-ad records as the capture pipeline would hand them to preprocessing."""
    records = []
    session = SessionState()
    context: dict = {}
    for event in events:
        if event.kind == "page_request":
            session = compute_session_features(session, event.timestamp, event.page_url or "")
            context = dict(event.ad_metadata or {})
            context["page_url"] = event.page_url
            context.update(session_raw_features(session))
        elif event.kind == "ad_load":
            raw = dict(context)
            raw.update(event.ad_metadata or {})
            raw["ad_placement_id"] = event.ad_placement_id
            records.append(raw)
            if len(records) >= limit:
                break
    return records


def run_benchmark(preset_name: str = "full", n_samples: int = 374, local_rounds: int = 15,
                  batch_size: int = 32, repeats: int = 10, seed: int = 7) -> Dict:
    """Measure preprocess ms/sample, inference ms/sample, and train ms/round.

    Timing repeats >= 10; memory is the process peak RSS (report-only).
    """
    repeats = max(repeats, 10)
    config = preset(preset_name, seed=seed)
    registry = default_registry(config)
    gen = GenConfig(n_users=1, days=10, min_samples_per_user=n_samples,
                    top_rate_per_day=n_samples / 10.0, seed=seed)
    logs, _manifest = generate(gen, registry)
    events = logs["u0000"]
    raw_records = _collect_raw_records(events, n_samples)

    state = ClientState(client_id="bench")
    replay(events, state, registry)
    samples = state.store.samples()[:n_samples]
    params = init_params(config)

    preprocess_ms = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for raw in raw_records:
            preprocess_record(raw, registry)
        preprocess_ms.append((time.perf_counter() - t0) * 1000.0 / len(raw_records))

    inference_ms = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for sample in samples:
            forward(params, [sample])
        inference_ms.append((time.perf_counter() - t0) * 1000.0 / len(samples))

    train_ms = []
    for rep in range(max(repeats, local_rounds)):
        t0 = time.perf_counter()
        train_local(params, samples, rounds=1, batch_size=batch_size, seed=rep)
        train_ms.append((time.perf_counter() - t0) * 1000.0)

    def stats(values):
        return {"mean": float(np.mean(values)), "std": float(np.std(values))}

    return {
        "preset": preset_name,
        "n_samples": len(samples),
        "local_rounds": local_rounds,
        "preprocess_ms_per_sample": stats(preprocess_ms),
        "inference_ms_per_sample": stats(inference_ms),
        "train_ms_per_round": stats(train_ms),
        "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0,
    }


def format_benchmark(result: Dict) -> str:
    lines = [f"benchmark: preset={result['preset']} samples={result['n_samples']}"]
    for key in ("preprocess_ms_per_sample", "inference_ms_per_sample", "train_ms_per_round"):
        row = result[key]
        lines.append(f"  {key:28s} {row['mean']:10.4f} +/- {row['std']:.4f}")
    lines.append(f"  {'peak_rss_mb':28s} {result['peak_rss_mb']:10.1f}")
    return "\n".join(lines)
