"""Simulated browser client.

Replays an ad-event log through the capture -> preprocess -> store -> infer
pipeline, derives viewability labels from visibility intervals, keeps the
local store (the three browser stores: processedData, configuration,
sessionData), and runs the download-train-upload exchange with the
coordination server. Each client owns its state exclusively; everything is
deterministic given (log, state, params, seed).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import requests

from .errors import ClockRegressionError, InputError
from .events import AdEvent
from .features import (AD_CATEGORIES, CONTEXT_CATEGORIES, FeatureRegistry, PreprocessedPart,
                       Sample, SessionState, assemble_sample, compute_session_features,
                       preprocess_part, session_raw_features)
from .hashing import derive_seed
from .model import ModelParams, forward, train_local
from .privacy import DPConfig, privatize_update
from .wire import params_to_payload, payload_to_params

logger = logging.getLogger(__name__)

# IAB display standard: >= 50% of pixels visible for >= 1 continuous second
VIEWABLE_MIN_FRACTION = 0.5
VIEWABLE_MIN_SECONDS = 1.0


def derive_viewability_label(intervals: Sequence) -> int:
    """1 iff any single continuous interval meets the viewability thresholds.

    Accepts AdEvents or (visible_fraction, duration_s) pairs.
    """
    for interval in intervals:
        if isinstance(interval, AdEvent):
            fraction, duration = interval.visible_fraction, interval.duration_s
        else:
            fraction, duration = interval
        if fraction is None or duration is None:
            continue
        if fraction >= VIEWABLE_MIN_FRACTION and duration >= VIEWABLE_MIN_SECONDS:
            return 1
    return 0


@dataclass(frozen=True)
class InvokerConfig:
    low_threshold: float = 0.3
    high_threshold: float = 0.7
    baseline_refresh_s: float = 30.0
    min_refresh_s: float = 15.0
    max_refresh_s: float = 60.0


@dataclass
class InvokerDecision:
    ad_id: str
    predicted_viewable: float
    action: str  # keep_schedule | shorten_refresh | extend_refresh
    new_refresh_s: float


def invoker(prediction: float, current_refresh_s: float,
            config: InvokerConfig = InvokerConfig(), ad_id: str = "") -> InvokerDecision:
    """Map a viewability prediction onto a refresh-interval adjustment."""
    if prediction < config.low_threshold:
        new = max(config.min_refresh_s, current_refresh_s / 2.0)
        action = "shorten_refresh"
    elif prediction > config.high_threshold:
        new = min(config.max_refresh_s, current_refresh_s * 1.5)
        action = "extend_refresh"
    else:
        new = current_refresh_s
        action = "keep_schedule"
    return InvokerDecision(ad_id=ad_id, predicted_viewable=float(prediction),
                           action=action, new_refresh_s=new)


@dataclass
class MetricUpdate:
    ad_id: str
    metric: str = "viewable"
    value: int = 0
    flag: str = "update"  # storage | update | inference

    def __post_init__(self):
        if self.flag not in ("storage", "update", "inference"):
            raise InputError(f"unknown metric flag {self.flag!r}")


class ClientStore:
    """The client-side persistent store, mirroring the three browser stores."""

    PROCESSED = "processedData"
    CONFIGURATION = "configuration"
    SESSION = "sessionData"

    def __init__(self, backing_dir: Optional[Path] = None):
        self.backing_dir = Path(backing_dir) if backing_dir else None
        self.processed: Dict[str, Sample] = {}
        self.configuration: Dict[str, object] = {}
        self.session = SessionState()

    def add_sample(self, sample: Sample) -> None:
        self.processed[sample.ad_id] = sample

    def samples(self) -> List[Sample]:
        return list(self.processed.values())

    def flush(self) -> None:
        if self.backing_dir is None:
            return
        self.backing_dir.mkdir(parents=True, exist_ok=True)
        with open(self.backing_dir / f"{self.PROCESSED}.jsonl", "w", encoding="utf-8") as fh:
            for sample in self.processed.values():
                fh.write(sample.to_json_line() + "\n")
        with open(self.backing_dir / f"{self.CONFIGURATION}.json", "w", encoding="utf-8") as fh:
            json.dump(self.configuration, fh)
        with open(self.backing_dir / f"{self.SESSION}.json", "w", encoding="utf-8") as fh:
            json.dump(self.session.to_dict(), fh)

    @classmethod
    def load(cls, backing_dir) -> "ClientStore":
        store = cls(backing_dir=backing_dir)
        processed = store.backing_dir / f"{cls.PROCESSED}.jsonl"
        if processed.exists():
            with open(processed, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        store.add_sample(Sample.from_json_line(line))
        config_path = store.backing_dir / f"{cls.CONFIGURATION}.json"
        if config_path.exists():
            store.configuration = json.loads(config_path.read_text(encoding="utf-8"))
        session_path = store.backing_dir / f"{cls.SESSION}.json"
        if session_path.exists():
            store.session = SessionState.from_dict(json.loads(session_path.read_text(encoding="utf-8")))
        return store


@dataclass
class ClientState:
    client_id: str
    store: ClientStore = field(default_factory=ClientStore)
    local_params: Optional[ModelParams] = None
    model_tag_cookie: Optional[str] = None
    static_cache: Optional[PreprocessedPart] = None
    refresh_s: Dict[str, float] = field(default_factory=dict)
    anomalies: int = 0
    warnings: List[str] = field(default_factory=list)
    metric_trace: List[MetricUpdate] = field(default_factory=list)


def replay(log: Sequence[AdEvent], state: ClientState, registry: FeatureRegistry,
           params: Optional[ModelParams] = None,
           invoker_config: InvokerConfig = InvokerConfig(),
           ) -> Tuple[ClientState, List[Sample], List[InvokerDecision]]:
    """Replay a time-ordered event log through the full client pipeline.

    page_request: session update + contextual capture into the static cache.
    ad_load: ad capture, preprocess, assemble (label 0), store, then inference
    and a refresh decision when a model is present.
    visibility_interval: an update-flagged metric mutating the stored label.
    session_end: flush the store (data is saved before unloading).

    Malformed or out-of-order events are skipped and counted, never fatal.
    """
    new_samples: List[Sample] = []
    decisions: List[InvokerDecision] = []
    last_ts: Optional[float] = None
    for event in log:
        if event.kind not in ("page_request", "ad_load", "visibility_interval", "session_end"):
            state.anomalies += 1
            continue
        if last_ts is not None and event.timestamp < last_ts:
            state.anomalies += 1
            state.warnings.append(f"out-of-order event at {event.timestamp} (kind={event.kind})")
            continue
        last_ts = event.timestamp

        if event.kind == "page_request":
            try:
                state.store.session = compute_session_features(
                    state.store.session, event.timestamp, event.page_url or "")
            except ClockRegressionError as exc:
                state.anomalies += 1
                state.warnings.append(str(exc))
                continue
            raw = dict(event.ad_metadata or {})
            if event.page_url is not None:
                raw["page_url"] = event.page_url
            raw.update(session_raw_features(state.store.session))
            context = preprocess_part(raw, registry, CONTEXT_CATEGORIES)
            state.anomalies += context.anomalies
            state.static_cache = context

        elif event.kind == "ad_load":
            if event.ad_id is None:
                state.anomalies += 1
                continue
            raw = dict(event.ad_metadata or {})
            if event.ad_placement_id is not None:
                raw["ad_placement_id"] = event.ad_placement_id
            ad_part = preprocess_part(raw, registry, AD_CATEGORIES)
            state.anomalies += ad_part.anomalies
            context = state.static_cache
            if context is None:
                # ad arrived before any page capture: context is all defaults
                context = preprocess_part({}, registry, CONTEXT_CATEGORIES)
            sample = assemble_sample(ad_part, context, event.ad_id, event.timestamp, registry)
            state.store.add_sample(sample)
            state.metric_trace.append(MetricUpdate(event.ad_id, value=0, flag="storage"))
            new_samples.append(sample)
            if params is not None:
                prob = float(forward(params, [sample])[0])
                state.metric_trace.append(MetricUpdate(event.ad_id, value=0, flag="inference"))
                placement = event.ad_placement_id or ""
                current = state.refresh_s.get(placement, invoker_config.baseline_refresh_s)
                decision = invoker(prob, current, invoker_config, ad_id=event.ad_id)
                state.refresh_s[placement] = decision.new_refresh_s
                decisions.append(decision)

        elif event.kind == "visibility_interval":
            sample = state.store.processed.get(event.ad_id or "")
            if sample is None:
                state.anomalies += 1
                state.warnings.append(f"visibility interval for unknown ad {event.ad_id!r}")
                continue
            qualifies = derive_viewability_label([event])
            state.metric_trace.append(MetricUpdate(event.ad_id, value=qualifies, flag="update"))
            if qualifies and sample.label_viewable == 0:
                sample.label_viewable = 1

        else:  # session_end
            state.store.flush()
    return state, new_samples, decisions


def chronological_split(samples: Sequence[Sample],
                        fractions: Tuple[float, float] = (0.8, 0.1),
                        ) -> Tuple[List[Sample], List[Sample], List[Sample]]:
    """Time-ordered train/validation/test split (default 80:10:10)."""
    ordered = sorted(samples, key=lambda s: s.timestamp)
    n = len(ordered)
    n_train = max(1, int(fractions[0] * n))
    n_val = int(fractions[1] * n)
    return ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:]


@dataclass
class TrainingConfig:
    local_rounds: int = 15
    batch_size: int = 32
    min_samples: int = 50
    lr: float = 1e-3
    seed: int = 0
    dp: Optional[DPConfig] = None
    wait_s: float = 0.0
    retries: int = 3
    backoff_s: float = 0.2


class ServerClient:
    """Thin HTTP client for the coordination service.

    Every outbound request is appended to `outbox` as (method, path, body) so
    tests can assert that nothing but model parameters ever leaves the client.
    """

    def __init__(self, base_url: str, timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.session = requests.Session()
        self.outbox: List[Tuple[str, str, Optional[dict]]] = []

    def get_model(self, tag: Optional[str], wait_s: float = 0.0) -> Tuple[int, Optional[dict]]:
        self.outbox.append(("GET", "/model", None))
        headers = {"Cookie": f"adfl_tag={tag}"} if tag else {}
        resp = self.session.get(f"{self.base_url}/model", params={"wait": wait_s},
                                headers=headers, timeout=self.timeout_s + wait_s)
        if resp.status_code == 200:
            return 200, resp.json()
        return resp.status_code, None

    def post_update(self, body: dict) -> Tuple[int, dict]:
        self.outbox.append(("POST", "/update", body))
        resp = self.session.post(f"{self.base_url}/update", json=body, timeout=self.timeout_s)
        try:
            payload = resp.json()
        except ValueError:
            payload = {}
        return resp.status_code, payload

    def get_status(self) -> dict:
        self.outbox.append(("GET", "/status", None))
        resp = self.session.get(f"{self.base_url}/status", timeout=self.timeout_s)
        resp.raise_for_status()
        return resp.json()

    def get_registry_text(self) -> str:
        self.outbox.append(("GET", "/registry", None))
        resp = self.session.get(f"{self.base_url}/registry", timeout=self.timeout_s)
        resp.raise_for_status()
        return resp.text


def _fetch_model(state: ClientState, server: ServerClient, training: TrainingConfig) -> Optional[str]:
    """Download the latest global model if newer; returns the base tag or None."""
    for attempt in range(training.retries):
        try:
            status, payload = server.get_model(state.model_tag_cookie, wait_s=training.wait_s)
        except requests.RequestException as exc:
            logger.warning("client %s: model fetch failed (%s), attempt %d",
                           state.client_id, exc, attempt + 1)
            time.sleep(training.backoff_s * (attempt + 1))
            continue
        if status == 200 and payload is not None:
            state.local_params = payload_to_params(payload)
            state.model_tag_cookie = payload["tag"]
            return payload["tag"]
        if status == 204:
            # nothing newer than the cookie tag: wait for the next release
            return None
        logger.warning("client %s: unexpected /model status %s", state.client_id, status)
        return None
    return None


def client_fl_round(state: ClientState, server: "ServerClient | str",
                    training: TrainingConfig) -> ClientState:
    """One federated round: download if newer, train locally, upload the update.

    Skips silently when the store holds fewer than `min_samples` samples. A
    stale-tag rejection triggers one re-download + retrain + re-upload.
    """
    if isinstance(server, str):
        server = ServerClient(server)
    samples = state.store.samples()
    if len(samples) < training.min_samples:
        logger.debug("client %s: %d samples < min %d, skipping round",
                     state.client_id, len(samples), training.min_samples)
        return state

    for attempt in range(2):
        base_tag = _fetch_model(state, server, training)
        if base_tag is None or state.local_params is None:
            return state
        train_split, _val, _test = chronological_split(samples)
        if not train_split:
            return state
        seed = derive_seed(training.seed, state.client_id, base_tag)
        global_params = state.local_params
        trained, _losses = train_local(global_params, train_split, training.local_rounds,
                                       training.batch_size, seed=seed, lr=training.lr)
        upload = trained
        dp_applied = False
        if training.dp is not None and training.dp.enabled:
            upload = privatize_update(trained, global_params, training.dp,
                                      seed=derive_seed(training.dp.seed, state.client_id, base_tag))
            dp_applied = True
        body = {"client_id": state.client_id, "base_tag": base_tag,
                "num_samples": len(train_split), "dp_applied": dp_applied}
        body.update(params_to_payload(upload))
        try:
            status, _resp = server.post_update(body)
        except requests.RequestException as exc:
            logger.warning("client %s: upload failed (%s)", state.client_id, exc)
            return state
        if status == 200:
            state.local_params = trained
            return state
        if status == 409 and attempt == 0:
            logger.debug("client %s: stale tag %s, re-syncing", state.client_id, base_tag)
            continue
        logger.warning("client %s: upload rejected with status %s", state.client_id, status)
        return state
    return state
