"""Coordination server: versioned model distribution, update collection,
dataset-size-weighted averaging, round lifecycle with early stopping, and
checkpoints.

The service speaks a small JSON protocol:
  GET  /model    - current model (long-polls while the caller's tag is current)
  POST /update   - one client's locally trained parameters
  GET  /status   - round/status/history plus communication counters
  GET  /registry - canonical feature registry document

Aggregation-and-release is atomic: no reader ever observes a tag whose
parameters are partially written, and held long-poll requests are released
exactly once per new tag.
"""

from __future__ import annotations

import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import AggregationError, CheckpointError, ProtocolError
from .features import FeatureRegistry
from .model import ModelConfig, ModelParams, evaluate
from .wire import dump_json, load_json, params_to_payload, payload_float_bytes, payload_to_params

logger = logging.getLogger(__name__)

TAG_PATTERN = re.compile(r"^r(\d+)-[0-9a-f]{8}$")
DEFAULT_LONG_POLL_S = 30.0


def make_tag(round_num: int, config_hash: int) -> str:
    return f"r{round_num}-{config_hash & 0xFFFFFFFF:08x}"


@dataclass
class RoundPolicy:
    min_clients_per_round: int = 1
    round_timeout_s: float = 30.0
    max_rounds: int = 100
    patience: int = 7
    selection: str = "all"  # all | top_k_by_samples

    def validate(self) -> "RoundPolicy":
        if self.min_clients_per_round < 1:
            raise AggregationError("min_clients_per_round must be >= 1")
        if self.patience < 1:
            raise AggregationError("patience must be >= 1")
        return self


@dataclass
class ClientUpdate:
    client_id: str
    base_tag: str
    num_samples: int
    params: ModelParams
    dp_applied: bool = False


@dataclass
class GlobalModelState:
    params: ModelParams
    tag: str
    round: int
    history: List[Tuple[int, str, float]] = field(default_factory=list)
    status: str = "collecting"  # collecting | aggregating | stopped


def aggregate(updates: Sequence[ClientUpdate]) -> ModelParams:
    """FedAvg: element-wise dataset-size-weighted mean of client parameters.

    Accumulates in float64 and returns in the updates' dtype; invariant under
    update reordering and under splitting one update's weight in two.
    """
    if not updates:
        raise AggregationError("no updates to aggregate")
    first = updates[0].params
    config_hash = first.config_hash
    base_tag = updates[0].base_tag
    for u in updates:
        if u.params.config_hash != config_hash:
            raise AggregationError("updates carry mixed model architectures")
        if u.base_tag != base_tag:
            raise AggregationError("updates trained from different base tags")
        if u.num_samples < 1:
            raise AggregationError(f"client {u.client_id}: num_samples must be >= 1")
    total_weight = float(sum(u.num_samples for u in updates))
    scales = [u.num_samples / total_weight for u in updates]
    out_dtype = first.dtype
    layers = {}
    for name, ref in first.layers.items():
        acc = np.zeros(ref.shape, dtype=np.float64)
        for u, scale in zip(updates, scales):
            acc += scale * u.params.layers[name].astype(np.float64)
        layers[name] = (acc).astype(out_dtype)
    result = ModelParams(layers, config_hash)
    if not result.finite():
        raise AggregationError("aggregation produced non-finite parameters")
    return result


def should_stop(history: Sequence[Tuple[int, str, float]], patience: int,
                max_rounds: Optional[int] = None) -> bool:
    """Stop when the best validation loss is more than `patience` rounds old,
    or the round cap is reached. NaN losses never count as improvements."""
    if not history:
        return False
    best_round = history[0][0]
    best_loss = math.inf
    for round_num, _tag, loss in history:
        if not math.isnan(loss) and loss < best_loss:
            best_loss = loss
            best_round = round_num
    last_round = history[-1][0]
    if max_rounds is not None and last_round >= max_rounds:
        return True
    return (last_round - best_round) > patience


def save_checkpoint(state: GlobalModelState, config: ModelConfig, path) -> None:
    """Write the full server state using the canonical wire serialization."""
    record = {"kind": "fedview-checkpoint", "version": 1, "tag": state.tag,
              "round": state.round, "status": state.status,
              "history": [[r, t, l] for r, t, l in state.history],
              "config": config.to_dict()}
    record.update(params_to_payload(state.params))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dump_json(record))
    tmp.replace(path)


def load_checkpoint(path) -> Tuple[GlobalModelState, ModelConfig]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
        if record.get("kind") != "fedview-checkpoint":
            raise CheckpointError(f"{path} is not a fedview checkpoint")
        config = ModelConfig.from_dict(record["config"])
        params = payload_to_params(record)
        state = GlobalModelState(
            params=params, tag=record["tag"], round=int(record["round"]),
            history=[(int(r), str(t), float(l)) for r, t, l in record["history"]],
            status=record["status"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if state.tag != make_tag(state.round, params.config_hash):
        raise CheckpointError(f"checkpoint tag {state.tag} does not match its round/config")
    return state, config


@dataclass
class CommStats:
    """Byte accounting observed at the protocol layer.

    `*_payload` counts the serialized float content of model transfers;
    `*_wire` counts the HTTP bodies as sent (base64 + JSON framing).
    """

    model_downloads: int = 0
    updates_accepted: int = 0
    updates_rejected: int = 0
    down_payload_bytes: int = 0
    up_payload_bytes: int = 0
    down_wire_bytes: int = 0
    up_wire_bytes: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class FLServer:
    """Round/state machine behind the HTTP service; safe under concurrency."""

    def __init__(self, params: ModelParams, config: ModelConfig,
                 policy: RoundPolicy = RoundPolicy(),
                 validation_data: Optional[Sequence] = None,
                 registry: Optional[FeatureRegistry] = None):
        policy.validate()
        self.config = config
        self.policy = policy
        self.validation_data = list(validation_data) if validation_data else []
        self.registry = registry
        self._cond = threading.Condition()
        self.state = GlobalModelState(params=params, tag=make_tag(0, params.config_hash), round=0)
        self.buffer: Dict[str, ClientUpdate] = {}
        self._round_deadline: Optional[float] = None
        self.comm = CommStats()

    # ---- reads ----

    def model_payload(self) -> dict:
        with self._cond:
            params, tag, round_num, status = (self.state.params, self.state.tag,
                                              self.state.round, self.state.status)
        payload = {"tag": tag, "round": round_num, "status": status,
                   "config": self.config.to_dict()}
        payload.update(params_to_payload(params))
        return payload

    def get_model(self, client_tag: Optional[str], wait_s: float) -> Tuple[str, Optional[dict]]:
        """('ok', payload) | ('no_change', None) | ('bad_tag', None)."""
        if client_tag is not None and not TAG_PATTERN.match(client_tag):
            return "bad_tag", None
        deadline = time.monotonic() + max(0.0, wait_s)
        with self._cond:
            while (client_tag == self.state.tag and self.state.status != "stopped"):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._cond.wait(timeout=remaining)
            if client_tag == self.state.tag:
                return "no_change", None
        return "ok", self.model_payload()

    def status_payload(self) -> dict:
        with self._cond:
            return {"tag": self.state.tag, "round": self.state.round,
                    "status": self.state.status,
                    "clients_this_round": sorted(self.buffer),
                    "history": [[r, t, l] for r, t, l in self.state.history[-20:]],
                    "param_count": self.state.params.count,
                    "comm": self.comm.to_dict()}

    # ---- writes ----

    def post_update(self, update: ClientUpdate) -> Tuple[str, dict]:
        """('accepted'|'conflict'|'invalid', info)."""
        if update.num_samples < 1:
            return "invalid", {"error": "num_samples must be >= 1"}
        if not update.params.finite():
            return "invalid", {"error": "parameters contain non-finite values"}
        if update.params.config_hash != self.state.params.config_hash:
            return "invalid", {"error": "model architecture mismatch"}
        with self._cond:
            if self.state.status == "stopped":
                return "conflict", {"error": "training stopped", "tag": self.state.tag}
            if update.base_tag != self.state.tag:
                return "conflict", {"error": "stale base tag", "tag": self.state.tag}
            self.buffer[update.client_id] = update
            if self._round_deadline is None:
                self._round_deadline = time.monotonic() + self.policy.round_timeout_s
            closed = False
            if len(self.buffer) >= self.policy.min_clients_per_round:
                self._close_round_locked()
                closed = True
            return "accepted", {"round": self.state.round, "closed": closed}

    def tick(self, now: Optional[float] = None) -> bool:
        """Close the round on timeout if at least one update is buffered."""
        now = time.monotonic() if now is None else now
        with self._cond:
            if (self.state.status != "stopped" and self.buffer
                    and self._round_deadline is not None and now >= self._round_deadline):
                self._close_round_locked()
                return True
        return False

    def _close_round_locked(self) -> None:
        self.state.status = "aggregating"
        updates = list(self.buffer.values())
        new_params = aggregate(updates)
        if self.validation_data:
            val_loss = evaluate(new_params, self.validation_data).loss
        else:
            val_loss = math.nan
        self.state.params = new_params
        self.state.round += 1
        self.state.tag = make_tag(self.state.round, new_params.config_hash)
        self.state.history.append((self.state.round, self.state.tag, val_loss))
        self.buffer.clear()
        self._round_deadline = None
        stopping = should_stop(self.state.history, self.policy.patience, self.policy.max_rounds)
        self.state.status = "stopped" if stopping else "collecting"
        logger.info("round %d released (tag %s, val_loss %.5f, %d updates)%s",
                    self.state.round, self.state.tag, val_loss, len(updates),
                    " [stopped]" if stopping else "")
        self._cond.notify_all()


_CONTENT_TYPES = {".html": "text/html", ".js": "text/javascript", ".mjs": "text/javascript",
                  ".css": "text/css", ".json": "application/json", ".map": "application/json",
                  ".ico": "image/x-icon"}


class _Handler(BaseHTTPRequestHandler):
    server_version = "fedview"
    protocol_version = "HTTP/1.1"

    @property
    def fl(self) -> FLServer:
        return self.server.fl_server  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        logger.debug("http: " + fmt, *args)

    def _send(self, code: int, body: bytes = b"", content_type: str = "application/json",
              extra_headers: Optional[dict] = None) -> None:
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Cookie")
        for key, value in (extra_headers or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _cookie_tag(self) -> Optional[str]:
        header = self.headers.get("Cookie", "")
        for chunk in header.split(";"):
            chunk = chunk.strip()
            if chunk.startswith("adfl_tag="):
                return chunk[len("adfl_tag="):]
        return None

    def do_OPTIONS(self):
        self._send(204, extra_headers={"Access-Control-Allow-Methods": "GET, POST, OPTIONS"})

    def do_GET(self):
        parsed = urlparse(self.path)
        if parsed.path == "/model":
            query = parse_qs(parsed.query)
            try:
                wait_s = float(query.get("wait", [DEFAULT_LONG_POLL_S])[0])
            except ValueError:
                self._send(400, dump_json({"error": "bad wait parameter"}))
                return
            outcome, payload = self.fl.get_model(self._cookie_tag(), wait_s)
            if outcome == "bad_tag":
                self._send(400, dump_json({"error": "malformed tag cookie"}))
            elif outcome == "no_change":
                self._send(204)
            else:
                body = dump_json(payload)
                self.fl.comm.model_downloads += 1
                self.fl.comm.down_payload_bytes += payload_float_bytes(payload)
                self.fl.comm.down_wire_bytes += len(body)
                self._send(200, body, extra_headers={
                    "Set-Cookie": f"adfl_tag={payload['tag']}; Path=/"})
        elif parsed.path == "/status":
            self._send(200, dump_json(self.fl.status_payload()))
        elif parsed.path == "/registry":
            if self.fl.registry is None:
                self._send(404, dump_json({"error": "no registry configured"}))
            else:
                self._send(200, self.fl.registry.canonical_text().encode("utf-8"),
                           content_type="text/plain; charset=utf-8")
        else:
            self._serve_static(parsed.path)

    def _serve_static(self, path: str) -> None:
        static_dir = getattr(self.server, "static_dir", None)
        if static_dir is None:
            self._send(404, dump_json({"error": "not found"}))
            return
        rel = path.lstrip("/") or "index.html"
        target = (Path(static_dir) / rel).resolve()
        if not str(target).startswith(str(Path(static_dir).resolve())) or not target.is_file():
            self._send(404, dump_json({"error": "not found"}))
            return
        content_type = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), content_type=content_type)

    def do_POST(self):
        parsed = urlparse(self.path)
        if parsed.path != "/update":
            self._send(404, dump_json({"error": "not found"}))
            return
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            body = load_json(raw)
            update = ClientUpdate(
                client_id=str(body["client_id"]), base_tag=str(body["base_tag"]),
                num_samples=int(body["num_samples"]), dp_applied=bool(body.get("dp_applied", False)),
                params=payload_to_params(body))
        except (ProtocolError, KeyError, TypeError, ValueError) as exc:
            self.fl.comm.updates_rejected += 1
            self._send(400, dump_json({"status": "invalid", "error": str(exc)}))
            return
        outcome, info = self.fl.post_update(update)
        if outcome == "accepted":
            self.fl.comm.updates_accepted += 1
            self.fl.comm.up_payload_bytes += payload_float_bytes(body)
            self.fl.comm.up_wire_bytes += len(raw)
            self._send(200, dump_json({"status": "accepted", **info}))
        elif outcome == "conflict":
            self.fl.comm.updates_rejected += 1
            self._send(409, dump_json({"status": "conflict", **info}))
        else:
            self.fl.comm.updates_rejected += 1
            self._send(400, dump_json({"status": "invalid", **info}))


class ModelService:
    """HTTP front end owning the server thread and the round-timeout ticker."""

    def __init__(self, fl_server: FLServer, host: str = "127.0.0.1", port: int = 0,
                 static_dir: Optional[str] = None):
        self.fl_server = fl_server
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.fl_server = fl_server  # type: ignore[attr-defined]
        self.httpd.static_dir = static_dir  # type: ignore[attr-defined]
        self.httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None
        self._ticker: Optional[threading.Thread] = None
        self._stop = threading.Event()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ModelService":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        self._ticker = threading.Thread(target=self._tick_loop, daemon=True)
        self._ticker.start()
        logger.info("model service listening on %s", self.url)
        return self

    def _tick_loop(self):
        while not self._stop.wait(0.25):
            self.fl_server.tick()

    def stop(self, checkpoint_path: Optional[str] = None) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        if checkpoint_path:
            save_checkpoint(self.fl_server.state, self.fl_server.config, checkpoint_path)
