"""Declarative feature registry and deterministic, data-independent preprocessing.

Every model input is described by a FeatureSpec (kind, method, attributes).
Preprocessing uses only the spec — MinMax scaling with fixed bounds, FNV-1a
hashing for strings, defaults for anything missing or malformed — so the same
raw record produces byte-identical vectors on every client, every platform,
and in the browser implementation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import AssemblyError, ClockRegressionError, ConfigError, InputError
from .hashing import fnv1a64, hash_encode
from .model import ModelConfig

CATEGORIES = ("user", "page", "session", "ad", "customized")
KINDS = ("binary", "numerical", "categorical")
METHODS = ("minmax", "hash", "passthrough_binary")

RawRecord = Dict[str, object]


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    category: str
    kind: str
    method: str
    min: Optional[float] = None
    max: Optional[float] = None
    default: object = None
    buckets: Optional[int] = None

    def validate(self) -> "FeatureSpec":
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ConfigError(f"feature name must be non-empty and whitespace-free: {self.name!r}")
        if self.category not in CATEGORIES:
            raise ConfigError(f"{self.name}: unknown category {self.category!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")
        if self.method not in METHODS:
            raise ConfigError(f"{self.name}: unknown method {self.method!r}")
        if self.method == "minmax":
            if self.kind != "numerical":
                raise ConfigError(f"{self.name}: minmax applies to numerical features")
            if self.min is None or self.max is None or not self.min < self.max:
                raise ConfigError(f"{self.name}: minmax requires min < max")
            if not isinstance(self.default, (int, float)) or not self.min <= self.default <= self.max:
                raise ConfigError(f"{self.name}: minmax default must lie within [min, max]")
        elif self.method == "hash":
            if self.kind != "categorical":
                raise ConfigError(f"{self.name}: hash applies to categorical features")
            if self.buckets is None or self.buckets < 2:
                raise ConfigError(f"{self.name}: hash requires buckets >= 2")
            if not isinstance(self.default, str) or any(ch.isspace() for ch in self.default):
                raise ConfigError(f"{self.name}: hash requires a whitespace-free default string")
        else:  # passthrough_binary
            if self.kind != "binary":
                raise ConfigError(f"{self.name}: passthrough_binary applies to binary features")
            if self.default not in (0, 1):
                raise ConfigError(f"{self.name}: binary default must be 0 or 1")
        return self


class FeatureRegistry:
    """Ordered, validated feature list with a stable content digest.

    The canonical partition order is (binary..., numerical..., categorical...);
    within each partition ad/customized features come before contextual ones.
    Every client must hold an identical registry — the digest travels inside
    each Sample to keep mixed-version data out of training.
    """

    def __init__(self, specs: Sequence[FeatureSpec]):
        specs = tuple(s.validate() for s in specs)
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        kinds = [s.kind for s in specs]
        boundary = [KINDS.index(k) for k in kinds]
        if boundary != sorted(boundary):
            raise ConfigError("registry order must be (binary..., numerical..., categorical...)")
        self.specs = specs
        self.by_name = {s.name: s for s in specs}
        self.binary = tuple(s for s in specs if s.kind == "binary")
        self.numerical = tuple(s for s in specs if s.kind == "numerical")
        self.categorical = tuple(s for s in specs if s.kind == "categorical")
        self.registry_hash = fnv1a64(self.canonical_text())

    def canonical_text(self) -> str:
        lines = ["# feature registry v1"]
        for s in self.specs:
            parts = [f"feature name={s.name}", f"category={s.category}",
                     f"kind={s.kind}", f"method={s.method}"]
            if s.method == "minmax":
                parts += [f"min={float(s.min)!r}", f"max={float(s.max)!r}",
                          f"default={float(s.default)!r}"]
            elif s.method == "hash":
                parts += [f"buckets={s.buckets}", f"default={s.default}"]
            else:
                parts += [f"default={int(s.default)}"]
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    def counts(self) -> Tuple[int, int, int]:
        return (len(self.binary), len(self.numerical), len(self.categorical))

    def check_config(self, config: ModelConfig) -> "FeatureRegistry":
        if self.counts() != (config.n_binary, config.n_numerical, config.n_categorical):
            raise ConfigError(f"registry counts {self.counts()} do not match model config "
                              f"({config.n_binary},{config.n_numerical},{config.n_categorical})")
        for s in self.categorical:
            if s.buckets != config.hash_buckets:
                raise ConfigError(f"{s.name}: buckets={s.buckets} but model hash_buckets={config.hash_buckets}")
        return self

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.canonical_text())


def parse_registry(text: str) -> FeatureRegistry:
    """Parse the canonical key-value registry document."""
    specs: List[FeatureSpec] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] != "feature":
            raise ConfigError(f"registry line {lineno}: expected 'feature ...'")
        kv: Dict[str, str] = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ConfigError(f"registry line {lineno}: bad token {tok!r}")
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            method = kv["method"]
            spec = FeatureSpec(
                name=kv["name"], category=kv["category"], kind=kv["kind"], method=method,
                min=float(kv["min"]) if "min" in kv else None,
                max=float(kv["max"]) if "max" in kv else None,
                default=(float(kv["default"]) if method == "minmax"
                         else int(kv["default"]) if method == "passthrough_binary"
                         else kv["default"]),
                buckets=int(kv["buckets"]) if "buckets" in kv else None,
            )
        except KeyError as exc:
            raise ConfigError(f"registry line {lineno}: missing field {exc}") from exc
        specs.append(spec)
    return FeatureRegistry(specs)


def load_registry(path) -> FeatureRegistry:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_registry(fh.read())


SESSION_TIMEOUT_S = 30 * 60.0
# "never visited before" sentinel: 30 days, also the scaling max for the feature
SECONDS_SINCE_LAST_MAX = 30 * 86400.0


def default_registry(config: ModelConfig) -> FeatureRegistry:
    """The stock 3/14/9 schema bound to `config` (categorical buckets follow it)."""
    b = config.hash_buckets

    def num(name, category, lo, hi, default):
        return FeatureSpec(name, category, "numerical", "minmax", min=lo, max=hi, default=default)

    def cat(name, category, default):
        return FeatureSpec(name, category, "categorical", "hash", buckets=b, default=default)

    specs = [
        FeatureSpec("ad_above_fold", "ad", "binary", "passthrough_binary", default=0),
        FeatureSpec("is_mobile", "user", "binary", "passthrough_binary", default=0),
        FeatureSpec("is_returning_visitor", "session", "binary", "passthrough_binary", default=0),
        num("ad_width", "ad", 0.0, 2000.0, 300.0),
        num("ad_height", "ad", 0.0, 1500.0, 250.0),
        num("ad_slot_position_px", "ad", 0.0, 20000.0, 600.0),
        num("creative_bytes", "ad", 0.0, 1_000_000.0, 50_000.0),
        num("iframe_nesting_depth", "ad", 0.0, 10.0, 2.0),
        num("ad_area_ratio", "customized", 0.0, 1.0, 0.05),
        num("pages_this_session", "session", 0.0, 50.0, 1.0),
        num("pages_visited_total", "session", 0.0, 500.0, 1.0),
        num("seconds_since_last_visit", "session", 0.0, SECONDS_SINCE_LAST_MAX, SECONDS_SINCE_LAST_MAX),
        num("visits_count", "session", 0.0, 100.0, 1.0),
        num("viewport_width", "user", 0.0, 4000.0, 1280.0),
        num("viewport_height", "user", 0.0, 3000.0, 800.0),
        num("device_pixel_ratio", "user", 0.5, 4.0, 1.0),
        num("page_height", "page", 0.0, 20000.0, 2000.0),
        cat("ad_placement_id", "ad", "adplacementTop"),
        cat("adtech_tag", "ad", "unknown"),
        cat("ad_size_format", "ad", "300x250"),
        cat("referrer_domain", "session", "direct"),
        cat("user_agent", "user", "unknown"),
        cat("browser_language", "user", "en-US"),
        cat("os_family", "user", "other"),
        cat("page_url", "page", "/"),
        cat("page_section", "page", "home"),
    ]
    return FeatureRegistry(specs).check_config(config)


AD_CATEGORIES = frozenset({"ad", "customized"})
CONTEXT_CATEGORIES = frozenset({"user", "page", "session"})


def minmax_scale(x, spec: FeatureSpec) -> float:
    """(x - min) / (max - min) clamped to [0, 1]; absent/non-finite -> default."""
    if spec.method != "minmax":
        raise InputError(f"{spec.name}: minmax_scale on method {spec.method!r}")
    if x is None or isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        x = spec.default
    scaled = (float(x) - spec.min) / (spec.max - spec.min)
    return min(1.0, max(0.0, scaled))


def encode_feature(value, spec: FeatureSpec) -> Tuple[object, int]:
    """Apply the spec's method; returns (encoded value, anomaly count 0/1).

    Wrong-typed values count as anomalies and fall back to the default; absence
    is legal and uses the default silently.
    """
    anomaly = 0
    if spec.method == "passthrough_binary":
        if value is None:
            value = spec.default
        elif isinstance(value, bool):
            value = int(value)
        elif not (isinstance(value, (int, float)) and value in (0, 1)):
            value, anomaly = spec.default, 1
        return int(value), anomaly
    if spec.method == "minmax":
        if value is not None and (isinstance(value, bool)
                                  or not isinstance(value, (int, float))
                                  or not math.isfinite(value)):
            # non-finite and wrong-typed values are treated as absent
            anomaly = 0 if (isinstance(value, (int, float)) and not isinstance(value, bool)) else 1
            value = None
        return minmax_scale(value, spec), anomaly
    # hash
    if value is None:
        value = spec.default
    elif not isinstance(value, str):
        value, anomaly = spec.default, 1
    return hash_encode(value, spec.buckets), anomaly


@dataclass
class PreprocessedPart:
    """Encoded values for a subset of registry features (one capture source)."""

    values: Dict[str, object]
    registry_hash: int
    anomalies: int = 0


def preprocess_part(raw: RawRecord, registry: FeatureRegistry,
                    categories: Optional[Iterable[str]] = None) -> PreprocessedPart:
    """Encode every registry feature in `categories` (default: all) from `raw`.

    Total: any raw record yields a complete part, worst case all defaults plus
    anomaly counts.
    """
    wanted = frozenset(categories) if categories is not None else frozenset(CATEGORIES)
    values: Dict[str, object] = {}
    anomalies = 0
    for spec in registry.specs:
        if spec.category not in wanted:
            continue
        encoded, bad = encode_feature(raw.get(spec.name), spec)
        values[spec.name] = encoded
        anomalies += bad
    return PreprocessedPart(values=values, registry_hash=registry.registry_hash, anomalies=anomalies)


@dataclass
class FeatureVectors:
    binary: List[int]
    numerical: List[float]
    categorical: List[int]
    anomalies: int = 0


def _vectors_from_values(values: Dict[str, object], registry: FeatureRegistry) -> FeatureVectors:
    binary, numerical, categorical = [], [], []
    for spec in registry.specs:
        if spec.name in values:
            v = values[spec.name]
        else:
            v, _ = encode_feature(None, spec)
        if spec.kind == "binary":
            binary.append(int(v))
        elif spec.kind == "numerical":
            numerical.append(float(v))
        else:
            categorical.append(int(v))
    return FeatureVectors(binary, numerical, categorical)


def preprocess_record(raw: RawRecord, registry: FeatureRegistry) -> FeatureVectors:
    """Full-record preprocessing into partitioned vectors in canonical order."""
    part = preprocess_part(raw, registry)
    vectors = _vectors_from_values(part.values, registry)
    vectors.anomalies = part.anomalies
    return vectors


@dataclass
class Sample:
    """One preprocessed ad instance with its metric label."""

    binary: List[int]
    numerical: List[float]
    categorical: List[int]
    label_viewable: int
    ad_id: str
    registry_hash: int
    timestamp: float

    def to_json_line(self) -> str:
        return json.dumps(
            {"ad_id": self.ad_id, "timestamp": self.timestamp,
             "registry_hash": self.registry_hash, "label_viewable": self.label_viewable,
             "binary": self.binary, "numerical": self.numerical, "categorical": self.categorical},
            separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "Sample":
        try:
            d = json.loads(line)
            return cls(binary=[int(v) for v in d["binary"]],
                       numerical=[float(v) for v in d["numerical"]],
                       categorical=[int(v) for v in d["categorical"]],
                       label_viewable=int(d["label_viewable"]), ad_id=str(d["ad_id"]),
                       registry_hash=int(d["registry_hash"]), timestamp=float(d["timestamp"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad sample record: {exc}") from exc


def assemble_sample(ad_part: PreprocessedPart, context_part: PreprocessedPart,
                    ad_id: str, timestamp: float, registry: FeatureRegistry) -> Sample:
    """Join ad and contextual parts into a Sample laid out in canonical order.

    The metric label starts negative; metric updates flip it later. Ad-part
    values win on overlap.
    """
    if ad_part.registry_hash != context_part.registry_hash:
        raise AssemblyError("ad and context parts were preprocessed against different registries")
    if ad_part.registry_hash != registry.registry_hash:
        raise AssemblyError("parts do not match the supplied registry")
    merged = dict(context_part.values)
    merged.update(ad_part.values)
    vectors = _vectors_from_values(merged, registry)
    vectors.anomalies = ad_part.anomalies + context_part.anomalies
    return Sample(binary=vectors.binary, numerical=vectors.numerical,
                  categorical=vectors.categorical, label_viewable=0, ad_id=ad_id,
                  registry_hash=registry.registry_hash, timestamp=timestamp)


@dataclass
class SessionState:
    """Per-client visit history plus the derived session counters."""

    session_id: str = ""
    session_start: float = 0.0
    pages_this_session: int = 0
    prior_page_requests: List[Tuple[int, float]] = field(default_factory=list)
    pages_visited_total: int = 0
    seconds_since_last_visit: float = SECONDS_SINCE_LAST_MAX
    visits_count: int = 0

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "session_start": self.session_start,
                "pages_this_session": self.pages_this_session,
                "prior_page_requests": [[h, t] for h, t in self.prior_page_requests],
                "pages_visited_total": self.pages_visited_total,
                "seconds_since_last_visit": self.seconds_since_last_visit,
                "visits_count": self.visits_count}

    @classmethod
    def from_dict(cls, d: dict) -> "SessionState":
        return cls(session_id=d["session_id"], session_start=d["session_start"],
                   pages_this_session=d["pages_this_session"],
                   prior_page_requests=[(int(h), float(t)) for h, t in d["prior_page_requests"]],
                   pages_visited_total=d["pages_visited_total"],
                   seconds_since_last_visit=d["seconds_since_last_visit"],
                   visits_count=d["visits_count"])


def compute_session_features(prior: SessionState, now: float, url: str,
                             timeout_s: float = SESSION_TIMEOUT_S) -> SessionState:
    """Fold one page request into the session history.

    A gap longer than `timeout_s` since the previous request starts a new
    session. Raises ClockRegressionError if `now` precedes the latest recorded
    request; callers record the rejection and drop the event.
    """
    if prior.prior_page_requests:
        last_ts = prior.prior_page_requests[-1][1]
        if now < last_ts:
            raise ClockRegressionError(f"page request at {now} precedes last seen {last_ts}")
        gap = now - last_ts
        new_session = gap > timeout_s
    else:
        gap = SECONDS_SINCE_LAST_MAX
        new_session = True
    requests = list(prior.prior_page_requests)
    requests.append((fnv1a64(url), now))
    if new_session:
        visits = prior.visits_count + 1
        return SessionState(session_id=f"s{visits}", session_start=now, pages_this_session=1,
                            prior_page_requests=requests,
                            pages_visited_total=prior.pages_visited_total + 1,
                            seconds_since_last_visit=gap, visits_count=visits)
    return SessionState(session_id=prior.session_id, session_start=prior.session_start,
                        pages_this_session=prior.pages_this_session + 1,
                        prior_page_requests=requests,
                        pages_visited_total=prior.pages_visited_total + 1,
                        seconds_since_last_visit=gap, visits_count=prior.visits_count)


def session_raw_features(state: SessionState) -> RawRecord:
    """Raw values the session tracker contributes to the contextual record."""
    return {
        "is_returning_visitor": 1 if state.visits_count > 1 else 0,
        "pages_this_session": float(state.pages_this_session),
        "pages_visited_total": float(state.pages_visited_total),
        "seconds_since_last_visit": float(state.seconds_since_last_visit),
        "visits_count": float(state.visits_count),
    }
