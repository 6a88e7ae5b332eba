"""Deterministic synthetic ad-event logs with a planted viewability signal.

User data sizes follow a rank-skewed power law with a per-user floor. Each
ad's latent score is a linear function of the same preprocessed features the
pipeline will see (group-weighted, ad features dominating), the label is the
thresholded score with optional label noise, and visibility intervals are
synthesized so the replay pipeline's viewability rule reproduces the label
exactly. Everything derives from per-user seed streams, so generation is
reproducible and users are independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .client import ClientState, replay
from .errors import GenerationError
from .events import AdEvent, write_log
from .features import (FeatureRegistry, ModelConfig, SessionState, compute_session_features,
                       default_registry, preprocess_record, session_raw_features)
from .hashing import derive_seed

GROUPS = ("ad", "customized", "session", "user", "page")
DEFAULT_SIGNAL = {"ad": 3.0, "customized": 2.0, "session": 1.0, "user": 0.5, "page": 0.25}

MAX_ADS_PER_USER_PER_DAY = 500

_PLACEMENTS = ("adplacementTop", "adplacementSide", "adplacementBottom", "adplacementInline")
_ADTECH = ("bidstream", "adnova", "pixelbid", "trackly", "admesh", "clickforge",
           "sparkads", "medialoop", "bannerly", "viewcast", "promohub", "reachnet")
_AD_SIZES = ((300, 250), (728, 90), (160, 600), (320, 50), (970, 250), (300, 600))
_REFERRERS = ("direct", "search.example", "social.example", "news.example", "mail.example")
_LANGUAGES = ("en-US", "en-GB", "de-DE", "fr-FR", "es-ES", "pt-BR", "ja-JP", "pl-PL")
_OS = ("windows", "macos", "linux", "android", "ios")
_UA_BY_OS = {
    "windows": ("ua-win-chrome", "ua-win-edge", "ua-win-firefox"),
    "macos": ("ua-mac-safari", "ua-mac-chrome", "ua-mac-firefox"),
    "linux": ("ua-linux-firefox", "ua-linux-chromium"),
    "android": ("ua-android-chrome", "ua-android-samsung"),
    "ios": ("ua-ios-safari", "ua-ios-chrome"),
}
_SECTIONS = ("home", "sports", "politics", "tech", "culture", "finance")
_URLS = tuple(f"/articles/{i}" for i in range(40))


@dataclass
class GenConfig:
    n_users: int = 50
    days: int = 10
    min_samples_per_user: int = 50
    skew_exponent: float = 0.8
    top_rate_per_day: float = 40.0
    signal: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SIGNAL))
    label_noise: float = 0.1
    seed: int = 0
    # the planted signal is drawn from this seed (default: `seed`); disjoint
    # user populations share one learnable world by sharing a signal_seed
    signal_seed: Optional[int] = None

    @property
    def world_seed(self) -> int:
        return self.seed if self.signal_seed is None else self.signal_seed

    def validate(self) -> "GenConfig":
        if self.n_users < 1:
            raise GenerationError("n_users must be >= 1")
        if self.days < 1:
            raise GenerationError("days must be >= 1")
        if self.min_samples_per_user < 1:
            raise GenerationError("min_samples_per_user must be >= 1")
        if not 0 <= self.label_noise < 0.5:
            raise GenerationError("label_noise must be in [0, 0.5)")
        if self.skew_exponent < 0:
            raise GenerationError("skew_exponent must be >= 0")
        if set(self.signal) - set(GROUPS):
            raise GenerationError(f"unknown signal groups: {set(self.signal) - set(GROUPS)}")
        if any(w < 0 for w in self.signal.values()):
            raise GenerationError("signal weights must be non-negative")
        if self.min_samples_per_user > self.days * MAX_ADS_PER_USER_PER_DAY:
            raise GenerationError(
                f"min_samples_per_user={self.min_samples_per_user} exceeds the "
                f"{self.days}-day horizon capacity ({self.days * MAX_ADS_PER_USER_PER_DAY})")
        return self


def user_sample_counts(config: GenConfig) -> List[int]:
    """Rank-skewed per-user ad counts with the configured floor."""
    counts = []
    for rank in range(config.n_users):
        rng = np.random.default_rng(derive_seed(config.seed, "size", rank))
        jitter = rng.uniform(0.95, 1.05)
        raw = config.top_rate_per_day * (rank + 1) ** (-config.skew_exponent) * config.days * jitter
        counts.append(min(max(config.min_samples_per_user, round(raw)),
                          config.days * MAX_ADS_PER_USER_PER_DAY))
    return counts


@dataclass
class _Signal:
    """Planted linear signal: weights over standardized numeric features plus
    zero-mean per-value effects for categorical features."""

    numeric_weights: np.ndarray  # over (binary..., numerical...) in registry order
    effects: Dict[str, Dict[str, float]]  # feature name -> raw value -> effect
    mu: np.ndarray
    sigma: np.ndarray

    def logit(self, numvec: np.ndarray, raw_cats: Dict[str, str]) -> float:
        z = (numvec - self.mu) / self.sigma
        total = float(self.numeric_weights @ z)
        for name, table in self.effects.items():
            total += table.get(raw_cats[name], 0.0)
        return total


def _draw_signal(config: GenConfig, registry: FeatureRegistry) -> Tuple[np.ndarray, Dict]:
    rng = np.random.default_rng(derive_seed(config.world_seed, "signal"))
    weights = []
    for spec in list(registry.binary) + list(registry.numerical):
        group_w = config.signal.get(spec.category, 0.0)
        weights.append(group_w * rng.uniform(0.6, 1.0) * rng.choice((-1.0, 1.0)))
    value_pools = {
        "ad_placement_id": _PLACEMENTS,
        "adtech_tag": _ADTECH,
        "ad_size_format": tuple(f"{w}x{h}" for w, h in _AD_SIZES),
        "referrer_domain": _REFERRERS,
        "user_agent": tuple(ua for uas in _UA_BY_OS.values() for ua in uas),
        "browser_language": _LANGUAGES,
        "os_family": _OS,
        "page_url": _URLS,
        "page_section": _SECTIONS,
    }
    effects: Dict[str, Dict[str, float]] = {}
    for spec in registry.categorical:
        group_w = config.signal.get(spec.category, 0.0)
        pool = value_pools[spec.name]
        raw = rng.normal(0.0, 0.9 * group_w, size=len(pool))
        raw -= raw.mean()  # zero-mean so categorical effects do not shift the base rate
        effects[spec.name] = {value: float(e) for value, e in zip(pool, raw)}
    return np.asarray(weights, dtype=np.float64), effects


def _draw_profile(rng: np.random.Generator) -> Dict[str, object]:
    os_family = str(rng.choice(_OS))
    mobile = os_family in ("android", "ios")
    if mobile:
        viewport_w = float(rng.choice((360, 390, 412, 428)))
        viewport_h = float(rng.choice((640, 740, 800, 900)))
        dpr = float(rng.choice((2.0, 2.5, 3.0)))
    else:
        viewport_w = float(rng.choice((1280, 1440, 1600, 1920, 2560)))
        viewport_h = float(rng.choice((720, 800, 900, 1080, 1440)))
        dpr = float(rng.choice((1.0, 1.25, 1.5, 2.0)))
    return {
        "is_mobile": 1 if mobile else 0,
        "os_family": os_family,
        "user_agent": str(rng.choice(_UA_BY_OS[os_family])),
        "browser_language": str(rng.choice(_LANGUAGES)),
        "viewport_width": viewport_w,
        "viewport_height": viewport_h,
        "device_pixel_ratio": dpr,
    }


def _draw_page(rng: np.random.Generator) -> Dict[str, object]:
    url_idx = int(rng.integers(len(_URLS)))
    return {
        "page_url": _URLS[url_idx],
        "page_section": _SECTIONS[url_idx % len(_SECTIONS)],
        "page_height": float(min(20000.0, 1000.0 + rng.gamma(2.0, 1500.0))),
    }


def _draw_ad(rng: np.random.Generator, page: Dict[str, object],
             profile: Dict[str, object]) -> Dict[str, object]:
    w, h = _AD_SIZES[int(rng.integers(len(_AD_SIZES)))]
    position = float(rng.uniform(0.0, page["page_height"]))
    area_ratio = (w * h) / (profile["viewport_width"] * page["page_height"])
    return {
        "ad_width": float(w),
        "ad_height": float(h),
        "ad_size_format": f"{w}x{h}",
        "ad_slot_position_px": position,
        "ad_above_fold": 1 if position < profile["viewport_height"] else 0,
        "creative_bytes": float(min(1_000_000, int(math.exp(rng.normal(10.5, 0.8))))),
        "iframe_nesting_depth": float(rng.integers(1, 7)),
        "ad_placement_id": str(rng.choice(_PLACEMENTS)),
        "adtech_tag": str(rng.choice(_ADTECH)),
        "ad_area_ratio": float(min(1.0, max(0.0, area_ratio))),
    }


def _emit_intervals(rng: np.random.Generator, label: int, ad_id: str,
                    t: float) -> Tuple[List[AdEvent], float]:
    """Visibility intervals whose viewability outcome equals `label`."""
    events: List[AdEvent] = []

    def interval(ts, fraction, duration):
        events.append(AdEvent("visibility_interval", ts, ad_id=ad_id,
                              visible_fraction=round(float(fraction), 4),
                              duration_s=round(float(duration), 3)))

    if label == 1:
        if rng.random() < 0.3:
            t += 0.4
            interval(t, rng.uniform(0.05, 0.45), rng.uniform(0.2, 3.0))
        t += 0.5
        interval(t, rng.uniform(0.55, 0.95), rng.uniform(1.2, 8.0))
    else:
        u = rng.random()
        if u < 0.35:
            pass  # never visible at all
        elif u < 0.75:
            t += 0.5
            interval(t, rng.uniform(0.05, 0.45), rng.uniform(0.5, 6.0))
        else:
            # visible enough but never for a full continuous second
            t += 0.5
            interval(t, rng.uniform(0.55, 0.9), rng.uniform(0.15, 0.9))
            t += 1.5
            interval(t, rng.uniform(0.55, 0.9), rng.uniform(0.15, 0.9))
    return events, t


def _simulate_user(user_id: str, rng: np.random.Generator, count: int, days: int,
                   registry: FeatureRegistry, signal: Optional[_Signal],
                   label_noise: float) -> Tuple[List[AdEvent], List[dict], np.ndarray]:
    """One user's event stream; returns (events, truth rows, numeric matrix)."""
    profile = _draw_profile(rng)
    events: List[AdEvent] = []
    truths: List[dict] = []
    numeric_rows: List[np.ndarray] = []
    session = SessionState()
    ads_made = 0
    horizon = days * 86400.0
    est_sessions = max(1, math.ceil(count / 6.0))
    slot = horizon / est_sessions
    t = 0.0
    session_idx = 0
    while ads_made < count:
        base = min(session_idx, est_sessions - 1) * slot
        t = max(t + 3600.0, base) + float(rng.uniform(0, min(slot * 0.2, 3600.0)))
        session_idx += 1
        referrer = str(rng.choice(_REFERRERS))
        n_pages = int(rng.integers(1, 7))
        for _page_i in range(n_pages):
            if ads_made >= count:
                break
            page = _draw_page(rng)
            session = compute_session_features(session, t, str(page["page_url"]))
            context_raw = {**profile, **page, "referrer_domain": referrer}
            events.append(AdEvent("page_request", t, page_url=str(page["page_url"]),
                                  ad_metadata={k: v for k, v in context_raw.items()
                                               if k != "page_url"}))
            context_full = {**context_raw, **session_raw_features(session)}
            n_ads = int(rng.integers(1, 4))
            ad_t = t
            for _ad_i in range(n_ads):
                if ads_made >= count:
                    break
                ad_t += float(rng.uniform(2.0, 25.0))
                ad = _draw_ad(rng, page, profile)
                ad_id = f"{user_id}-ad{ads_made:05d}"
                events.append(AdEvent("ad_load", ad_t, page_url=str(page["page_url"]),
                                      ad_placement_id=str(ad["ad_placement_id"]), ad_id=ad_id,
                                      ad_metadata={k: v for k, v in ad.items()
                                                   if k != "ad_placement_id"}))
                vectors = preprocess_record({**context_full, **ad}, registry)
                numvec = np.asarray(vectors.binary + vectors.numerical, dtype=np.float64)
                numeric_rows.append(numvec)
                if signal is not None:
                    raw_cats = {spec.name: str({**context_full, **ad}[spec.name])
                                for spec in registry.categorical}
                    logit = signal.logit(numvec, raw_cats)
                    label_clean = int(logit > 0.0)
                    label = label_clean
                    if rng.random() < label_noise:
                        label = int(rng.random() < 0.5)  # redraw from a fair coin
                    truths.append({"user_id": user_id, "ad_id": ad_id,
                                   "logit": round(logit, 6),
                                   "label_clean": label_clean, "label": label})
                    interval_events, ad_t = _emit_intervals(rng, label, ad_id, ad_t)
                    events.extend(interval_events)
                ads_made += 1
            t = ad_t + float(rng.uniform(20.0, 280.0))
        events.append(AdEvent("session_end", t + 1.0))
        t += 2.0
    return events, truths, (np.vstack(numeric_rows) if numeric_rows else np.empty((0, 0)))


def _pilot_standardization(config: GenConfig, registry: FeatureRegistry) -> Tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std of the scaled numeric vector, from pilot users."""
    rows = []
    for i in range(3):
        rng = np.random.default_rng(derive_seed(config.world_seed, "pilot", i))
        _ev, _tr, mat = _simulate_user(f"pilot{i}", rng, 192, config.days, registry,
                                       signal=None, label_noise=0.0)
        rows.append(mat)
    mat = np.vstack(rows)
    mu = mat.mean(axis=0)
    sigma = np.maximum(mat.std(axis=0), 0.05)
    return mu, sigma


def generate(config: GenConfig, registry: Optional[FeatureRegistry] = None,
             ) -> Tuple[Dict[str, List[AdEvent]], dict]:
    """Generate per-user event logs plus the ground-truth manifest.

    The manifest (latent logits and noisy labels) is returned separately so no
    pipeline component can read it by accident.
    """
    config.validate()
    if registry is None:
        registry = default_registry(ModelConfig())
    weights, effects = _draw_signal(config, registry)
    mu, sigma = _pilot_standardization(config, registry)
    # normalize so the latent logit has roughly unit scale regardless of weights
    var_effects = sum(float(np.mean(np.square(list(table.values()))))
                      for table in effects.values())
    total_std = math.sqrt(float(np.sum(weights ** 2)) + var_effects) or 1.0
    signal = _Signal(numeric_weights=weights / total_std, effects={
        name: {v: e / total_std for v, e in table.items()} for name, table in effects.items()},
        mu=mu, sigma=sigma)

    counts = user_sample_counts(config)
    logs: Dict[str, List[AdEvent]] = {}
    manifest = {"config": {"n_users": config.n_users, "days": config.days,
                           "min_samples_per_user": config.min_samples_per_user,
                           "skew_exponent": config.skew_exponent,
                           "label_noise": config.label_noise, "seed": config.seed,
                           "signal_seed": config.world_seed},
                "users": {}, "ads": []}
    for rank in range(config.n_users):
        user_id = f"u{rank:04d}"
        rng = np.random.default_rng(derive_seed(config.seed, "user", rank))
        events, truths, _mat = _simulate_user(user_id, rng, counts[rank], config.days,
                                              registry, signal, config.label_noise)
        logs[user_id] = events
        manifest["users"][user_id] = counts[rank]
        manifest["ads"].extend(truths)
    return logs, manifest


def generate_samples(config: GenConfig, registry: FeatureRegistry) -> List:
    """Generate logs and replay them into labeled Samples (for server-held sets)."""
    logs, _manifest = generate(config, registry)
    samples = []
    for user_id in sorted(logs):
        state = ClientState(client_id=user_id)
        replay(logs[user_id], state, registry)
        samples.extend(state.store.samples())
    return samples


def partition_report(logs: Dict[str, Sequence]) -> dict:
    """Sample-count statistics for top-10/50/100/500 users by data size."""
    counts = sorted((sum(1 for e in events if e.kind == "ad_load") for events in logs.values()),
                    reverse=True)
    report = {"n_users": len(counts), "total_samples": int(sum(counts)), "buckets": {}}
    for k in (10, 50, 100, 500):
        top = counts[:k]
        if not top:
            continue
        report["buckets"][f"top_{k}"] = {"users": len(top), "min": int(min(top)),
                                         "mean": float(np.mean(top)), "max": int(max(top))}
    return report


def write_dataset(out_dir, logs: Dict[str, List[AdEvent]], manifest: dict) -> None:
    out_dir = Path(out_dir)
    (out_dir / "logs").mkdir(parents=True, exist_ok=True)
    for user_id, events in logs.items():
        write_log(out_dir / "logs" / f"{user_id}.jsonl", events)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
