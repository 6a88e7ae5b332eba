"""Ad event log records and their line-oriented file format.

One JSON object per line, fields in a fixed order, None fields omitted. The
`ad_metadata` map carries the kind-specific raw features: page/user context for
page_request events, ad capture data for ad_load events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .errors import InputError

EVENT_KINDS = ("page_request", "ad_load", "visibility_interval", "session_end")


@dataclass
class AdEvent:
    kind: str
    timestamp: float
    page_url: Optional[str] = None
    ad_placement_id: Optional[str] = None
    ad_id: Optional[str] = None
    visible_fraction: Optional[float] = None
    duration_s: Optional[float] = None
    ad_metadata: Optional[Dict[str, object]] = None

    def to_json_line(self) -> str:
        record = {"kind": self.kind, "timestamp": self.timestamp}
        for key in ("page_url", "ad_placement_id", "ad_id", "visible_fraction", "duration_s",
                    "ad_metadata"):
            value = getattr(self, key)
            if value is not None:
                record[key] = value
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "AdEvent":
        try:
            d = json.loads(line)
            event = cls(kind=d["kind"], timestamp=float(d["timestamp"]),
                        page_url=d.get("page_url"), ad_placement_id=d.get("ad_placement_id"),
                        ad_id=d.get("ad_id"),
                        visible_fraction=(None if d.get("visible_fraction") is None
                                          else float(d["visible_fraction"])),
                        duration_s=(None if d.get("duration_s") is None else float(d["duration_s"])),
                        ad_metadata=d.get("ad_metadata"))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed ad event line: {exc}") from exc
        if event.kind not in EVENT_KINDS:
            raise InputError(f"unknown event kind {event.kind!r}")
        return event


def write_log(path, events: List[AdEvent]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json_line() + "\n")


def read_log(path) -> List[AdEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(AdEvent.from_json_line(line))
    return events
