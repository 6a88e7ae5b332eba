/**
 * Ad capture: a pure extractor from a mock creative's data attributes, a pure
 * visibility state machine implementing the viewability rule (>= 50% of
 * pixels for >= 1 continuous second), and the thin MutationObserver glue that
 * wires both to configured ad placements.
 */

import { RawRecord } from "./preprocess.js";

export const VIEWABLE_MIN_FRACTION = 0.5;
export const VIEWABLE_MIN_SECONDS = 1.0;

const NUMERIC_AD_FIELDS = ["ad_width", "ad_height", "ad_slot_position_px", "creative_bytes",
                           "iframe_nesting_depth", "ad_area_ratio"] as const;
const STRING_AD_FIELDS = ["adtech_tag", "ad_size_format"] as const;

export interface CapturedAd {
  adId: string;
  record: RawRecord;
}

/** Parse one mock creative's dataset into the raw ad record. */
export function extractAdRecord(placementId: string, adId: string,
                                dataset: Record<string, string | undefined>,
                                aboveFold?: boolean): CapturedAd {
  const record: RawRecord = { ad_placement_id: placementId };
  for (const field of NUMERIC_AD_FIELDS) {
    const raw = dataset[camel(field)];
    if (raw !== undefined) {
      const value = parseFloat(raw);
      if (Number.isFinite(value)) record[field] = value;
    }
  }
  for (const field of STRING_AD_FIELDS) {
    const raw = dataset[camel(field)];
    if (raw !== undefined) record[field] = raw;
  }
  if (aboveFold !== undefined) record["ad_above_fold"] = aboveFold ? 1 : 0;
  return { adId, record };
}

function camel(snake: string): string {
  return snake.replace(/_([a-z])/g, (_, c: string) => c.toUpperCase());
}

/**
 * Continuous-exposure tracker. Feed (timestamp, visibleFraction) samples;
 * fires once when a single uninterrupted run satisfies the rule.
 */
export class VisibilityTracker {
  private runStart: number | null = null;
  qualified = false;

  constructor(private minFraction = VIEWABLE_MIN_FRACTION,
              private minSeconds = VIEWABLE_MIN_SECONDS) {}

  sample(timestampSeconds: number, fraction: number): boolean {
    if (this.qualified) return false;
    if (fraction >= this.minFraction) {
      if (this.runStart === null) this.runStart = timestampSeconds;
      if (timestampSeconds - this.runStart >= this.minSeconds) {
        this.qualified = true;
        return true;
      }
    } else {
      this.runStart = null; // the exposure must be one continuous interval
    }
    return false;
  }
}

/** Fraction of the element's area inside the viewport (browser only). */
export function visibleFraction(element: Element): number {
  const rect = element.getBoundingClientRect();
  const area = rect.width * rect.height;
  if (area <= 0) return 0;
  const w = Math.min(rect.right, window.innerWidth) - Math.max(rect.left, 0);
  const h = Math.min(rect.bottom, window.innerHeight) - Math.max(rect.top, 0);
  return w > 0 && h > 0 ? (w * h) / area : 0;
}

export interface AdMonitorHooks {
  onAdCaptured(ad: CapturedAd, element: HTMLElement): void;
  onViewable(adId: string): void;
}

/**
 * Observe the configured placements for inserted mock creatives; unknown
 * placements are ignored. Visibility uses IntersectionObserver when present,
 * with a 100 ms polling fallback.
 */
export function setupAdMonitoring(placementIds: string[], hooks: AdMonitorHooks,
                                  pollMs = 100): () => void {
  const observers: MutationObserver[] = [];
  const trackers = new Map<HTMLElement, { adId: string; tracker: VisibilityTracker }>();

  const pollTimer = setInterval(() => {
    const now = performance.now() / 1000;
    for (const [element, entry] of trackers) {
      if (!element.isConnected) {
        trackers.delete(element);
        continue;
      }
      if (entry.tracker.sample(now, visibleFraction(element))) {
        hooks.onViewable(entry.adId);
      }
    }
  }, pollMs);

  for (const placementId of placementIds) {
    const slot = document.getElementById(placementId);
    if (!slot) continue;
    const observer = new MutationObserver((mutations) => {
      for (const mutation of mutations) {
        for (const node of mutation.addedNodes) {
          if (!(node instanceof HTMLElement) || !node.dataset.adId) continue;
          const aboveFold = node.getBoundingClientRect().top < window.innerHeight;
          const captured = extractAdRecord(placementId, node.dataset.adId, node.dataset,
                                           aboveFold);
          trackers.set(node, { adId: captured.adId, tracker: new VisibilityTracker() });
          hooks.onAdCaptured(captured, node);
        }
      }
    });
    observer.observe(slot, { childList: true });
    observers.push(observer);
  }
  return () => {
    clearInterval(pollTimer);
    observers.forEach((o) => o.disconnect());
  };
}
