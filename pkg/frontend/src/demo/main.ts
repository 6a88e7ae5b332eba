/**
 * Mock publisher page: refreshing ad slots, DOM-mutation capture, visibility
 * tracking, per-ad inference adjusting the refresh interval, IndexedDB
 * persistence, and a train-and-upload cycle running in a worker.
 */

import { CapturedAd, setupAdMonitoring } from "../capture.js";
import { adjustRefresh, BrowserFlClient } from "../client.js";
import { AdflServerClient } from "../protocol.js";
import { IndexedDbStore } from "../store.js";
import { computeSessionFeatures, freshSession, sessionRawFeatures } from "../session.js";
import { TrainRequest, TrainResponse } from "./trainWorker.js";

const PLACEMENTS = ["adplacementTop", "adplacementSide"];
const ADTECH = ["bidstream", "adnova", "pixelbid", "trackly", "admesh"];
const SIZES: [number, number][] = [[300, 250], [728, 90], [300, 600], [160, 600]];
const MIN_SAMPLES = 10; // demo-scale; production uses 50

const log = (line: string) => {
  const el = document.getElementById("log")!;
  el.textContent = `${new Date().toLocaleTimeString()} ${line}\n` + el.textContent;
};

function mockCreative(placementId: string, counter: number): HTMLElement {
  const [w, h] = SIZES[Math.floor(Math.random() * SIZES.length)];
  const el = document.createElement("div");
  el.className = "mock-ad";
  el.dataset.adId = `${placementId}-${counter}-${Date.now()}`;
  el.dataset.adWidth = String(w);
  el.dataset.adHeight = String(h);
  el.dataset.adSizeFormat = `${w}x${h}`;
  el.dataset.adtechTag = ADTECH[Math.floor(Math.random() * ADTECH.length)];
  el.dataset.creativeBytes = String(Math.floor(20_000 + Math.random() * 200_000));
  el.dataset.iframeNestingDepth = String(1 + Math.floor(Math.random() * 5));
  el.dataset.adSlotPositionPx = String(Math.round(
    (document.getElementById(placementId)?.getBoundingClientRect().top ?? 0) + window.scrollY));
  el.dataset.adAreaRatio = String(
    (w * h) / (window.innerWidth * document.body.scrollHeight || 1));
  el.style.cssText = `width:${Math.min(w, 600) / 2}px;height:${h / 2}px;` +
    "background:linear-gradient(135deg,#4a6,#28c);color:#fff;display:flex;" +
    "align-items:center;justify-content:center;font:12px sans-serif;";
  el.textContent = `${w}x${h} ${el.dataset.adtechTag}`;
  return el;
}

async function main() {
  const server = new AdflServerClient(window.location.origin);
  const store = await IndexedDbStore.open();
  const client = new BrowserFlClient(`browser-${crypto.randomUUID().slice(0, 8)}`,
                                     server, store);
  await client.loadRegistry();
  const gotModel = (await client.syncModel()) || (await client.restoreModelFromStore());
  log(gotModel ? `model ready (tag ${server.cookies.get()})` : "no model yet");

  let session = freshSession();
  session = computeSessionFeatures(session, Date.now() / 1000, window.location.pathname);
  client.setPageContext({
    page_url: window.location.pathname,
    page_section: "home",
    page_height: document.body.scrollHeight,
    viewport_width: window.innerWidth,
    viewport_height: window.innerHeight,
    device_pixel_ratio: window.devicePixelRatio,
    user_agent: navigator.userAgent.slice(0, 120),
    browser_language: navigator.language,
    os_family: navigator.platform || "other",
    is_mobile: /Mobi/.test(navigator.userAgent) ? 1 : 0,
    referrer_domain: document.referrer ? new URL(document.referrer).hostname : "direct",
    ...sessionRawFeatures(session),
  });

  const refreshSeconds = new Map(PLACEMENTS.map((p) => [p, 8])); // demo-speed baseline

  setupAdMonitoring(PLACEMENTS, {
    async onAdCaptured(ad: CapturedAd) {
      const prob = await client.captureAd(ad.adId, ad.record, Date.now() / 1000);
      const n = await store.count("processedData");
      if (prob === null) {
        log(`captured ${ad.adId} (${n} stored, no model)`);
        return;
      }
      const placement = String(ad.record["ad_placement_id"]);
      const decision = adjustRefresh(prob, refreshSeconds.get(placement) ?? 8, 0.3, 0.7, 4, 20);
      refreshSeconds.set(placement, decision.seconds);
      log(`captured ${ad.adId}: p=${prob.toFixed(3)} -> ${decision.action} ` +
          `(${decision.seconds.toFixed(0)}s, ${n} stored)`);
    },
    onViewable(adId: string) {
      void client.markViewable(adId);
      log(`viewable: ${adId}`);
    },
  });

  const counters = new Map(PLACEMENTS.map((p) => [p, 0]));
  const refreshSlot = (placementId: string) => {
    const slot = document.getElementById(placementId)!;
    slot.replaceChildren(mockCreative(placementId, counters.get(placementId)!));
    counters.set(placementId, counters.get(placementId)! + 1);
    setTimeout(() => refreshSlot(placementId), (refreshSeconds.get(placementId) ?? 8) * 1000);
  };
  PLACEMENTS.forEach(refreshSlot);

  const worker = new Worker(new URL("./trainWorker.js", import.meta.url), { type: "module" });
  document.getElementById("train")!.addEventListener("click", async () => {
    const samples = await client.samples();
    if (samples.length < MIN_SAMPLES || !client.model) {
      log(`not training: ${samples.length}/${MIN_SAMPLES} samples`);
      return;
    }
    await client.syncModel();
    const baseTag = server.cookies.get()!;
    const payload = (await store.get("configuration", "model_payload")) as
      TrainRequest["payload"];
    const trainSplit = samples.slice(0, Math.max(1, Math.floor(0.8 * samples.length)));
    log(`training on ${trainSplit.length} samples (worker)...`);
    const request: TrainRequest = { payload, samples: trainSplit, epochs: 3,
                                    batchSize: 16, lr: 0.01 };
    worker.postMessage(request);
    worker.onmessage = async (event: MessageEvent<TrainResponse>) => {
      const { status, json } = await server.postUpdate({
        client_id: client.clientId, base_tag: baseTag,
        num_samples: trainSplit.length, dp_applied: false, ...event.data.payload,
      });
      log(status === 200
        ? `uploaded update, server round ${json["round"]} ` +
          `(loss ${event.data.losses.at(-1)?.toFixed(4)})`
        : `upload rejected: ${status} ${JSON.stringify(json)}`);
    };
  });
}

main().catch((err) => log(`error: ${err}`));
