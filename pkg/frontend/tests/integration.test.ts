/**
 * Live-round integration against the reference coordination server: boot the
 * Python service (min_clients=1), run the browser client's full
 * download-train-upload cycle, and check the server's round counter advances.
 * Also proves the privacy boundary: nothing but model parameters goes out.
 */

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { VisibilityTracker, extractAdRecord } from "../src/capture.js";
import { BrowserFlClient } from "../src/client.js";
import { AdflServerClient } from "../src/protocol.js";
import { computeSessionFeatures, freshSession, sessionRawFeatures } from "../src/session.js";

const PORT = 8910 + (process.pid % 47);
const URL_BASE = `http://127.0.0.1:${PORT}`;

let serverProc: ChildProcess;

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 150; i++) {
    try {
      const resp = await fetch(`${URL_BASE}/status`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("reference server did not come up");
}

beforeAll(async () => {
  serverProc = spawn("python3", ["-m", "fedview.cli", "run-server", "--min-clients", "1",
                                 "--max-rounds", "10", "--val-users", "2",
                                 "--val-min-samples", "50"],
                     { env: { ...process.env, FEDVIEW_PORT: String(PORT) },
                       stdio: ["ignore", "pipe", "pipe"] });
  await waitForServer();
}, 60_000);

afterAll(() => {
  serverProc?.kill("SIGTERM");
});

const SIZES: [number, number][] = [[300, 250], [728, 90], [160, 600], [300, 600]];
const TAGS = ["bidstream", "adnova", "pixelbid", "trackly"];

function rng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

/** Capture a synthetic browsing trace: pages, mock ads, visibility streams. */
async function fillStore(client: BrowserFlClient, count: number, seed: number): Promise<void> {
  const rnd = rng(seed);
  let session = freshSession();
  let t = 1000;
  let made = 0;
  while (made < count) {
    t += 2000 + rnd() * 4000; // new session each page burst
    session = computeSessionFeatures(session, t, `/articles/${Math.floor(rnd() * 20)}`);
    client.setPageContext({
      page_url: `/articles/${Math.floor(rnd() * 20)}`,
      page_section: ["home", "sports", "tech"][Math.floor(rnd() * 3)],
      page_height: 1500 + rnd() * 8000,
      viewport_width: 1280, viewport_height: 800, device_pixel_ratio: 1,
      user_agent: "ua-test-browser", browser_language: "en-US", os_family: "linux",
      is_mobile: 0, referrer_domain: "direct",
      ...sessionRawFeatures(session),
    });
    const adsOnPage = 1 + Math.floor(rnd() * 3);
    for (let i = 0; i < adsOnPage && made < count; i++) {
      const [w, h] = SIZES[Math.floor(rnd() * SIZES.length)];
      const { adId, record } = extractAdRecord("adplacementTop", `it-ad-${made}`, {
        adWidth: String(w), adHeight: String(h), adSizeFormat: `${w}x${h}`,
        adtechTag: TAGS[Math.floor(rnd() * TAGS.length)],
        creativeBytes: String(Math.floor(20_000 + rnd() * 300_000)),
        iframeNestingDepth: String(1 + Math.floor(rnd() * 5)),
        adSlotPositionPx: String(Math.floor(rnd() * 3000)),
        adAreaRatio: String((w * h) / (1280 * 5000)),
      }, rnd() < 0.6);
      t += 5;
      await client.captureAd(adId, record, t);
      // synthetic exposure stream; roughly half the ads become viewable
      const tracker = new VisibilityTracker();
      const fraction = rnd() < 0.5 ? 0.8 : 0.3;
      for (let dt = 0; dt <= 1.5; dt += 0.1) {
        if (tracker.sample(t + dt, fraction)) await client.markViewable(adId);
      }
      made++;
    }
  }
}

describe("live round against the reference server", () => {
  it("completes download-train-upload and advances the round", async () => {
    const server = new AdflServerClient(URL_BASE);
    const client = new BrowserFlClient("browser-it-1", server);

    const registry = await client.loadRegistry();
    expect(registry.specs.length).toBe(26);

    const before = await server.getStatus();
    expect(before.status).toBe("collecting");

    // bootstrap: no cookie -> full model + tag, cookie set after full receipt
    expect(await client.syncModel()).toBe(true);
    const bootTag = server.cookies.get();
    expect(bootTag).toMatch(/^r\d+-[0-9a-f]{8}$/);

    await fillStore(client, 60, 42);
    const labels = (await client.samples()).map((s) => s.labelViewable);
    expect(labels).toContain(1);
    expect(labels).toContain(0);

    const result = await client.trainAndSync({ epochs: 2, batchSize: 16, lr: 0.01,
                                               minSamples: 50 });
    expect(result.action).toBe("uploaded");

    const after = await server.getStatus();
    expect(after.round).toBe(before.round + 1);
    expect(server.cookies.get()).not.toBeNull();

    // a second cycle: the cookie is now stale, so the client re-downloads the
    // aggregated model and the round advances again
    const second = await client.trainAndSync({ epochs: 1, batchSize: 16, lr: 0.01,
                                               minSamples: 50 });
    expect(second.action).toBe("uploaded");
    expect((await server.getStatus()).round).toBe(before.round + 2);
    // the cookie names the last fully downloaded model: the round-(n+1)
    // aggregate this client trained from, not the newer round-(n+2) release
    expect(server.cookies.get()).toMatch(new RegExp(`^r${before.round + 1}-`));
  }, 120_000);

  it("never sends raw samples or features to the server", async () => {
    const server = new AdflServerClient(URL_BASE);
    const client = new BrowserFlClient("browser-it-2", server);
    await client.loadRegistry();
    await client.syncModel();
    await fillStore(client, 55, 7);
    const result = await client.trainAndSync({ epochs: 1, batchSize: 16, lr: 0.01,
                                               minSamples: 50 });
    expect(result.action).toBe("uploaded");
    const posts = server.outbox.filter((e) => e.method === "POST");
    expect(posts.length).toBeGreaterThan(0);
    for (const entry of server.outbox) {
      expect(["/model", "/update", "/status", "/registry"]).toContain(entry.path);
      if (entry.method !== "POST") {
        expect(entry.body).toBeNull();
        continue;
      }
      expect(Object.keys(entry.body!).sort()).toEqual(
        ["base_tag", "client_id", "config_hash", "dp_applied", "layers", "manifest",
         "num_samples"]);
      const text = JSON.stringify(entry.body);
      expect(text).not.toContain("binary");
      expect(text).not.toContain("numerical");
      expect(text).not.toContain("categorical");
      expect(text).not.toContain("labelViewable");
    }
  }, 120_000);

  it("skips the round below min_samples", async () => {
    const server = new AdflServerClient(URL_BASE);
    const client = new BrowserFlClient("browser-it-3", server);
    await client.loadRegistry();
    await client.syncModel();
    await fillStore(client, 5, 9);
    const roundBefore = (await server.getStatus()).round;
    const result = await client.trainAndSync({ epochs: 1, batchSize: 16, lr: 0.01,
                                               minSamples: 50 });
    expect(result.action).toBe("skipped");
    expect((await server.getStatus()).round).toBe(roundBefore);
  }, 60_000);

  it("refuses inference when the sample registry does not match", async () => {
    const server = new AdflServerClient(URL_BASE);
    const client = new BrowserFlClient("browser-it-4", server);
    await client.loadRegistry();
    await client.syncModel();
    expect(() => client.infer({ binary: [0, 0, 0], numerical: new Array(14).fill(0),
                                categorical: new Array(9).fill(0), labelViewable: 0,
                                adId: "x", registryHash: "12345", timestamp: 0 })).toThrow();
  }, 60_000);
});
