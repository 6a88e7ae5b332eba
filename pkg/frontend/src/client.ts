/**
 * The in-browser FL participant: owns the store, the downloaded registry and
 * model, per-ad preprocessing + inference, viewability label updates, and the
 * download -> local SGD -> upload cycle against the coordination server.
 */

import { forward, trainSgd } from "./model.js";
import { AdflServerClient } from "./protocol.js";
import { AD_CATEGORIES, CONTEXT_CATEGORIES, Registry, parseRegistry } from "./registry.js";
import { BrowserSample, RawRecord, assembleSample, preprocessPart } from "./preprocess.js";
import { ClientStore, MemoryStore } from "./store.js";
import { ModelLayers, cloneLayers, decodePayload, encodeLayers } from "./wire.js";

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  lr: number;
  minSamples: number;
}

export const DEFAULT_TRAIN_OPTIONS: TrainOptions = {
  epochs: 3,
  batchSize: 16,
  lr: 0.01,
  minSamples: 50,
};

export interface SyncResult {
  action: "skipped" | "uploaded" | "failed";
  round?: number;
  reason?: string;
}

export class BrowserFlClient {
  registry: Registry | null = null;
  model: ModelLayers | null = null;
  private contextPart: ReturnType<typeof preprocessPart> | null = null;

  constructor(readonly clientId: string, readonly server: AdflServerClient,
              readonly store: ClientStore = new MemoryStore()) {}

  async loadRegistry(): Promise<Registry> {
    const text = await this.server.getRegistryText();
    this.registry = parseRegistry(text);
    await this.store.put("configuration", "registry_text", text);
    return this.registry;
  }

  /** Download the global model if the server has something newer. */
  async syncModel(waitSeconds = 0): Promise<boolean> {
    const { status, payload } = await this.server.getModel(waitSeconds);
    if (status !== 200 || payload === null) return false;
    // decode everything before touching the cookie: the cookie must only ever
    // name a model this client holds in full
    this.model = decodePayload(payload);
    this.server.cookies.set(payload.tag!);
    await this.store.put("configuration", "model_tag", payload.tag);
    await this.store.put("configuration", "model_payload", payload);
    return true;
  }

  async restoreModelFromStore(): Promise<boolean> {
    const payload = await this.store.get("configuration", "model_payload");
    if (!payload) return false;
    this.model = decodePayload(payload as Parameters<typeof decodePayload>[0]);
    return true;
  }

  setPageContext(raw: RawRecord): void {
    if (!this.registry) throw new Error("registry not loaded");
    this.contextPart = preprocessPart(raw, this.registry, CONTEXT_CATEGORIES);
  }

  /** Preprocess a captured ad, store the sample, return the prediction. */
  async captureAd(adId: string, raw: RawRecord, timestamp: number): Promise<number | null> {
    if (!this.registry) throw new Error("registry not loaded");
    const adPart = preprocessPart(raw, this.registry, AD_CATEGORIES);
    const context = this.contextPart ?? preprocessPart({}, this.registry, CONTEXT_CATEGORIES);
    const sample = assembleSample(adPart, context, adId, timestamp, this.registry);
    await this.store.put("processedData", adId, sample);
    return this.infer(sample);
  }

  infer(sample: BrowserSample): number | null {
    if (!this.model) return null;
    if (this.registry && sample.registryHash !== this.registry.registryHash.toString()) {
      throw new Error("sample registry does not match the loaded registry");
    }
    return forward(this.model, sample);
  }

  async markViewable(adId: string): Promise<void> {
    const sample = (await this.store.get("processedData", adId)) as BrowserSample | undefined;
    if (sample && sample.labelViewable === 0) {
      sample.labelViewable = 1;
      await this.store.put("processedData", adId, sample);
    }
  }

  async samples(): Promise<BrowserSample[]> {
    const all = (await this.store.getAll("processedData")) as BrowserSample[];
    return all.sort((a, b) => a.timestamp - b.timestamp);
  }

  /**
   * One participation cycle: download if newer, train a few SGD epochs on the
   * chronological 80% training split, upload. A stale-tag rejection re-syncs
   * and retries once.
   */
  async trainAndSync(options: TrainOptions = DEFAULT_TRAIN_OPTIONS): Promise<SyncResult> {
    const stored = await this.samples();
    if (stored.length < options.minSamples) {
      return { action: "skipped", reason: `${stored.length} < ${options.minSamples} samples` };
    }
    for (let attempt = 0; attempt < 2; attempt++) {
      await this.syncModel();
      if (!this.model) return { action: "failed", reason: "no model available" };
      const baseTag = this.server.cookies.get();
      if (!baseTag) return { action: "failed", reason: "no version tag" };
      const trainSplit = stored.slice(0, Math.max(1, Math.floor(0.8 * stored.length)));
      const trained = cloneLayers(this.model);
      trainSgd(trained, trainSplit, options.epochs, options.batchSize, options.lr);
      const body = {
        client_id: this.clientId,
        base_tag: baseTag,
        num_samples: trainSplit.length,
        dp_applied: false,
        ...encodeLayers(trained),
      };
      const { status, json } = await this.server.postUpdate(body);
      if (status === 200) {
        this.model = trained;
        return { action: "uploaded", round: json["round"] as number };
      }
      if (status !== 409) return { action: "failed", reason: `status ${status}` };
      // stale tag: fall through to re-download and retrain once
    }
    return { action: "failed", reason: "still stale after resync" };
  }
}

/** Refresh-interval policy fed by viewability predictions. */
export function adjustRefresh(prediction: number, currentSeconds: number,
                              low = 0.3, high = 0.7, minSeconds = 15,
                              maxSeconds = 60): { action: string; seconds: number } {
  if (prediction < low) {
    return { action: "shorten_refresh", seconds: Math.max(minSeconds, currentSeconds / 2) };
  }
  if (prediction > high) {
    return { action: "extend_refresh", seconds: Math.min(maxSeconds, currentSeconds * 1.5) };
  }
  return { action: "keep_schedule", seconds: currentSeconds };
}
