/**
 * Wire protocol client. The model version tag rides in the adfl_tag cookie:
 * the browser sends it automatically (same origin, Set-Cookie); headless runs
 * inject the Cookie header from an in-memory jar. Every outbound request is
 * recorded in `outbox` so tests can prove no raw sample ever leaves.
 */

import { ParamsPayload } from "./wire.js";

export interface CookieJar {
  get(): string | null;
  set(tag: string): void;
}

export class MemoryCookieJar implements CookieJar {
  private tag: string | null = null;
  get(): string | null { return this.tag; }
  set(tag: string): void { this.tag = tag; }
}

/** document.cookie-backed jar; the header itself is attached by the browser. */
export class BrowserCookieJar implements CookieJar {
  get(): string | null {
    const match = document.cookie.match(/(?:^|;\s*)adfl_tag=([^;]+)/);
    return match ? match[1] : null;
  }
  set(tag: string): void {
    document.cookie = `adfl_tag=${tag}; Path=/`;
  }
}

export interface UpdateBody extends ParamsPayload {
  client_id: string;
  base_tag: string;
  num_samples: number;
  dp_applied: boolean;
}

export interface OutboxEntry {
  method: string;
  path: string;
  body: UpdateBody | null;
}

export interface ServerStatus {
  tag: string;
  round: number;
  status: string;
  param_count: number;
  [key: string]: unknown;
}

const IN_BROWSER = typeof document !== "undefined";

export class AdflServerClient {
  readonly outbox: OutboxEntry[] = [];

  constructor(private baseUrl: string, readonly cookies: CookieJar =
              IN_BROWSER ? new BrowserCookieJar() : new MemoryCookieJar()) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(): Record<string, string> {
    const tag = this.cookies.get();
    // browsers refuse a manual Cookie header and attach it themselves
    return !IN_BROWSER && tag ? { Cookie: `adfl_tag=${tag}` } : {};
  }

  async getModel(waitSeconds = 0): Promise<{ status: number; payload: ParamsPayload | null }> {
    this.outbox.push({ method: "GET", path: "/model", body: null });
    const resp = await fetch(`${this.baseUrl}/model?wait=${waitSeconds}`,
                             { headers: this.headers() });
    if (resp.status !== 200) return { status: resp.status, payload: null };
    const payload = (await resp.json()) as ParamsPayload;
    return { status: 200, payload };
  }

  async postUpdate(body: UpdateBody): Promise<{ status: number; json: Record<string, unknown> }> {
    this.outbox.push({ method: "POST", path: "/update", body });
    const resp = await fetch(`${this.baseUrl}/update`, {
      method: "POST",
      headers: { "Content-Type": "application/json", ...this.headers() },
      body: JSON.stringify(body),
    });
    let json: Record<string, unknown> = {};
    try {
      json = (await resp.json()) as Record<string, unknown>;
    } catch {
      // non-JSON error body
    }
    return { status: resp.status, json };
  }

  async getRegistryText(): Promise<string> {
    this.outbox.push({ method: "GET", path: "/registry", body: null });
    const resp = await fetch(`${this.baseUrl}/registry`);
    if (!resp.ok) throw new Error(`/registry failed with ${resp.status}`);
    return resp.text();
  }

  async getStatus(): Promise<ServerStatus> {
    this.outbox.push({ method: "GET", path: "/status", body: null });
    const resp = await fetch(`${this.baseUrl}/status`);
    if (!resp.ok) throw new Error(`/status failed with ${resp.status}`);
    return (await resp.json()) as ServerStatus;
  }
}
