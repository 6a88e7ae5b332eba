/**
 * Feature registry: parsed from the canonical text document served at
 * /registry. The digest is FNV-1a over the raw document bytes, so hashing the
 * text exactly as received guarantees cross-implementation agreement.
 */

import { fnv1a64 } from "./fnv1a.js";

export type FeatureKind = "binary" | "numerical" | "categorical";
export type FeatureMethod = "minmax" | "hash" | "passthrough_binary";

export interface FeatureSpec {
  name: string;
  category: string;
  kind: FeatureKind;
  method: FeatureMethod;
  min?: number;
  max?: number;
  default: string | number;
  buckets?: number;
}

export interface Registry {
  specs: FeatureSpec[];
  registryHash: bigint;
  text: string;
}

export const AD_CATEGORIES = new Set(["ad", "customized"]);
export const CONTEXT_CATEGORIES = new Set(["user", "page", "session"]);

export function parseRegistry(text: string): Registry {
  const specs: FeatureSpec[] = [];
  for (const rawLine of text.split("\n")) {
    const line = rawLine.trim();
    if (!line || line.startsWith("#")) continue;
    const tokens = line.split(/\s+/);
    if (tokens[0] !== "feature") throw new Error(`bad registry line: ${line}`);
    const kv: Record<string, string> = {};
    for (const token of tokens.slice(1)) {
      const eq = token.indexOf("=");
      if (eq < 0) throw new Error(`bad registry token: ${token}`);
      kv[token.slice(0, eq)] = token.slice(eq + 1);
    }
    const method = kv["method"] as FeatureMethod;
    const spec: FeatureSpec = {
      name: kv["name"],
      category: kv["category"],
      kind: kv["kind"] as FeatureKind,
      method,
      default: method === "minmax" ? parseFloat(kv["default"])
        : method === "passthrough_binary" ? parseInt(kv["default"], 10)
        : kv["default"],
    };
    if (kv["min"] !== undefined) spec.min = parseFloat(kv["min"]);
    if (kv["max"] !== undefined) spec.max = parseFloat(kv["max"]);
    if (kv["buckets"] !== undefined) spec.buckets = parseInt(kv["buckets"], 10);
    specs.push(spec);
  }
  return { specs, registryHash: fnv1a64(text), text };
}
