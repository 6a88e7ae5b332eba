/**
 * Deterministic preprocessing, a value-for-value port of the reference
 * pipeline: MinMax scaling with fixed bounds, FNV-1a hashing for strings,
 * defaults for anything absent or mistyped. IEEE-754 doubles on both sides
 * make the numerical outputs bit-identical, not merely close.
 */

import { hashEncode } from "./fnv1a.js";
import { FeatureSpec, Registry } from "./registry.js";

export type RawValue = string | number | boolean | null | undefined;
export type RawRecord = Record<string, RawValue>;

export interface FeatureVectors {
  binary: number[];
  numerical: number[];
  categorical: number[];
  anomalies: number;
}

export interface PreprocessedPart {
  values: Map<string, number>;
  registryHash: bigint;
  anomalies: number;
}

export interface BrowserSample {
  binary: number[];
  numerical: number[];
  categorical: number[];
  labelViewable: number;
  adId: string;
  registryHash: string;
  timestamp: number;
}

export function minmaxScale(value: number | null, spec: FeatureSpec): number {
  const x = value === null || !Number.isFinite(value) ? (spec.default as number) : value;
  const scaled = (x - spec.min!) / (spec.max! - spec.min!);
  return Math.min(1.0, Math.max(0.0, scaled));
}

/** Apply the spec's method; wrong-typed values count as anomalies. */
export function encodeFeature(value: RawValue, spec: FeatureSpec): [number, number] {
  let anomaly = 0;
  if (spec.method === "passthrough_binary") {
    if (value === undefined || value === null) return [spec.default as number, 0];
    if (typeof value === "boolean") return [value ? 1 : 0, 0];
    if (typeof value === "number" && (value === 0 || value === 1)) return [value, 0];
    return [spec.default as number, 1];
  }
  if (spec.method === "minmax") {
    let x: number | null = null;
    if (value !== undefined && value !== null) {
      if (typeof value !== "number") {
        anomaly = 1; // wrong type; non-finite numbers are merely treated as absent
      } else if (Number.isFinite(value)) {
        x = value;
      }
    }
    return [minmaxScale(x, spec), anomaly];
  }
  // hash
  let s: string;
  if (value === undefined || value === null) {
    s = spec.default as string;
  } else if (typeof value === "string") {
    s = value;
  } else {
    s = spec.default as string;
    anomaly = 1;
  }
  return [hashEncode(s, spec.buckets!), anomaly];
}

export function preprocessPart(raw: RawRecord, registry: Registry,
                               categories?: Set<string>): PreprocessedPart {
  const values = new Map<string, number>();
  let anomalies = 0;
  for (const spec of registry.specs) {
    if (categories && !categories.has(spec.category)) continue;
    const [encoded, bad] = encodeFeature(raw[spec.name], spec);
    values.set(spec.name, encoded);
    anomalies += bad;
  }
  return { values, registryHash: registry.registryHash, anomalies };
}

function vectorsFromValues(values: Map<string, number>, registry: Registry): FeatureVectors {
  const out: FeatureVectors = { binary: [], numerical: [], categorical: [], anomalies: 0 };
  for (const spec of registry.specs) {
    const v = values.has(spec.name) ? values.get(spec.name)!
      : encodeFeature(undefined, spec)[0];
    if (spec.kind === "binary") out.binary.push(v);
    else if (spec.kind === "numerical") out.numerical.push(v);
    else out.categorical.push(v);
  }
  return out;
}

/** Full-record preprocessing into partitioned vectors in canonical order. */
export function preprocessRecord(raw: RawRecord, registry: Registry): FeatureVectors {
  const part = preprocessPart(raw, registry);
  const vectors = vectorsFromValues(part.values, registry);
  vectors.anomalies = part.anomalies;
  return vectors;
}

/** Join ad and contextual parts into a stored sample (label starts negative). */
export function assembleSample(adPart: PreprocessedPart, contextPart: PreprocessedPart,
                               adId: string, timestamp: number,
                               registry: Registry): BrowserSample {
  if (adPart.registryHash !== contextPart.registryHash ||
      adPart.registryHash !== registry.registryHash) {
    throw new Error("feature parts preprocessed against different registries");
  }
  const merged = new Map(contextPart.values);
  for (const [name, value] of adPart.values) merged.set(name, value);
  const vectors = vectorsFromValues(merged, registry);
  return {
    binary: vectors.binary,
    numerical: vectors.numerical,
    categorical: vectors.categorical,
    labelViewable: 0,
    adId,
    registryHash: registry.registryHash.toString(),
    timestamp,
  };
}
