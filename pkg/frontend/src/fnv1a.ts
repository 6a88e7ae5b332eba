/**
 * 64-bit FNV-1a over UTF-8 bytes, matching the server's feature hashing and
 * registry digests bit for bit (BigInt keeps the full 64-bit state).
 */

const OFFSET = 0xcbf29ce484222325n;
const PRIME = 0x100000001b3n;
const MASK64 = (1n << 64n) - 1n;

export function fnv1a64(text: string): bigint {
  const bytes = new TextEncoder().encode(text);
  let hash = OFFSET;
  for (const byte of bytes) {
    hash ^= BigInt(byte);
    hash = (hash * PRIME) & MASK64;
  }
  return hash;
}

/** Stable bucket index in [0, buckets); identical to the Python client. */
export function hashEncode(value: string, buckets: number): number {
  if (buckets < 2) throw new Error(`hashEncode needs at least 2 buckets, got ${buckets}`);
  return Number(fnv1a64(value) % BigInt(buckets));
}
