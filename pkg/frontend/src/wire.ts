/**
 * Parameter payloads: a (name, shape) manifest in canonical order with each
 * layer's values as base64-wrapped little-endian float32 bytes. config_hash
 * travels as a decimal string (a 64-bit digest does not survive JSON numbers).
 */

export interface ParamsPayload {
  config_hash: string | number;
  manifest: [string, number[]][];
  layers: Record<string, string>;
  tag?: string;
  round?: number;
  config?: Record<string, unknown>;
}

export interface ModelLayers {
  order: string[];
  shapes: Map<string, number[]>;
  data: Map<string, Float32Array>;
  configHash: string;
}

function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export function decodePayload(payload: ParamsPayload): ModelLayers {
  const order: string[] = [];
  const shapes = new Map<string, number[]>();
  const data = new Map<string, Float32Array>();
  for (const [name, shape] of payload.manifest) {
    const bytes = base64ToBytes(payload.layers[name]);
    const count = shape.reduce((a, b) => a * b, 1);
    if (bytes.byteLength !== count * 4) {
      throw new Error(`layer ${name}: ${bytes.byteLength} bytes, expected ${count * 4}`);
    }
    const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
    const values = new Float32Array(count);
    for (let i = 0; i < count; i++) values[i] = view.getFloat32(i * 4, true);
    order.push(name);
    shapes.set(name, shape);
    data.set(name, values);
  }
  return { order, shapes, data, configHash: String(payload.config_hash) };
}

export function encodeLayers(model: ModelLayers): ParamsPayload {
  const manifest: [string, number[]][] = [];
  const layers: Record<string, string> = {};
  for (const name of model.order) {
    const values = model.data.get(name)!;
    const bytes = new Uint8Array(values.length * 4);
    const view = new DataView(bytes.buffer);
    for (let i = 0; i < values.length; i++) view.setFloat32(i * 4, values[i], true);
    manifest.push([name, model.shapes.get(name)!]);
    layers[name] = bytesToBase64(bytes);
  }
  return { config_hash: model.configHash, manifest, layers };
}

export function cloneLayers(model: ModelLayers): ModelLayers {
  const data = new Map<string, Float32Array>();
  for (const name of model.order) data.set(name, Float32Array.from(model.data.get(name)!));
  return { order: [...model.order], shapes: new Map(model.shapes), data,
           configHash: model.configHash };
}
