/**
 * Forward pass, exact backprop, and plain-SGD training over the wire-format
 * parameter layers. Double-precision arithmetic over the float32 parameter
 * values; divergence from the reference implementation stays within the
 * 1e-4 inference parity budget.
 */

import { BrowserSample } from "./preprocess.js";
import { ModelLayers } from "./wire.js";

export type Gradients = Map<string, Float64Array>;

function relu(x: number): number {
  return x > 0 ? x : 0;
}

function sigmoid(z: number): number {
  if (z >= 0) return 1 / (1 + Math.exp(-z));
  const ez = Math.exp(z);
  return ez / (1 + ez);
}

interface ForwardCache {
  xnum: number[];
  z0: Float64Array;
  h0: Float64Array;
  concat: Float64Array;
  zs: Float64Array[];
  acts: Float64Array[];
  prob: number;
}

function countHidden(model: ModelLayers): number {
  let n = 0;
  while (model.data.has(`hidden_${n}_w`)) n++;
  return n;
}

function countEmbeddings(model: ModelLayers): number {
  let n = 0;
  while (model.data.has(`emb_${n}`)) n++;
  return n;
}

function affine(x: Float64Array | number[], w: Float32Array, b: Float32Array | null,
                inDim: number, outDim: number): Float64Array {
  const out = new Float64Array(outDim);
  for (let j = 0; j < outDim; j++) out[j] = b ? b[j] : 0;
  for (let i = 0; i < inDim; i++) {
    const xi = x[i];
    if (xi === 0) continue;
    const row = i * outDim;
    for (let j = 0; j < outDim; j++) out[j] += xi * w[row + j];
  }
  return out;
}

function forwardCached(model: ModelLayers, sample: BrowserSample): ForwardCache {
  const xnum = [...sample.binary, ...sample.numerical];
  const denseShape = model.shapes.get("num_dense_w")!;
  const [nIn, denseDim] = denseShape;
  if (xnum.length !== nIn) throw new Error(`expected ${nIn} numeric inputs, got ${xnum.length}`);
  const z0 = affine(xnum, model.data.get("num_dense_w")!, model.data.get("num_dense_b")!,
                    nIn, denseDim);
  const h0 = Float64Array.from(z0, relu);

  const nCat = countEmbeddings(model);
  if (sample.categorical.length !== nCat) {
    throw new Error(`expected ${nCat} categorical inputs, got ${sample.categorical.length}`);
  }
  const embDim = nCat > 0 ? model.shapes.get("emb_0")![1] : 0;
  const concat = new Float64Array(denseDim + nCat * embDim);
  concat.set(h0, 0);
  for (let j = 0; j < nCat; j++) {
    const table = model.data.get(`emb_${j}`)!;
    const buckets = model.shapes.get(`emb_${j}`)![0];
    const idx = sample.categorical[j];
    if (idx < 0 || idx >= buckets) throw new Error(`categorical index ${idx} out of range`);
    for (let d = 0; d < embDim; d++) concat[denseDim + j * embDim + d] = table[idx * embDim + d];
  }

  const zs: Float64Array[] = [];
  const acts: Float64Array[] = [concat];
  let a: Float64Array = concat;
  const nHidden = countHidden(model);
  for (let layer = 0; layer < nHidden; layer++) {
    const [inDim, outDim] = model.shapes.get(`hidden_${layer}_w`)!;
    const z = affine(a, model.data.get(`hidden_${layer}_w`)!,
                     model.data.get(`hidden_${layer}_b`)!, inDim, outDim);
    a = Float64Array.from(z, relu);
    zs.push(z);
    acts.push(a);
  }

  const outW = model.data.get("out_w")!;
  let zOut = model.data.get("out_b")![0];
  for (let i = 0; i < a.length; i++) zOut += a[i] * outW[i];
  return { xnum, z0, h0, concat, zs, acts, prob: sigmoid(zOut) };
}

export function forward(model: ModelLayers, sample: BrowserSample): number {
  return forwardCached(model, sample).prob;
}

const LOSS_CLAMP = 1e-7;

export function bceLoss(preds: number[], labels: number[]): number {
  if (preds.length === 0 || preds.length !== labels.length) {
    throw new Error("bceLoss needs equally sized, non-empty inputs");
  }
  let total = 0;
  for (let i = 0; i < preds.length; i++) {
    const p = Math.min(1 - LOSS_CLAMP, Math.max(LOSS_CLAMP, preds[i]));
    total += -(labels[i] * Math.log(p) + (1 - labels[i]) * Math.log(1 - p));
  }
  return total / preds.length;
}

/** Exact gradients of the mean BCE over a batch, shaped like the layers. */
export function backward(model: ModelLayers, batch: BrowserSample[],
                         labels: number[]): Gradients {
  const grads: Gradients = new Map();
  for (const name of model.order) {
    grads.set(name, new Float64Array(model.data.get(name)!.length));
  }
  const nHidden = countHidden(model);
  const nCat = countEmbeddings(model);
  const denseDim = model.shapes.get("num_dense_w")![1];
  const embDim = nCat > 0 ? model.shapes.get("emb_0")![1] : 0;

  for (let s = 0; s < batch.length; s++) {
    const cache = forwardCached(model, batch[s]);
    const dz = (cache.prob - labels[s]) / batch.length;

    const aLast = cache.acts[cache.acts.length - 1];
    const gOutW = grads.get("out_w")!;
    for (let i = 0; i < aLast.length; i++) gOutW[i] += dz * aLast[i];
    grads.get("out_b")![0] += dz;

    const outW = model.data.get("out_w")!;
    let da = Float64Array.from(outW, (w) => dz * w);

    for (let layer = nHidden - 1; layer >= 0; layer--) {
      const [inDim, outDim] = model.shapes.get(`hidden_${layer}_w`)!;
      const z = cache.zs[layer];
      const prev = cache.acts[layer];
      const w = model.data.get(`hidden_${layer}_w`)!;
      const gw = grads.get(`hidden_${layer}_w`)!;
      const gb = grads.get(`hidden_${layer}_b`)!;
      const dzh = new Float64Array(outDim);
      for (let j = 0; j < outDim; j++) dzh[j] = z[j] > 0 ? da[j] : 0;
      for (let j = 0; j < outDim; j++) gb[j] += dzh[j];
      const nextDa = new Float64Array(inDim);
      for (let i = 0; i < inDim; i++) {
        const row = i * outDim;
        let acc = 0;
        for (let j = 0; j < outDim; j++) {
          gw[row + j] += prev[i] * dzh[j];
          acc += dzh[j] * w[row + j];
        }
        nextDa[i] = acc;
      }
      da = nextDa;
    }

    const gNumW = grads.get("num_dense_w")!;
    const gNumB = grads.get("num_dense_b")!;
    for (let j = 0; j < denseDim; j++) {
      const dz0 = cache.z0[j] > 0 ? da[j] : 0;
      if (dz0 === 0) continue;
      gNumB[j] += dz0;
      for (let i = 0; i < cache.xnum.length; i++) {
        gNumW[i * denseDim + j] += cache.xnum[i] * dz0;
      }
    }
    for (let j = 0; j < nCat; j++) {
      const idx = batch[s].categorical[j];
      const gTable = grads.get(`emb_${j}`)!;
      for (let d = 0; d < embDim; d++) {
        gTable[idx * embDim + d] += da[denseDim + j * embDim + d];
      }
    }
  }
  return grads;
}

/** In-place plain SGD step; the cross-implementation training oracle. */
export function sgdStep(model: ModelLayers, grads: Gradients, lr: number): void {
  for (const name of model.order) {
    const values = model.data.get(name)!;
    const g = grads.get(name)!;
    for (let i = 0; i < values.length; i++) {
      values[i] = Math.fround(values[i] - lr * g[i]);
    }
  }
}

/** Shuffled mini-batch SGD passes over stored samples; returns loss trace. */
export function trainSgd(model: ModelLayers, samples: BrowserSample[], epochs: number,
                         batchSize: number, lr: number,
                         rnd: () => number = Math.random): number[] {
  const losses: number[] = [];
  const indices = samples.map((_, i) => i);
  for (let epoch = 0; epoch < epochs; epoch++) {
    for (let i = indices.length - 1; i > 0; i--) {
      const j = Math.floor(rnd() * (i + 1));
      [indices[i], indices[j]] = [indices[j], indices[i]];
    }
    let total = 0;
    for (let start = 0; start < indices.length; start += batchSize) {
      const batch = indices.slice(start, start + batchSize).map((i) => samples[i]);
      const labels = batch.map((s) => s.labelViewable);
      const preds = batch.map((s) => forward(model, s));
      total += bceLoss(preds, labels) * batch.length;
      sgdStep(model, backward(model, batch, labels), lr);
    }
    losses.push(total / indices.length);
  }
  return losses;
}
