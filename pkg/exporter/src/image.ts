/**
 * Image preprocessing that agrees bit for bit with the Python
 * pipeline, which is the whole point: the fixtures this code produces
 * are only useful if both implementations compute the same bytes.
 *
 * Resize (bilinear, frozen arithmetic):
 *   src = (dst + 0.5) * (in / out) - 0.5, clamped at 0
 *   second sample index edge-clamped, fractions from the clamped src
 *   value = (1-fy)*((1-fx)*a + fx*b) + fy*((1-fx)*c + fx*d)  in float64
 *   stored as floor(value + 0.5) clipped to [0, 255]
 *
 * Normalisation: (p/255 - mean) / std per channel in float64, stored
 * float32, channels-first RGB.
 */

import type { RgbImage } from "./png.js";

export const IMAGENET_MEAN = [0.485, 0.456, 0.406] as const;
export const IMAGENET_STD = [0.229, 0.224, 0.225] as const;

export function resizeBilinear(img: RgbImage, outH: number, outW = outH): RgbImage {
  if (outH < 1 || outW < 1) throw new Error(`resize: bad output size ${outH}x${outW}`);
  const { width: w, height: h, pixels } = img;
  if (outH === h && outW === w) {
    return { width: w, height: h, pixels: pixels.slice() };
  }

  const y0 = new Int32Array(outH);
  const y1 = new Int32Array(outH);
  const fy = new Float64Array(outH);
  for (let i = 0; i < outH; i++) {
    const src = Math.max((i + 0.5) * (h / outH) - 0.5, 0.0);
    const lo = Math.floor(src);
    y0[i] = lo;
    y1[i] = Math.min(lo + 1, h - 1);
    fy[i] = src - lo;
  }
  const x0 = new Int32Array(outW);
  const x1 = new Int32Array(outW);
  const fx = new Float64Array(outW);
  for (let j = 0; j < outW; j++) {
    const src = Math.max((j + 0.5) * (w / outW) - 0.5, 0.0);
    const lo = Math.floor(src);
    x0[j] = lo;
    x1[j] = Math.min(lo + 1, w - 1);
    fx[j] = src - lo;
  }

  const out = new Uint8Array(outH * outW * 3);
  for (let i = 0; i < outH; i++) {
    const gy = fy[i];
    const rowA = y0[i] * w;
    const rowC = y1[i] * w;
    for (let j = 0; j < outW; j++) {
      const gx = fx[j];
      const pa = (rowA + x0[j]) * 3;
      const pb = (rowA + x1[j]) * 3;
      const pc = (rowC + x0[j]) * 3;
      const pd = (rowC + x1[j]) * 3;
      const po = (i * outW + j) * 3;
      for (let ch = 0; ch < 3; ch++) {
        const a = pixels[pa + ch];
        const b = pixels[pb + ch];
        const c = pixels[pc + ch];
        const d = pixels[pd + ch];
        const v = (1 - gy) * ((1 - gx) * a + gx * b) + gy * ((1 - gx) * c + gx * d);
        const r = Math.floor(v + 0.5);
        out[po + ch] = r < 0 ? 0 : r > 255 ? 255 : r;
      }
    }
  }
  return { width: outW, height: outH, pixels: out };
}

/** Channels-first float32 tensor (3, h, w) from 8-bit RGB. */
export function normalize(
  img: RgbImage,
  mean: readonly number[] = IMAGENET_MEAN,
  std: readonly number[] = IMAGENET_STD,
): Float32Array {
  if (mean.length !== 3 || std.length !== 3) {
    throw new Error("normalize: mean and std need three channel values");
  }
  if (std.some((s) => s <= 0)) throw new Error("normalize: std must be positive");
  const { width: w, height: h, pixels } = img;
  const plane = h * w;
  const out = new Float32Array(3 * plane);
  for (let p = 0; p < plane; p++) {
    for (let ch = 0; ch < 3; ch++) {
      out[ch * plane + p] = (pixels[p * 3 + ch] / 255 - mean[ch]) / std[ch];
    }
  }
  return out;
}
