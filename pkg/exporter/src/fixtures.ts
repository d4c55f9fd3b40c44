/**
 * Reference fixture generation: decode a photo, preprocess it at a
 * set of input sizes, and run the double-precision unfused forward
 * pass, collecting every intermediate another implementation would
 * want to compare against. Everything lands in one archive:
 *
 *   image            (h, w, 3)   decoded 8-bit RGB, stored as float32
 *   mean, std        (3,)        normalisation constants used
 *   sizes            (n,)        input sizes present
 *   s<S>.resized     (S, S, 3)   bilinear-resized 8-bit RGB
 *   s<S>.input       (3, S, S)   normalised network input
 *   s<S>.features    (1280,)     pooled backbone features
 *   s<S>.logits      (k,)        classifier outputs
 */

import { exportCheckpoint } from "./exporter.js";
import { IMAGENET_MEAN, IMAGENET_STD, normalize, resizeBilinear } from "./image.js";
import type { Mnv2Tensor } from "./mnv2.js";
import { classifyFeatures, extractFeatures, networkParams } from "./network.js";
import { decodePng } from "./png.js";
import type { TensorEntry } from "./safetensors.js";

export const DEFAULT_FIXTURE_SIZES = [32, 64, 128, 224, 256];

export function buildFixtures(
  checkpoint: Map<string, TensorEntry>,
  pngBytes: Uint8Array,
  sizes: number[] = DEFAULT_FIXTURE_SIZES,
  log?: (line: string) => void,
): Map<string, Mnv2Tensor> {
  if (sizes.length === 0) throw new Error("need at least one fixture size");
  const exported = exportCheckpoint(checkpoint);
  const eps = exported.tensors.get("bn_eps")!.data[0];
  const params = networkParams(exported.tensors, eps);

  const image = decodePng(pngBytes);
  const out = new Map<string, Mnv2Tensor>();
  out.set("image", {
    shape: [image.height, image.width, 3],
    data: Float32Array.from(image.pixels),
  });
  out.set("mean", { shape: [3], data: Float32Array.from(IMAGENET_MEAN) });
  out.set("std", { shape: [3], data: Float32Array.from(IMAGENET_STD) });
  out.set("sizes", { shape: [sizes.length], data: Float32Array.from(sizes) });

  for (const size of sizes) {
    log?.(`size ${size}: preprocess + forward`);
    const resized = resizeBilinear(image, size);
    const input = normalize(resized);
    // the reference net consumes the float32 input exactly as stored
    const features = extractFeatures(params, {
      channels: 3,
      height: size,
      width: size,
      data: Float64Array.from(input),
    });
    const logits = classifyFeatures(params, features.data);
    out.set(`s${size}.resized`, {
      shape: [size, size, 3],
      data: Float32Array.from(resized.pixels),
    });
    out.set(`s${size}.input`, { shape: [3, size, size], data: input });
    out.set(`s${size}.features`, {
      shape: [features.data.length],
      data: Float32Array.from(features.data),
    });
    out.set(`s${size}.logits`, {
      shape: [logits.length],
      data: Float32Array.from(logits),
    });
  }
  return out;
}
