/**
 * Synthetic test checkpoints with the exact tensor inventory of a
 * torchvision mobilenet_v2 state dict: same names, same shapes, same
 * dtypes, including the I64 num_batches_tracked counters. Values come
 * from a seeded PRNG so a given (seed, classes) pair is reproducible
 * anywhere; batch-norm variances stay in [0.5, 2] so downstream
 * folding never meets a degenerate denominator.
 */

import { torchvisionNameMap } from "./blocks.js";
import { fillUniform, rngFromSeed } from "./prng.js";
import type { TensorEntry } from "./safetensors.js";

function numel(shape: number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}

export function makeTestCheckpoint(seed: number, numClasses: number): Map<string, TensorEntry> {
  if (numClasses < 2) throw new Error(`need at least 2 classes, got ${numClasses}`);
  const rng = rngFromSeed(seed);
  const map = torchvisionNameMap(numClasses);
  const out = new Map<string, TensorEntry>();

  for (const [source, { target, shape }] of map) {
    const n = numel(shape);
    let data: Float32Array;
    if (target.endsWith(".w") && shape.length === 4) {
      // conv weight: uniform with 1/sqrt(fan_in) scale
      const fanIn = shape[1] * shape[2] * shape[3];
      const bound = 1 / Math.sqrt(fanIn);
      data = fillUniform(rng, n, -bound, bound);
    } else if (target === "classifier.w") {
      const bound = 1 / Math.sqrt(shape[1]);
      data = fillUniform(rng, n, -bound, bound);
    } else if (target === "classifier.b") {
      data = fillUniform(rng, n, -0.01, 0.01);
    } else if (target.endsWith(".bn_gamma")) {
      data = fillUniform(rng, n, 0.9, 1.1);
    } else if (target.endsWith(".bn_beta")) {
      data = fillUniform(rng, n, -0.1, 0.1);
    } else if (target.endsWith(".bn_mean")) {
      data = fillUniform(rng, n, -0.1, 0.1);
    } else if (target.endsWith(".bn_var")) {
      data = fillUniform(rng, n, 0.5, 2.0);
    } else {
      throw new Error(`unhandled tensor kind for ${target}`);
    }
    out.set(source, { dtype: "F32", shape: [...shape], data });

    if (source.endsWith(".running_var")) {
      const bn = source.slice(0, -".running_var".length);
      out.set(`${bn}.num_batches_tracked`, {
        dtype: "I64",
        shape: [],
        data: BigInt64Array.from([100n]),
      });
    }
  }
  return out;
}
