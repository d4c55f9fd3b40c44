/**
 * Checkpoint to archive conversion.
 *
 * Takes a torchvision mobilenet_v2 state dict (as safetensors
 * tensors), renames everything to archive names, validates the
 * inventory both ways (no unknown tensors in, nothing missing out),
 * and attaches the batch-norm epsilon as a one-element tensor. Values
 * pass through untouched; folding is the consumer's job.
 */

import { torchvisionNameMap } from "./blocks.js";
import type { Mnv2Tensor } from "./mnv2.js";
import type { TensorEntry } from "./safetensors.js";

export interface ExportResult {
  tensors: Map<string, Mnv2Tensor>;
  numClasses: number;
  /** Source names dropped on purpose (optimizer-style counters). */
  skipped: string[];
}

export function exportCheckpoint(
  checkpoint: Map<string, TensorEntry>,
  opts: { eps?: number } = {},
): ExportResult {
  const eps = opts.eps ?? 1e-5;
  if (!(eps > 0)) throw new Error(`bn epsilon must be positive, got ${eps}`);

  const clsWeight = checkpoint.get("classifier.1.weight");
  if (!clsWeight) throw new Error("checkpoint has no classifier.1.weight");
  if (clsWeight.shape.length !== 2) {
    throw new Error(`classifier.1.weight must be 2-d, got [${clsWeight.shape}]`);
  }
  const numClasses = clsWeight.shape[0];
  const map = torchvisionNameMap(numClasses);

  const tensors = new Map<string, Mnv2Tensor>();
  const skipped: string[] = [];
  for (const [name, entry] of checkpoint) {
    if (name.endsWith(".num_batches_tracked")) {
      skipped.push(name);
      continue;
    }
    const mapped = map.get(name);
    if (!mapped) throw new Error(`unknown checkpoint tensor ${name}`);
    if (entry.dtype !== "F32") {
      throw new Error(`${name} is ${entry.dtype}, expected F32`);
    }
    if (
      entry.shape.length !== mapped.shape.length ||
      entry.shape.some((d, i) => d !== mapped.shape[i])
    ) {
      throw new Error(
        `${name} has shape [${entry.shape}], expected [${mapped.shape}]`,
      );
    }
    tensors.set(mapped.target, {
      shape: [...entry.shape],
      data: entry.data as Float32Array,
    });
  }

  for (const [source, { target }] of map) {
    if (!tensors.has(target)) {
      throw new Error(`checkpoint is missing ${source} (for ${target})`);
    }
  }
  tensors.set("bn_eps", { shape: [1], data: Float32Array.from([eps]) });
  return { tensors, numClasses, skipped };
}
