import { describe, expect, it } from "vitest";

import { archivePlan } from "../src/blocks.js";
import { makeTestCheckpoint } from "../src/checkpoint.js";
import { exportCheckpoint } from "../src/exporter.js";
import { readMnv2, writeMnv2 } from "../src/mnv2.js";

describe("exportCheckpoint", () => {
  it("renames the full inventory and appends bn_eps", () => {
    const result = exportCheckpoint(makeTestCheckpoint(0, 11));
    expect(result.numClasses).toBe(11);
    expect(result.tensors.size).toBe(263);
    const want = new Set([...archivePlan(11).keys(), "bn_eps"]);
    expect(new Set(result.tensors.keys())).toEqual(want);
    expect([...result.tensors.get("bn_eps")!.data]).toEqual([Math.fround(1e-5)]);
    expect(result.tensors.get("bn_eps")!.shape).toEqual([1]);
  });

  it("passes values through untouched", () => {
    const ckpt = makeTestCheckpoint(9, 3);
    const result = exportCheckpoint(ckpt);
    const src = ckpt.get("features.0.0.weight")!.data as Float32Array;
    expect(result.tensors.get("stem.conv.w")!.data).toBe(src);
    expect(result.tensors.get("classifier.w")!.data).toBe(
      ckpt.get("classifier.1.weight")!.data,
    );
  });

  it("skips the step counters and reports them", () => {
    const result = exportCheckpoint(makeTestCheckpoint(0, 4));
    expect(result.skipped.length).toBe(52);
    expect(result.skipped.every((n) => n.endsWith(".num_batches_tracked"))).toBe(true);
    for (const name of result.tensors.keys()) {
      expect(name.endsWith(".num_batches_tracked")).toBe(false);
    }
  });

  it("embeds a custom epsilon", () => {
    const result = exportCheckpoint(makeTestCheckpoint(0, 2), { eps: 1e-3 });
    expect(result.tensors.get("bn_eps")!.data[0]).toBeCloseTo(1e-3, 9);
  });

  it("rejects a non-positive epsilon", () => {
    expect(() => exportCheckpoint(makeTestCheckpoint(0, 2), { eps: 0 })).toThrow(/positive/);
    expect(() => exportCheckpoint(makeTestCheckpoint(0, 2), { eps: -1 })).toThrow(/positive/);
  });

  it("rejects a checkpoint without a classifier", () => {
    const ckpt = makeTestCheckpoint(0, 2);
    ckpt.delete("classifier.1.weight");
    expect(() => exportCheckpoint(ckpt)).toThrow(/classifier.1.weight/);
  });

  it("rejects unknown tensors", () => {
    const ckpt = makeTestCheckpoint(0, 2);
    ckpt.set("features.99.weight", { dtype: "F32", shape: [1], data: new Float32Array(1) });
    expect(() => exportCheckpoint(ckpt)).toThrow(/unknown checkpoint tensor features.99.weight/);
  });

  it("rejects a missing tensor and names the source", () => {
    const ckpt = makeTestCheckpoint(0, 2);
    ckpt.delete("features.3.conv.1.0.weight");
    expect(() => exportCheckpoint(ckpt)).toThrow(/missing features.3.conv.1.0.weight/);
  });

  it("rejects a wrong dtype", () => {
    const ckpt = makeTestCheckpoint(0, 2);
    ckpt.set("features.0.1.weight", {
      dtype: "I64",
      shape: [32],
      data: new BigInt64Array(32),
    });
    expect(() => exportCheckpoint(ckpt)).toThrow(/expected F32/);
  });

  it("rejects a wrong shape", () => {
    const ckpt = makeTestCheckpoint(0, 2);
    ckpt.set("features.0.1.bias", { dtype: "F32", shape: [16], data: new Float32Array(16) });
    expect(() => exportCheckpoint(ckpt)).toThrow(/shape/);
  });

  it("survives an archive round trip", () => {
    const result = exportCheckpoint(makeTestCheckpoint(12, 11));
    const got = readMnv2(writeMnv2(result.tensors));
    expect(got.size).toBe(263);
    const w = result.tensors.get("block7.expand.w")!;
    expect(got.get("block7.expand.w")!.data).toEqual(w.data);
    expect(got.get("block7.expand.w")!.shape).toEqual(w.shape);
  });
});
