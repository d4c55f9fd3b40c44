import { describe, expect, it } from "vitest";

import { torchvisionNameMap } from "../src/blocks.js";
import { makeTestCheckpoint } from "../src/checkpoint.js";
import { writeSafetensors } from "../src/safetensors.js";

describe("makeTestCheckpoint", () => {
  it("has the full state-dict inventory: 262 tensors plus 52 counters", () => {
    const ckpt = makeTestCheckpoint(0, 11);
    expect(ckpt.size).toBe(314);
    const counters = [...ckpt.keys()].filter((n) => n.endsWith(".num_batches_tracked"));
    expect(counters.length).toBe(52);
    for (const name of counters) {
      const t = ckpt.get(name)!;
      expect(t.dtype).toBe("I64");
      expect(t.shape).toEqual([]);
      expect((t.data as BigInt64Array)[0]).toBe(100n);
    }
  });

  it("matches the mapped shapes", () => {
    const ckpt = makeTestCheckpoint(0, 5);
    for (const [source, { shape }] of torchvisionNameMap(5)) {
      const t = ckpt.get(source)!;
      expect(t.dtype).toBe("F32");
      expect(t.shape).toEqual(shape);
    }
  });

  it("writes identical bytes for the same seed", () => {
    const a = writeSafetensors(makeTestCheckpoint(42, 11));
    const b = writeSafetensors(makeTestCheckpoint(42, 11));
    expect(Buffer.compare(Buffer.from(a), Buffer.from(b))).toBe(0);
  });

  it("differs between seeds", () => {
    const a = makeTestCheckpoint(1, 11).get("features.0.0.weight")!.data as Float32Array;
    const b = makeTestCheckpoint(2, 11).get("features.0.0.weight")!.data as Float32Array;
    let same = 0;
    for (let i = 0; i < a.length; i++) if (a[i] === b[i]) same++;
    expect(same).toBeLessThan(a.length / 100);
  });

  it("keeps batch-norm variances in a safe range", () => {
    const ckpt = makeTestCheckpoint(3, 11);
    for (const [name, t] of ckpt) {
      if (!name.endsWith(".running_var")) continue;
      for (const v of t.data as Float32Array) {
        expect(v).toBeGreaterThanOrEqual(0.5);
        expect(v).toBeLessThan(2.0);
      }
    }
  });

  it("scales conv weights by fan-in", () => {
    const ckpt = makeTestCheckpoint(4, 11);
    // stem: 3x3 over 3 channels, fan_in 27
    const stem = ckpt.get("features.0.0.weight")!.data as Float32Array;
    const stemBound = 1 / Math.sqrt(27);
    for (const v of stem) expect(Math.abs(v)).toBeLessThanOrEqual(stemBound);
    // depthwise: 3x3 over 1 channel, fan_in 9
    const dw = ckpt.get("features.1.conv.0.0.weight")!.data as Float32Array;
    for (const v of dw) expect(Math.abs(v)).toBeLessThanOrEqual(1 / 3);
    let maxAbs = 0;
    for (const v of dw) maxAbs = Math.max(maxAbs, Math.abs(v));
    // the bound should actually be used, not just respected
    expect(maxAbs).toBeGreaterThan(stemBound);
  });

  it("keeps gamma around one", () => {
    const ckpt = makeTestCheckpoint(5, 11);
    const gamma = ckpt.get("features.0.1.weight")!.data as Float32Array;
    for (const v of gamma) {
      expect(v).toBeGreaterThanOrEqual(0.9);
      expect(v).toBeLessThan(1.1);
    }
  });

  it("rejects a classifier narrower than two classes", () => {
    expect(() => makeTestCheckpoint(0, 1)).toThrow(/at least 2 classes/);
  });
});
