import { describe, expect, it } from "vitest";

import { makeTestCheckpoint } from "../src/checkpoint.js";
import { buildFixtures, DEFAULT_FIXTURE_SIZES } from "../src/fixtures.js";
import { normalize, resizeBilinear } from "../src/image.js";
import { decodePng } from "../src/png.js";
import { encodePng, testPixels } from "./helpers.js";

const WIDTH = 40;
const HEIGHT = 40;

function png(): Uint8Array {
  return encodePng(WIDTH, HEIGHT, testPixels(WIDTH, HEIGHT, 3), { filters: 1 });
}

describe("buildFixtures", () => {
  it("emits the image, the constants and one record set per size", () => {
    const out = buildFixtures(makeTestCheckpoint(0, 11), png(), [32, 36]);
    expect(out.get("image")!.shape).toEqual([HEIGHT, WIDTH, 3]);
    expect([...out.get("mean")!.data]).toEqual(
      [0.485, 0.456, 0.406].map(Math.fround),
    );
    expect([...out.get("std")!.data]).toEqual([0.229, 0.224, 0.225].map(Math.fround));
    expect([...out.get("sizes")!.data]).toEqual([32, 36]);
    for (const size of [32, 36]) {
      expect(out.get(`s${size}.resized`)!.shape).toEqual([size, size, 3]);
      expect(out.get(`s${size}.input`)!.shape).toEqual([3, size, size]);
      expect(out.get(`s${size}.features`)!.shape).toEqual([1280]);
      expect(out.get(`s${size}.logits`)!.shape).toEqual([11]);
    }
    expect(out.size).toBe(4 + 2 * 4);
  });

  it("stores the decoded pixels verbatim and the preprocessing stages consistently", () => {
    const bytes = png();
    const out = buildFixtures(makeTestCheckpoint(1, 3), bytes, [32]);
    const decoded = decodePng(bytes);
    expect([...out.get("image")!.data]).toEqual([...decoded.pixels]);

    const resized = resizeBilinear(decoded, 32);
    expect([...out.get(`s32.resized`)!.data]).toEqual([...resized.pixels]);
    expect(out.get(`s32.input`)!.data).toEqual(normalize(resized));
  });

  it("produces finite features and logits", () => {
    const out = buildFixtures(makeTestCheckpoint(2, 4), png(), [32]);
    for (const name of ["s32.features", "s32.logits"]) {
      for (const v of out.get(name)!.data) expect(Number.isFinite(v)).toBe(true);
    }
    expect(out.get("s32.logits")!.shape).toEqual([4]);
  });

  it("reports progress per size", () => {
    const lines: string[] = [];
    buildFixtures(makeTestCheckpoint(0, 2), png(), [32], (l) => lines.push(l));
    expect(lines.length).toBe(1);
    expect(lines[0]).toContain("32");
  });

  it("rejects an empty size list", () => {
    expect(() => buildFixtures(makeTestCheckpoint(0, 2), png(), [])).toThrow(/one fixture size/);
  });

  it("defaults to the standard size ladder", () => {
    expect(DEFAULT_FIXTURE_SIZES).toEqual([32, 64, 128, 224, 256]);
  });
});
