/**
 * Minimal PNG decoder: 8-bit RGB or RGBA, non-interlaced, all five
 * scanline filters. Enough to load reference photos for fixture
 * generation without an image dependency. Chunk CRCs are not checked;
 * a corrupt stream fails in inflate or in structure validation.
 */

import { inflateSync } from "node:zlib";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB, 3 bytes per pixel. */
  pixels: Uint8Array;
}

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

export function decodePng(buf: Uint8Array): RgbImage {
  if (buf.length < 8 || SIGNATURE.some((b, i) => buf[i] !== b)) {
    throw new Error("png: bad signature");
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);

  let width = 0;
  let height = 0;
  let channels = 0;
  let sawIhdr = false;
  let sawIend = false;
  const idat: Uint8Array[] = [];

  let pos = 8;
  while (pos + 8 <= buf.length) {
    const length = view.getUint32(pos, false);
    const type = new TextDecoder().decode(buf.subarray(pos + 4, pos + 8));
    const dataStart = pos + 8;
    if (dataStart + length + 4 > buf.length) throw new Error("png: truncated chunk");
    const data = buf.subarray(dataStart, dataStart + length);
    pos = dataStart + length + 4; // skip CRC

    if (type === "IHDR") {
      if (length !== 13) throw new Error("png: bad IHDR length");
      width = view.getUint32(dataStart, false);
      height = view.getUint32(dataStart + 4, false);
      const bitDepth = data[8];
      const colorType = data[9];
      const interlace = data[12];
      if (bitDepth !== 8) throw new Error(`png: unsupported bit depth ${bitDepth}`);
      if (colorType !== 2 && colorType !== 6) {
        throw new Error(`png: unsupported color type ${colorType} (need RGB or RGBA)`);
      }
      if (data[10] !== 0 || data[11] !== 0) throw new Error("png: bad compression/filter method");
      if (interlace !== 0) throw new Error("png: interlaced images not supported");
      channels = colorType === 2 ? 3 : 4;
      sawIhdr = true;
    } else if (type === "IDAT") {
      if (!sawIhdr) throw new Error("png: IDAT before IHDR");
      idat.push(data);
    } else if (type === "IEND") {
      sawIend = true;
      break;
    }
    // ancillary chunks are skipped
  }
  if (!sawIhdr || !sawIend) throw new Error("png: missing IHDR or IEND");
  if (width === 0 || height === 0) throw new Error("png: empty image");
  if (idat.length === 0) throw new Error("png: no image data");

  const compressed = Buffer.concat(idat.map((d) => Buffer.from(d)));
  const raw = inflateSync(compressed);
  const stride = width * channels;
  if (raw.length !== height * (stride + 1)) {
    throw new Error(`png: decompressed size ${raw.length}, expected ${height * (stride + 1)}`);
  }

  const lines = unfilter(raw, height, stride, channels);
  if (channels === 3) {
    return { width, height, pixels: lines };
  }
  const rgb = new Uint8Array(width * height * 3);
  for (let i = 0, j = 0; i < lines.length; i += 4, j += 3) {
    rgb[j] = lines[i];
    rgb[j + 1] = lines[i + 1];
    rgb[j + 2] = lines[i + 2];
  }
  return { width, height, pixels: rgb };
}

function unfilter(raw: Uint8Array, height: number, stride: number, bpp: number): Uint8Array {
  const out = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const src = y * (stride + 1) + 1;
    const dst = y * stride;
    const prev = dst - stride;
    switch (filter) {
      case 0: // None
        out.set(raw.subarray(src, src + stride), dst);
        break;
      case 1: // Sub
        for (let x = 0; x < stride; x++) {
          const left = x >= bpp ? out[dst + x - bpp] : 0;
          out[dst + x] = (raw[src + x] + left) & 0xff;
        }
        break;
      case 2: // Up
        for (let x = 0; x < stride; x++) {
          const up = y > 0 ? out[prev + x] : 0;
          out[dst + x] = (raw[src + x] + up) & 0xff;
        }
        break;
      case 3: // Average
        for (let x = 0; x < stride; x++) {
          const left = x >= bpp ? out[dst + x - bpp] : 0;
          const up = y > 0 ? out[prev + x] : 0;
          out[dst + x] = (raw[src + x] + ((left + up) >> 1)) & 0xff;
        }
        break;
      case 4: // Paeth
        for (let x = 0; x < stride; x++) {
          const left = x >= bpp ? out[dst + x - bpp] : 0;
          const up = y > 0 ? out[prev + x] : 0;
          const upLeft = y > 0 && x >= bpp ? out[prev + x - bpp] : 0;
          out[dst + x] = (raw[src + x] + paeth(left, up, upLeft)) & 0xff;
        }
        break;
      default:
        throw new Error(`png: unknown filter type ${filter} on row ${y}`);
    }
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}
