/**
 * Test-only PNG encoder. Writes valid 8-bit RGB/RGBA non-interlaced
 * files with a chosen scanline filter per row, so every unfilter
 * branch in the decoder gets exercised against independently built
 * bytes. Forward filtering here mirrors the PNG spec directly and
 * shares no code with the decoder.
 */

import { deflateSync } from "node:zlib";

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, data.length, false);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(data, 8);
  view.setUint32(8 + data.length, crc32(out.subarray(4, 8 + data.length)), false);
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

export interface EncodeOptions {
  /** 3 for RGB, 4 for RGBA. */
  channels?: 3 | 4;
  /** Filter type per row; a single number applies to every row. */
  filters?: number | number[];
  /** Split the deflate stream across this many IDAT chunks. */
  idatChunks?: number;
  /** Override IHDR fields to build deliberately unsupported files. */
  bitDepth?: number;
  colorType?: number;
  interlace?: number;
}

export function encodePng(
  width: number,
  height: number,
  pixels: Uint8Array,
  opts: EncodeOptions = {},
): Uint8Array {
  const channels = opts.channels ?? 3;
  if (pixels.length !== width * height * channels) {
    throw new Error("encodePng: pixel buffer size mismatch");
  }
  const filters =
    typeof opts.filters === "number"
      ? new Array(height).fill(opts.filters)
      : opts.filters ?? new Array(height).fill(0);

  const stride = width * channels;
  const raw = new Uint8Array(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    const f = filters[y];
    raw[y * (stride + 1)] = f;
    const rowOut = y * (stride + 1) + 1;
    const row = y * stride;
    const prev = row - stride;
    for (let x = 0; x < stride; x++) {
      const cur = pixels[row + x];
      const left = x >= channels ? pixels[row + x - channels] : 0;
      const up = y > 0 ? pixels[prev + x] : 0;
      const upLeft = y > 0 && x >= channels ? pixels[prev + x - channels] : 0;
      let v: number;
      switch (f) {
        case 0:
          v = cur;
          break;
        case 1:
          v = cur - left;
          break;
        case 2:
          v = cur - up;
          break;
        case 3:
          v = cur - ((left + up) >> 1);
          break;
        case 4:
          v = cur - paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`encodePng: unknown filter ${f}`);
      }
      raw[rowOut + x] = v & 0xff;
    }
  }

  const ihdr = new Uint8Array(13);
  const ihdrView = new DataView(ihdr.buffer);
  ihdrView.setUint32(0, width, false);
  ihdrView.setUint32(4, height, false);
  ihdr[8] = opts.bitDepth ?? 8;
  ihdr[9] = opts.colorType ?? (channels === 3 ? 2 : 6);
  ihdr[10] = 0;
  ihdr[11] = 0;
  ihdr[12] = opts.interlace ?? 0;

  const compressed = new Uint8Array(deflateSync(raw));
  const nIdat = Math.max(1, opts.idatChunks ?? 1);
  const idats: Uint8Array[] = [];
  const step = Math.ceil(compressed.length / nIdat);
  for (let i = 0; i < compressed.length; i += step) {
    idats.push(chunk("IDAT", compressed.subarray(i, i + step)));
  }

  const parts = [
    Uint8Array.from([137, 80, 78, 71, 13, 10, 26, 10]),
    chunk("IHDR", ihdr),
    ...idats,
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((acc, p) => acc + p.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const p of parts) {
    out.set(p, pos);
    pos += p.length;
  }
  return out;
}

/** Deterministic pixel pattern with enough variation to stress filters. */
export function testPixels(width: number, height: number, channels: 3 | 4): Uint8Array {
  const out = new Uint8Array(width * height * channels);
  let i = 0;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      out[i++] = (x * 31 + y * 7) & 0xff;
      out[i++] = (x * 5 + y * 53 + 128) & 0xff;
      out[i++] = (x * x + y * 13) & 0xff;
      if (channels === 4) out[i++] = (x * 11 + y * 17 + 64) & 0xff;
    }
  }
  return out;
}
