/**
 * The .mnv2 weight archive.
 *
 * Layout, all little endian:
 *   magic "MNV2" | u32 format version (1) | u32 tensor count
 *   per tensor: u16 name length, UTF-8 name, u8 ndim (1..8),
 *               u32 per dimension, u64 payload offset
 *   payload: contiguous float32 values
 *
 * The canonical writer emits names in lexicographic order with a
 * gapless payload, so identical tensors always produce identical
 * bytes no matter which implementation wrote them.
 */

export const MNV2_MAGIC = "MNV2";
export const MNV2_VERSION = 1;
const MAX_NDIM = 8;

export interface Mnv2Tensor {
  shape: number[];
  data: Float32Array;
}

function numel(shape: number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}

export function writeMnv2(tensors: Map<string, Mnv2Tensor>): Uint8Array {
  if (tensors.size === 0) throw new Error("mnv2: no tensors to write");
  const names = [...tensors.keys()].sort();
  const encoder = new TextEncoder();

  let tableBytes = 0;
  let payloadBytes = 0;
  const encoded = new Map<string, Uint8Array>();
  for (const name of names) {
    const t = tensors.get(name)!;
    if (name.length === 0) throw new Error("mnv2: empty tensor name");
    if (t.shape.length < 1 || t.shape.length > MAX_NDIM) {
      throw new Error(`mnv2: ${name} has ${t.shape.length} dims, need 1..${MAX_NDIM}`);
    }
    if (t.shape.some((d) => d <= 0 || !Number.isInteger(d))) {
      throw new Error(`mnv2: ${name} has a bad dimension in [${t.shape}]`);
    }
    const count = numel(t.shape);
    if (t.data.length !== count) {
      throw new Error(`mnv2: ${name} holds ${t.data.length} values, shape wants ${count}`);
    }
    for (let i = 0; i < t.data.length; i++) {
      if (!Number.isFinite(t.data[i])) {
        throw new Error(`mnv2: non-finite value in ${name}`);
      }
    }
    const nameBytes = encoder.encode(name);
    if (nameBytes.length > 0xffff) throw new Error(`mnv2: name too long: ${name}`);
    encoded.set(name, nameBytes);
    tableBytes += 2 + nameBytes.length + 1 + 4 * t.shape.length + 8;
    payloadBytes += count * 4;
  }

  const out = new Uint8Array(4 + 4 + 4 + tableBytes + payloadBytes);
  const view = new DataView(out.buffer);
  out.set(encoder.encode(MNV2_MAGIC), 0);
  view.setUint32(4, MNV2_VERSION, true);
  view.setUint32(8, tensors.size, true);

  let pos = 12;
  let offset = 0;
  for (const name of names) {
    const t = tensors.get(name)!;
    const nameBytes = encoded.get(name)!;
    view.setUint16(pos, nameBytes.length, true);
    pos += 2;
    out.set(nameBytes, pos);
    pos += nameBytes.length;
    view.setUint8(pos, t.shape.length);
    pos += 1;
    for (const d of t.shape) {
      view.setUint32(pos, d, true);
      pos += 4;
    }
    view.setBigUint64(pos, BigInt(offset), true);
    pos += 8;
    offset += numel(t.shape) * 4;
  }

  for (const name of names) {
    const t = tensors.get(name)!;
    for (let i = 0; i < t.data.length; i++) {
      view.setFloat32(pos, t.data[i], true);
      pos += 4;
    }
  }
  if (pos !== out.length) throw new Error("mnv2: internal size mismatch");
  return out;
}

/** Parse an archive; used to sanity-check what the writer produced. */
export function readMnv2(buf: Uint8Array): Map<string, Mnv2Tensor> {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const decoder = new TextDecoder("utf-8", { fatal: true });
  if (buf.length < 12 || decoder.decode(buf.subarray(0, 4)) !== MNV2_MAGIC) {
    throw new Error("mnv2: bad magic");
  }
  const version = view.getUint32(4, true);
  if (version !== MNV2_VERSION) throw new Error(`mnv2: unsupported version ${version}`);
  const count = view.getUint32(8, true);

  interface Record0 {
    name: string;
    shape: number[];
    offset: number;
  }
  const records: Record0[] = [];
  let pos = 12;
  for (let i = 0; i < count; i++) {
    if (pos + 2 > buf.length) throw new Error("mnv2: truncated record table");
    const nameLen = view.getUint16(pos, true);
    pos += 2;
    if (pos + nameLen + 1 > buf.length) throw new Error("mnv2: truncated record table");
    const name = decoder.decode(buf.subarray(pos, pos + nameLen));
    pos += nameLen;
    const ndim = view.getUint8(pos);
    pos += 1;
    if (ndim < 1 || ndim > MAX_NDIM) throw new Error(`mnv2: bad ndim for ${name}`);
    if (pos + 4 * ndim + 8 > buf.length) throw new Error("mnv2: truncated record table");
    const shape: number[] = [];
    for (let d = 0; d < ndim; d++) {
      const dim = view.getUint32(pos, true);
      pos += 4;
      if (dim === 0) throw new Error(`mnv2: zero dimension in ${name}`);
      shape.push(dim);
    }
    const offset = Number(view.getBigUint64(pos, true));
    pos += 8;
    records.push({ name, shape, offset });
  }

  const payloadStart = pos;
  const payloadLen = buf.length - payloadStart;
  const out = new Map<string, Mnv2Tensor>();
  for (const r of records) {
    if (out.has(r.name)) throw new Error(`mnv2: duplicate tensor ${r.name}`);
    const count0 = numel(r.shape);
    if (r.offset + count0 * 4 > payloadLen) {
      throw new Error(`mnv2: ${r.name} reaches past the payload`);
    }
    const data = new Float32Array(count0);
    for (let i = 0; i < count0; i++) {
      data[i] = view.getFloat32(payloadStart + r.offset + i * 4, true);
    }
    out.set(r.name, { shape: r.shape, data });
  }
  return out;
}
