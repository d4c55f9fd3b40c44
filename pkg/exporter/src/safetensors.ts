/**
 * Reader and writer for the safetensors container: an 8-byte little
 * endian header length, a JSON header mapping tensor names to
 * {dtype, shape, data_offsets}, then a contiguous payload. Offsets are
 * relative to the payload start. Only F32 and I64 are supported; I64
 * exists so PyTorch batch-norm step counters survive a round trip.
 */

export type Dtype = "F32" | "I64";

export interface TensorEntry {
  dtype: Dtype;
  shape: number[];
  /** F32 tensors hold Float32Array, I64 hold BigInt64Array. */
  data: Float32Array | BigInt64Array;
}

const ITEM_SIZE: Record<Dtype, number> = { F32: 4, I64: 8 };

function numel(shape: number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}

export function readSafetensors(buf: Uint8Array): Map<string, TensorEntry> {
  if (buf.length < 8) throw new Error("safetensors: file too short");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const headerLen = view.getBigUint64(0, true);
  if (headerLen > BigInt(buf.length - 8)) {
    throw new Error(`safetensors: header length ${headerLen} exceeds file`);
  }
  const n = Number(headerLen);
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(new TextDecoder().decode(buf.subarray(8, 8 + n)));
  } catch {
    throw new Error("safetensors: header is not valid JSON");
  }
  const payload = buf.subarray(8 + n);
  const out = new Map<string, TensorEntry>();
  for (const [name, raw] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const info = raw as { dtype: string; shape: number[]; data_offsets: [number, number] };
    const dtype = info.dtype as Dtype;
    if (dtype !== "F32" && dtype !== "I64") {
      throw new Error(`safetensors: unsupported dtype ${info.dtype} for ${name}`);
    }
    const [begin, end] = info.data_offsets;
    const count = numel(info.shape);
    if (begin < 0 || end > payload.length || end - begin !== count * ITEM_SIZE[dtype]) {
      throw new Error(`safetensors: bad data_offsets for ${name}`);
    }
    // copy out so alignment never depends on header length
    const bytes = payload.slice(begin, end);
    const data =
      dtype === "F32"
        ? new Float32Array(bytes.buffer, 0, count)
        : new BigInt64Array(bytes.buffer, 0, count);
    out.set(name, { dtype, shape: [...info.shape], data });
  }
  return out;
}

export function writeSafetensors(
  tensors: Map<string, TensorEntry>,
  metadata?: Record<string, string>,
): Uint8Array {
  const names = [...tensors.keys()].sort();
  const header: Record<string, unknown> = {};
  if (metadata) header["__metadata__"] = metadata;
  let offset = 0;
  for (const name of names) {
    const t = tensors.get(name)!;
    const count = numel(t.shape);
    if (t.data.length !== count) {
      throw new Error(`safetensors: ${name} has ${t.data.length} values, shape wants ${count}`);
    }
    const nbytes = count * ITEM_SIZE[t.dtype];
    header[name] = { dtype: t.dtype, shape: t.shape, data_offsets: [offset, offset + nbytes] };
    offset += nbytes;
  }
  const baseJson = JSON.stringify(header);
  const baseLen = new TextEncoder().encode(baseJson).length;
  const pad = (8 - ((8 + baseLen) % 8)) % 8;
  const headerBytes = new TextEncoder().encode(baseJson + " ".repeat(pad));

  const out = new Uint8Array(8 + headerBytes.length + offset);
  new DataView(out.buffer).setBigUint64(0, BigInt(headerBytes.length), true);
  out.set(headerBytes, 8);
  let pos = 8 + headerBytes.length;
  for (const name of names) {
    const t = tensors.get(name)!;
    out.set(new Uint8Array(t.data.buffer, t.data.byteOffset, t.data.byteLength), pos);
    pos += t.data.byteLength;
  }
  return out;
}
